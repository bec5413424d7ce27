#pragma once
// Event-driven simulation of the hybrid closed loop, schedules, and the DISS check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "spncs/bounds.hpp"
#include "spncs/model.hpp"
#include "spncs/numerics.hpp"
#include "spncs/protocols.hpp"

namespace spncs {

struct SetViolation : Error {
    using Error::Error;
};

// ---------------------------------------------------------------- signals

struct SignalSpec {
    enum class Kind { zero, constant, ramp, sinusoid };
    Kind kind = Kind::zero;
    double c = 0;          // constant value
    double a = 0, b = 0;   // ramp a t + b
    double A = 0, w = 0;   // sinusoid A sin(w t)

    static SignalSpec zero() { return {}; }
    static SignalSpec constant(double v) { return {Kind::constant, v, 0, 0, 0, 0}; }
    static SignalSpec ramp(double slope, double offset) { return {Kind::ramp, 0, slope, offset, 0, 0}; }
    static SignalSpec sinusoid(double amp, double omega) { return {Kind::sinusoid, 0, 0, 0, amp, omega}; }

    double value(double t) const {
        switch (kind) {
            case Kind::zero: return 0.0;
            case Kind::constant: return c;
            case Kind::ramp: return a * t + b;
            case Kind::sinusoid: return A * std::sin(w * t);
        }
        return 0.0;
    }
    double deriv(double t) const {
        switch (kind) {
            case Kind::zero:
            case Kind::constant: return 0.0;
            case Kind::ramp: return a;
            case Kind::sinusoid: return A * w * std::cos(w * t);
        }
        return 0.0;
    }
};

using VectorSignal = std::vector<SignalSpec>;

inline Vector eval_signal(const VectorSignal& s, double t) {
    Vector v(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) v[i] = s[i].value(t);
    return v;
}
inline Vector eval_deriv(const VectorSignal& s, double t) {
    Vector v(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) v[i] = s[i].deriv(t);
    return v;
}

struct Signals {
    VectorSignal u_s, v1, v2;

    static Signals zeros(const PlantParams& p) {
        return {VectorSignal(p.nu()), VectorSignal(p.nys()), VectorSignal(p.nyf())};
    }
    FlowInputs at(double t) const {
        return {eval_signal(u_s, t), eval_deriv(u_s, t), eval_signal(v1, t), eval_signal(v2, t), eval_deriv(v1, t),
                eval_deriv(v2, t)};
    }
};

// ---------------------------------------------------------------- schedules

enum class Channel { slow, fast };

inline const char* to_string(Channel c) { return c == Channel::slow ? "slow" : "fast"; }

struct SchedulePolicy {
    enum class Mode { periodic, uniform_random };
    Mode mode = Mode::periodic;
    double tau_mati_s = 0, tau_miati_s = 0, tau_mati_f = 0, tau_miati_f = 0;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(tau_miati_f > 0 && tau_miati_f <= 0.5 * tau_mati_f))
            throw InvalidConfig("schedule: need 0 < tau_miati_f <= tau_mati_f / 2");
        if (!(tau_miati_s > 0 && tau_miati_s <= tau_mati_s)) throw InvalidConfig("schedule: need 0 < tau_miati_s <= tau_mati_s");
        if (!(tau_mati_s >= std::max(tau_miati_s, tau_miati_f) + 2 * tau_miati_f))
            throw InvalidConfig("schedule: tau_mati_s too small for the fast separation");
    }
};

struct ScheduledEvent {
    double t;
    Channel channel;
};

/// Transmission instants on (0, horizon], satisfying the per-channel gap bounds and the
/// cross-channel separation tau_miati_f (t = 0 counts as a transmission of both channels).
inline std::vector<ScheduledEvent> generate_schedule(const SchedulePolicy& pol, double horizon) {
    pol.validate();
    std::vector<ScheduledEvent> out;
    if (horizon < pol.tau_miati_f) return out;
    std::mt19937_64 rng(pol.seed);
    const double end = horizon + pol.tau_mati_s + pol.tau_mati_f;

    std::vector<double> fast{0.0};
    const double sep = pol.tau_miati_f;
    if (pol.mode == SchedulePolicy::Mode::periodic) {
        for (std::size_t k = 1; static_cast<double>(k) * pol.tau_mati_f <= end; ++k)
            fast.push_back(static_cast<double>(k) * pol.tau_mati_f);
    } else {
        // fast gaps of at least 2 sep leave room for a slow transmission between any two
        std::uniform_real_distribution<double> uf(2.0 * sep, pol.tau_mati_f);
        while (fast.back() <= end) fast.push_back(fast.back() + uf(rng));
    }

    const double inside = sep * (1.0 - 1e-9);
    auto conflict = [&](double t) -> const double* {
        auto it = std::lower_bound(fast.begin(), fast.end(), t - sep);
        for (; it != fast.end() && *it < t + sep; ++it)
            if (std::abs(*it - t) < inside) return &*it;
        return nullptr;
    };

    const double lo = std::max(pol.tau_miati_s, sep);
    std::uniform_real_distribution<double> us(lo, pol.tau_mati_s);
    std::vector<double> slow;
    double prev = 0.0;
    while (prev <= horizon) {
        const double cand = prev + (pol.mode == SchedulePolicy::Mode::periodic ? pol.tau_mati_s : us(rng));
        const double deadline = prev + pol.tau_mati_s, earliest = prev + lo;
        double t = cand;
        if (const double* f = conflict(cand)) {
            const double right = *f + sep, left = *f - sep;
            const bool r_ok = right <= deadline + 1e-12, l_ok = left >= earliest - 1e-12;
            if (r_ok) t = right;
            else if (l_ok) t = left;  // forward shift would miss the deadline
            else throw InfeasibleSchedule("no legal slow transmission time");
        }
        slow.push_back(t);
        prev = t;
    }

    for (double t : fast)
        if (t > 0 && t <= horizon) out.push_back({t, Channel::fast});
    for (double t : slow)
        if (t > 0 && t <= horizon) out.push_back({t, Channel::slow});
    std::sort(out.begin(), out.end(), [](const ScheduledEvent& a, const ScheduledEvent& b) { return a.t < b.t; });
    return out;
}

struct ScheduleCheck {
    std::size_t violations = 0;
    double min_cross_gap = std::numeric_limits<double>::infinity();
    bool ok() const { return violations == 0; }
};

/// Verifies gap bounds on the generated instants (the last gap to the horizon is only bounded above).
inline ScheduleCheck check_schedule(const std::vector<ScheduledEvent>& ev, const SchedulePolicy& pol, double horizon) {
    ScheduleCheck c;
    const double tol = 1e-9;
    double last_s = 0, last_f = 0, last_any = 0;
    for (const auto& e : ev) {
        const double gap_any = e.t - last_any;
        if (e.channel == Channel::slow) {
            const double g = e.t - last_s;
            if (g < pol.tau_miati_s - tol || g > pol.tau_mati_s + tol) ++c.violations;
            last_s = e.t;
        } else {
            const double g = e.t - last_f;
            if (g < pol.tau_miati_f - tol || g > pol.tau_mati_f + tol) ++c.violations;
            last_f = e.t;
        }
        c.min_cross_gap = std::min(c.min_cross_gap, gap_any);
        if (gap_any < pol.tau_miati_f - tol) ++c.violations;
        last_any = e.t;
    }
    if (horizon - last_s > pol.tau_mati_s + tol) ++c.violations;
    if (horizon - last_f > pol.tau_mati_f + tol) ++c.violations;
    return c;
}

// ---------------------------------------------------------------- trajectories

struct TrajectorySample {
    double t;
    std::uint64_t j;
    Vector state;
    bool at_jump;  // sample taken immediately before or after a jump
};

struct EventRecord {
    double t;
    Channel channel;
    std::size_t node;
    std::uint64_t kappa;  // counter value after the jump
};

struct HybridTrajectory {
    StateLayout layout;
    std::vector<TrajectorySample> samples;
    std::vector<EventRecord> events;
};

inline double distance_to_attractor(const StateLayout& L, const Vector& s) {
    double acc = 0.0;
    for (auto b : {StateLayout::dx, StateLayout::e_ys, StateLayout::e_us, StateLayout::dy, StateLayout::e_f})
        for (std::size_t i = 0; i < L.len[b]; ++i) acc += s[L.off[b] + i] * s[L.off[b] + i];
    return std::sqrt(acc);
}

struct InitialConditions {
    Vector x_p, z_p, x_o, z_o;
};

/// Full initial state with fresh transmissions at t = 0 (all network errors zero).
inline Vector initial_state(const FlowModel& m, const InitialConditions& ic, const Signals& sig) {
    using L = StateLayout;
    const StateLayout& lay = m.layout();
    Vector s(lay.size, 0.0);
    Vector dx = ic.x_o, dz = ic.z_o;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= ic.x_p[i];
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] -= ic.z_p[i];
    lay.put(s, L::dx, dx);
    lay.put(s, L::x_p, ic.x_p);
    lay.put(s, L::z_p, ic.z_p);
    lay.put(s, L::vhat1, eval_signal(sig.v1, 0.0));
    lay.put(s, L::vhat2, eval_signal(sig.v2, 0.0));
    lay.put(s, L::dy, delta_y_shift(dz, m.hbar_at(s)));
    return s;
}

struct SimOptions {
    double step_divisor = 1.0;    // 2 halves every step
    std::size_t record_stride = 10;
    bool check_sets = true;
};

/// Integrates the hybrid system over [0, horizon] along a fixed event list.
inline HybridTrajectory simulate(const FlowModel& m, ProtocolState proto_s, ProtocolState proto_f,
                                 const SchedulePolicy& pol, const std::vector<ScheduledEvent>& events,
                                 const Signals& sig, const Vector& x0, double horizon, const SimOptions& opt = {}) {
    using L = StateLayout;
    const StateLayout& lay = m.layout();
    const PlantParams& p = m.plant();
    const double eps = p.epsilon;
    const std::size_t nys = p.nys();
    if (x0.size() != lay.size) throw InvalidInput("simulate: initial state has wrong length");
    if (proto_s.partition.total() != nys + p.nu()) throw InvalidConfig("simulate: slow partition must cover (y_s, u_s)");
    if (proto_f.partition.total() != p.nyf()) throw InvalidConfig("simulate: fast partition must cover y_f");
    for (std::size_t k = 0, o = 0; proto_s.kind != ProtocolKind::zeroing && k < proto_s.partition.nodes();
         o += proto_s.partition.dims[k], ++k)
        if (o < nys && o + proto_s.partition.dims[k] > nys)
            throw InvalidConfig("simulate: slow node straddles the output/input boundary");

    HybridTrajectory tr;
    tr.layout = lay;
    const double hmax = std::min(eps / 50.0, pol.tau_miati_f / 20.0) / opt.step_divisor;
    const double stol = 1e-9;
    auto check_flow = [&](const Vector& s) {
        if (!opt.check_sets) return;
        if (s[lay.off[L::tau_s]] > pol.tau_mati_s + stol || eps * s[lay.off[L::tau_f]] > pol.tau_mati_f + stol)
            throw SetViolation("state left the flow set");
    };

    Vector s = x0;
    double t = 0.0;
    std::uint64_t j = 0;
    tr.samples.push_back({t, j, s, false});
    auto field = [&](double tt, const Vector& x) { return m(x, sig.at(tt)); };

    std::size_t step_count = 0;
    auto flow_to = [&](double t_end) {
        const double gap = t_end - t;
        if (gap <= 0) return;
        const std::size_t n = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(gap / hmax - 1e-9)));
        const double h = gap / static_cast<double>(n);
        const double t0 = t;
        for (std::size_t i = 0; i < n; ++i) {
            s = rk4_step(field, s, t0 + i * h, h);
            t = (i + 1 == n) ? t_end : t0 + (i + 1) * h;
            check_flow(s);
            if (++step_count % opt.record_stride == 0 && i + 1 != n) tr.samples.push_back({t, j, s, false});
        }
    };

    for (const auto& ev : events) {
        if (ev.t > horizon) break;
        flow_to(ev.t);
        tr.samples.push_back({t, j, s, true});
        const double ts = s[lay.off[L::tau_s]], tf = eps * s[lay.off[L::tau_f]];
        if (ev.channel == Channel::slow) {
            if (opt.check_sets && (ts < pol.tau_miati_s - stol || ts > pol.tau_mati_s + stol ||
                                   tf < pol.tau_miati_f - stol || tf > pol.tau_mati_f - pol.tau_miati_f + stol))
                throw SetViolation("slow jump outside its jump set");
            const Vector hb = m.hbar_at(s);
            Vector meas = lay.get(s, L::et_ps);
            const Vector eus = lay.get(s, L::e_us);
            meas.insert(meas.end(), eus.begin(), eus.end());
            const std::size_t node = select_node(proto_s, proto_s.counter, meas);
            std::size_t lo = 0, hi = nys + p.nu();
            if (proto_s.kind != ProtocolKind::zeroing) {
                lo = proto_s.partition.offset(node);
                hi = lo + proto_s.partition.dims[node];
            }
            const Vector v1 = eval_signal(sig.v1, t);
            for (std::size_t i = lo; i < hi; ++i) {
                if (i < nys) {
                    s[lay.off[L::et_ps] + i] = 0.0;
                    s[lay.off[L::e_ys] + i] = 0.0;
                    s[lay.off[L::vhat1] + i] = v1[i];
                } else {
                    s[lay.off[L::e_us] + (i - nys)] = 0.0;
                }
            }
            const Vector ha = m.hbar_at(s);
            for (std::size_t i = 0; i < hb.size(); ++i) s[lay.off[L::dy] + i] += hb[i] - ha[i];
            s[lay.off[L::tau_s]] = 0.0;
            s[lay.off[L::kappa_s]] += 1.0;
            ++proto_s.counter;
            tr.events.push_back({t, Channel::slow, node, proto_s.counter});
        } else {
            if (opt.check_sets && (tf < pol.tau_miati_f - stol || tf > pol.tau_mati_f + stol ||
                                   ts < pol.tau_miati_f - stol || ts > pol.tau_mati_s - pol.tau_miati_f + stol))
                throw SetViolation("fast jump outside its jump set");
            const Vector meas = lay.get(s, L::et_pf);
            const std::size_t node = select_node(proto_f, proto_f.counter, meas);
            std::size_t lo = 0, hi = p.nyf();
            if (proto_f.kind != ProtocolKind::zeroing) {
                lo = proto_f.partition.offset(node);
                hi = lo + proto_f.partition.dims[node];
            }
            const Vector v2 = eval_signal(sig.v2, t);
            for (std::size_t i = lo; i < hi; ++i) {
                s[lay.off[L::et_pf] + i] = 0.0;
                s[lay.off[L::e_f] + i] = 0.0;
                s[lay.off[L::vhat2] + i] = v2[i];
            }
            s[lay.off[L::tau_f]] = 0.0;
            s[lay.off[L::kappa_f]] += 1.0;
            ++proto_f.counter;
            tr.events.push_back({t, Channel::fast, node, proto_f.counter});
        }
        ++j;
        tr.samples.push_back({t, j, s, true});
    }
    flow_to(horizon);
    if (tr.samples.back().t != t || tr.samples.back().j != j) tr.samples.push_back({t, j, s, false});
    return tr;
}

// ---------------------------------------------------------------- norms and DISS

struct SignalSample {
    double t;
    std::uint64_t j;
    double value;
};

/// Sup of |value| over samples with (t, j) lexicographically <= upto.
inline double hybrid_sup_norm(const std::vector<SignalSample>& samples, double t_upto, std::uint64_t j_upto) {
    double m = 0.0;
    for (const auto& s : samples)
        if (s.t < t_upto || (s.t == t_upto && s.j <= j_upto)) m = std::max(m, std::abs(s.value));
    return m;
}

/// Norm samples of a vector signal (or of its derivative) along the trajectory.
inline std::vector<SignalSample> signal_samples(const HybridTrajectory& tr, const VectorSignal& sig, bool derivative) {
    std::vector<SignalSample> out;
    out.reserve(tr.samples.size());
    for (const auto& s : tr.samples)
        out.push_back({s.t, s.j, norm(derivative ? eval_deriv(sig, s.t) : eval_signal(sig, s.t))});
    return out;
}

/// Mean of |xi|_E over samples in the final `fraction` of the horizon.
inline double empirical_ultimate_bound(const HybridTrajectory& tr, double horizon, double fraction = 0.2) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& s : tr.samples)
        if (s.t >= (1.0 - fraction) * horizon) {
            acc += distance_to_attractor(tr.layout, s.state);
            ++n;
        }
    return n ? acc / static_cast<double>(n) : 0.0;
}

struct DissReport {
    bool holds = true;
    double min_margin = std::numeric_limits<double>::infinity();
    std::size_t violations = 0, samples = 0;
    double k_overshoot = 0, rate = 0;
    std::vector<std::string> precondition_errors;
};

struct DissPreconditions {
    double epsilon = 0, tau_mati_s = 0, tau_mati_f = 0;
};

inline DissReport check_diss(const HybridTrajectory& tr, const ConstantsLedger& led, const Signals& sig,
                             double k_overshoot, double rate, const DissPreconditions& pre) {
    DissReport r;
    r.k_overshoot = k_overshoot;
    r.rate = rate;
    if (!(pre.epsilon <= led.epsilon_star))
        r.precondition_errors.push_back("epsilon exceeds epsilon_star");
    if (!(pre.tau_mati_s < led.T_s)) r.precondition_errors.push_back("tau_mati_s not below T(L_s, gamma_s, lambda_s)");
    if (!(pre.tau_mati_f <= pre.epsilon * led.T_star)) r.precondition_errors.push_back("tau_mati_f exceeds epsilon T*");
    const double xi0 = distance_to_attractor(tr.layout, tr.samples.front().state);
    double sv1 = 0, sv2 = 0, sdu = 0;
    for (const auto& s : tr.samples) {
        sv1 = std::max(sv1, norm(eval_signal(sig.v1, s.t)));
        sv2 = std::max(sv2, norm(eval_signal(sig.v2, s.t)));
        sdu = std::max(sdu, norm(eval_deriv(sig.u_s, s.t)));
        const double lhs = distance_to_attractor(tr.layout, s.state);
        const double env = k_overshoot * xi0 * std::exp(-rate * (s.t + static_cast<double>(s.j)));
        double rhs = (xi0 > 0 ? env : 0.0);
        for (auto [g, v] : {std::pair{led.gamma_v1, sv1}, std::pair{led.gamma_v2, sv2}, std::pair{led.gamma_dus, sdu}})
            if (v > 0) rhs += g * v;
        const double margin = rhs - lhs;
        r.min_margin = std::min(r.min_margin, margin);
        if (margin < 0) ++r.violations;
        ++r.samples;
    }
    r.holds = r.violations == 0;
    return r;
}

// ---------------------------------------------------------------- export

inline void write_trajectory_csv(std::ostream& os, const HybridTrajectory& tr) {
    os << "t,j";
    for (const auto& n : tr.layout.names()) os << ',' << n;
    os << ",dist_to_E\n";
    os << std::setprecision(17);
    for (const auto& s : tr.samples) {
        os << s.t << ',' << s.j;
        for (double x : s.state) os << ',' << x;
        os << ',' << distance_to_attractor(tr.layout, s.state) << '\n';
    }
}

inline void write_events_csv(std::ostream& os, const HybridTrajectory& tr) {
    os << "t,channel,node,kappa\n" << std::setprecision(17);
    for (const auto& e : tr.events) os << e.t << ',' << to_string(e.channel) << ',' << e.node << ',' << e.kappa << '\n';
}

}  // namespace spncs
