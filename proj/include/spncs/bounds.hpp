#pragma once
// MATI bound T(L, gamma, lambda), the phi_s timer function and the constants pipeline
// ending in eps*, the fast MATI and the DISS gains.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spncs/design.hpp"
#include "spncs/model.hpp"
#include "spncs/numerics.hpp"
#include "spncs/protocols.hpp"

namespace spncs {

// ---------------------------------------------------------------- T and phi

/// Upper bound on the MATI for growth rate L, L2 gain gamma and protocol contraction lambda.
inline double t_bound(double L, double gamma, double lambda) {
    if (!(lambda >= 0.0 && lambda < 1.0)) throw InvalidInput("t_bound: lambda must lie in [0,1)");
    if (!(gamma > 0.0)) throw InvalidInput("t_bound: gamma must be positive");
    if (!(L >= 0.0)) throw InvalidInput("t_bound: L must be non-negative");
    if (L == 0.0) return (std::atan(1.0 / lambda) - std::atan(lambda)) / gamma;
    const double q = gamma / L;
    if (std::abs(q - 1.0) < 1e-12) return (1.0 - lambda) / (L * (1.0 + lambda));
    const double r1 = std::sqrt(std::abs(q * q - 1.0));
    const double r2 = r1 * (1.0 - lambda) / (2.0 * (lambda / (1.0 + lambda)) * (q - 1.0) + 1.0 + lambda);
    if (q > 1.0) return std::atan(r2) / (L * r1);
    return std::atanh(r2) / (L * r1);
}

/// Time for psi' = -2 L psi - g (psi^2 + 1) to decrease from `from` to `to` (from > to > 0).
inline double riccati_transit_time(double L, double g, double from, double to) {
    if (!(g > 0.0) || !(from > to)) throw InvalidInput("riccati_transit_time: invalid arguments");
    // integral of dpsi / (g[(psi + c)^2 + 1 - c^2]) with c = L/g
    const double c = L / g;
    const double k = 1.0 - c * c;
    if (std::abs(k) < 1e-14) return (1.0 / (to + c) - 1.0 / (from + c)) / g;
    if (k > 0) {
        const double r = std::sqrt(k);
        return (std::atan((from + c) / r) - std::atan((to + c) / r)) / (g * r);
    }
    const double r = std::sqrt(-k);
    auto F = [&](double p) { return std::log(std::abs((p + c - r) / (p + c + r))) / (2.0 * r); };
    return (F(from) - F(to)) / g;
}

/// Transit time of phi' = -2 L phi - gamma((1+eta) phi^2 + 1) from 1/lambda_star down to lambda_star.
inline double phi_transit_time(double L, double gamma, double eta, double lambda_star) {
    const double s = std::sqrt(1.0 + eta);
    return riccati_transit_time(L, gamma * s, s / lambda_star, s * lambda_star);
}

struct PhiSamples {
    Vector t, phi;
    /// Linear interpolation of phi at time tt.
    double at(double tt) const {
        if (tt <= t.front()) return phi.front();
        if (tt >= t.back()) return phi.back();
        const auto it = std::upper_bound(t.begin(), t.end(), tt);
        const std::size_t i = static_cast<std::size_t>(it - t.begin());
        const double w = (tt - t[i - 1]) / (t[i] - t[i - 1]);
        return phi[i - 1] + w * (phi[i] - phi[i - 1]);
    }
    /// First time phi reaches `level` (linear interpolation); +inf if not reached.
    double crossing(double level) const {
        for (std::size_t i = 1; i < phi.size(); ++i)
            if (phi[i] <= level) {
                const double w = (phi[i - 1] - level) / (phi[i - 1] - phi[i]);
                return t[i - 1] + w * (t[i] - t[i - 1]);
            }
        return std::numeric_limits<double>::infinity();
    }
};

/// RK4 solution of phi' = -2 L phi - gamma((1+eta) phi^2 + 1), phi(0) = 1/lambda_star.
inline PhiSamples solve_phi(double L, double gamma, double eta, double lambda_star, double horizon,
                            std::size_t steps = 10000) {
    if (!(horizon > 0.0) || !(lambda_star > 0.0 && lambda_star <= 1.0) || steps < 1)
        throw InvalidInput("solve_phi: invalid arguments");
    auto f = [&](double, const Vector& x) { return Vector{-2.0 * L * x[0] - gamma * ((1.0 + eta) * x[0] * x[0] + 1.0)}; };
    PhiSamples s;
    s.t.reserve(steps + 1);
    s.phi.reserve(steps + 1);
    Vector x{1.0 / lambda_star};
    const double h = horizon / static_cast<double>(steps);
    s.t.push_back(0.0);
    s.phi.push_back(x[0]);
    for (std::size_t k = 0; k < steps; ++k) {
        x = rk4_step(f, x, k * h, h);
        if (!(x[0] < s.phi.back())) throw NumericalBlowup("solve_phi: solution not decreasing");
        s.t.push_back((k + 1) * h);
        s.phi.push_back(x[0]);
    }
    return s;
}

struct SlowTimingCert {
    double tau_mati_s = 0, tau_miati_s = 0, lambda_s_star = 0;
    double eta_s1 = 0, eta_s2 = 0, eta_s3 = 0;
    double lambda_f_star = 0;
    double eta_s() const { return eta_s1 + eta_s2 + eta_s3; }
};

struct SlowTimingCheck {
    double T_s = 0;            // T(L_s, gamma_s, lambda_s)
    double transit = 0;        // closed-form time for phi_s to reach lambda_s*
    double phi_at_mati = 0;    // RK4 value of phi_s(tau_mati_s)
    bool mati_below_T = false;
    bool lambda_star_range = false;
    bool phi_ok = false;
    bool ok() const { return mati_below_T && lambda_star_range && phi_ok; }
};

inline SlowTimingCheck check_slow_timing(double L_s, double gamma_s, double lambda_s, const SlowTimingCert& tc,
                                bool with_rk4 = true) {
    SlowTimingCheck c;
    c.T_s = t_bound(L_s, gamma_s, lambda_s);
    c.mati_below_T = tc.tau_miati_s <= tc.tau_mati_s && tc.tau_mati_s < c.T_s;
    c.lambda_star_range = tc.lambda_s_star > lambda_s && tc.lambda_s_star < 1.0;
    if (!c.lambda_star_range) return c;
    c.transit = phi_transit_time(L_s, gamma_s, tc.eta_s(), tc.lambda_s_star);
    if (!with_rk4) {
        c.phi_at_mati = std::numeric_limits<double>::quiet_NaN();
        c.phi_ok = c.transit >= tc.tau_mati_s;
        return c;
    }
    const PhiSamples ph = solve_phi(L_s, gamma_s, tc.eta_s(), tc.lambda_s_star, tc.tau_mati_s);
    c.phi_at_mati = ph.phi.back();
    c.phi_ok = c.phi_at_mati >= tc.lambda_s_star && ph.phi.front() <= 1.0 / tc.lambda_s_star + 1e-12;
    return c;
}

// ---------------------------------------------------------------- context

/// \brief Everything the constants pipeline reads about a design.
struct BoundsContext {
    PlantParams plant;
    ObserverGains gains;
    FastBlocks fast;
    HbarCoeffs hbar;
    ReducedBlocks reduced;
    GrowthConstants growth;
    ProtocolState proto_s, proto_f;  // slow protocol acts on e_s = (e_ys, e_us)
    ProtocolCertificate cert_s, cert_f;
    LmiSide side_s, side_f;

    static BoundsContext make(const PlantParams& p, const DesignResult& d, const ProtocolState& ps,
                              const ProtocolState& pf, const ProtocolCertificate& cs, const ProtocolCertificate& cf) {
        if (!d.fast || !d.reduced) throw InvalidInput("bounds: design lacks one of the two LMI sides");
        BoundsContext c;
        c.plant = p;
        c.gains = d.gains;
        c.fast = build_fast_blocks(p, d.gains);
        c.hbar = build_hbar(p, d.gains, c.fast);
        c.reduced = build_reduced_blocks(p, d.gains, c.fast);
        c.growth = growth_constants(c.fast, c.reduced, cs, cf);
        c.proto_s = ps;
        c.proto_f = pf;
        c.cert_s = cs;
        c.cert_f = cf;
        c.side_s = *d.reduced;
        c.side_f = *d.fast;
        return c;
    }

    /// [Ge Gu]: effect of e_s on Hbar.
    Matrix Gs() const { return hstack(hbar.Ge, hbar.Gu); }
    /// [A12 - L1f C2f, L1f]: coupling of (dy, e_f) into f_dx.
    Matrix E() const { return hstack(plant.A12 - gains.L1f * plant.C2f, gains.L1f); }
    /// [Ar11 Ar12 Ar13]: coupling of (dx, e_s) into f_dx.
    Matrix S() const { return hstack(reduced.As11, reduced.As12); }
    std::size_t nes() const { return plant.nys() + plant.nu(); }

    /// Index ranges of e_s reset by each node (all of e_s for zeroing).
    std::vector<std::pair<std::size_t, std::size_t>> slow_node_ranges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        if (proto_s.kind == ProtocolKind::zeroing) {
            out.push_back({0, nes()});
            return out;
        }
        for (std::size_t k = 0; k < proto_s.partition.nodes(); ++k) {
            const std::size_t o = proto_s.partition.offset(k);
            out.push_back({o, o + proto_s.partition.dims[k]});
        }
        return out;
    }
};

// ---------------------------------------------------------------- envelopes

struct Envelopes {
    double aVs_lower = 0, aVs_upper = 0, aVf_lower = 0, aVf_upper = 0;
    double aU_lower_s = 0, aU_upper_s = 0, aU_lower_f = 0, aU_upper_f = 0;
    double a_s = 0, a_f = 0;
};

inline Envelopes lyapunov_envelopes(const LmiSide& s, const LmiSide& f, const ProtocolCertificate& cs,
                                    const ProtocolCertificate& cf, const SlowTimingCert& tc) {
    Envelopes e;
    const EigSpectrum es = sym_eigvals(s.P), ef = sym_eigvals(f.P);
    e.aVs_lower = es.min();
    e.aVs_upper = es.max();
    e.aVf_lower = ef.min();
    e.aVf_upper = ef.max();
    e.aU_lower_s = std::min(e.aVs_lower, s.gamma * tc.lambda_s_star * cs.aW_lower * cs.aW_lower);
    e.aU_upper_s = std::max(e.aVs_upper, s.gamma * cs.aW_upper * cs.aW_upper / tc.lambda_s_star);
    e.aU_lower_f = std::min(e.aVf_lower, f.gamma * tc.lambda_f_star * cf.aW_lower * cf.aW_lower);
    e.aU_upper_f = std::max(e.aVf_upper, f.gamma * cf.aW_upper * cf.aW_upper / tc.lambda_f_star);
    e.a_s = s.a_rho * std::min(1.0, cs.aW_lower * cs.aW_lower);
    e.a_f = f.a_rho * std::min(1.0, cf.aW_lower * cf.aW_lower);
    return e;
}

// ---------------------------------------------------------------- slow-jump lambdas

struct JumpLambdas {
    std::array<double, 5> lambda{};
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    double margin = 0.0;
    std::string method;
};

namespace detail {

/// Deterministic per-chunk random stream: results do not depend on how chunks are scheduled.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t chunk) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(chunk), static_cast<std::uint32_t>(chunk >> 32), 0x5eedu};
    return std::mt19937_64(sq);
}

/// Unit-sphere direction scaled by 10^U(-2, 2).
inline Vector sphere_sample(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> dec(-2.0, 2.0);
    Vector v(n);
    double s = 0.0;
    do {
        for (auto& x : v) x = n01(rng);
        s = norm(v);
    } while (s == 0.0);
    const double m = std::pow(10.0, dec(rng));
    for (auto& x : v) x *= m / s;
    return v;
}

inline double quad(const Vector& a, const Matrix& P, const Vector& b) { return dot(a, P * b); }

/// Per-node pieces of the slow-jump shift Delta = X e_s + Y w, w = vhat1 - v1.
struct JumpPieces {
    Matrix X, Y;
};

inline std::vector<JumpPieces> jump_pieces(const BoundsContext& c) {
    std::vector<JumpPieces> out;
    const Matrix Gs = c.Gs();
    const std::size_t nys = c.plant.nys();
    for (auto [lo, hi] : c.slow_node_ranges()) {
        JumpPieces p{Matrix(Gs.rows(), Gs.cols()), Matrix(Gs.rows(), nys)};
        for (std::size_t j = lo; j < hi; ++j)
            for (std::size_t i = 0; i < Gs.rows(); ++i) {
                p.X(i, j) = Gs(i, j);
                if (j < nys) p.Y(i, j) = c.hbar.Ge(i, j);
            }
        out.push_back(p);
    }
    return out;
}

inline std::size_t node_for(const BoundsContext& c, std::uint64_t kappa, const Vector& e_s) {
    return c.proto_s.kind == ProtocolKind::zeroing ? 0 : select_node(c.proto_s, kappa, e_s);
}

}  // namespace detail

/// Closed-form bounds: lambda_1 = max lambda_max(X'PX)/aW^2, lambda_2 = 2|P^1/2 X|/aW,
/// lambda_3 = 4 lambda_max(Y'PY), lambda_4 = 4|P^1/2 Y|, lambda_5 = 4|X'PY|/aW, with |w| <= 2 max(|vhat1|,|v1|).
inline JumpLambdas slow_jump_lambdas_analytic(const BoundsContext& c) {
    const Matrix P = c.side_f.P.full();
    const double aw = c.cert_s.aW_lower;
    JumpLambdas r;
    r.method = "analytic";
    for (const auto& p : detail::jump_pieces(c)) {
        const double xpx = std::max(0.0, sym_eigvals(SymMatrix::symmetric_part(p.X.transpose() * P * p.X)).max());
        const double ypy = std::max(0.0, sym_eigvals(SymMatrix::symmetric_part(p.Y.transpose() * P * p.Y)).max());
        const double xpy = spectral_norm(p.X.transpose() * P * p.Y);
        r.lambda[0] = std::max(r.lambda[0], xpx / (aw * aw));
        r.lambda[1] = std::max(r.lambda[1], 2.0 * std::sqrt(xpx) / aw);
        r.lambda[2] = std::max(r.lambda[2], 4.0 * ypy);
        r.lambda[3] = std::max(r.lambda[3], 4.0 * std::sqrt(ypy));
        r.lambda[4] = std::max(r.lambda[4], 4.0 * xpy / aw);
    }
    return r;
}

struct JumpSample {
    Vector e_s, dy, vhat1, v1;
    std::uint64_t kappa = 0;
};

inline JumpSample draw_jump_sample(const BoundsContext& c, std::mt19937_64& rng) {
    JumpSample s;
    s.e_s = detail::sphere_sample(c.nes(), rng);
    s.dy = detail::sphere_sample(c.plant.nz(), rng);
    s.vhat1 = detail::sphere_sample(c.plant.nys(), rng);
    s.v1 = detail::sphere_sample(c.plant.nys(), rng);
    s.kappa = rng() % 64;
    return s;
}

/// Terms of V_f(h_y) - V_f(dy) for one sample: (quadratic in e_s, cross e_s/dy, quadratic in w,
/// cross dy/w, cross e_s/w) and the monomials they are compared against.
struct JumpTerms {
    std::array<double, 5> term{};
    std::array<double, 5> monomial{};
    double lhs = 0;  // exact V_f(dy + Delta) - V_f(dy)
};

inline JumpTerms jump_terms(const BoundsContext& c, const std::vector<detail::JumpPieces>& pieces, const Matrix& P,
                            const JumpSample& s) {
    const std::size_t node = detail::node_for(c, s.kappa, s.e_s);
    const auto& pc = pieces[c.proto_s.kind == ProtocolKind::zeroing ? 0 : node];
    Vector w = s.vhat1;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= s.v1[i];
    const Vector xe = pc.X * s.e_s, yw = pc.Y * w;
    const double W = w_value(c.proto_s, s.kappa, s.e_s);
    const double V = detail::quad(s.dy, P, s.dy);
    const double nv = std::max(norm(s.vhat1), norm(s.v1));
    JumpTerms t;
    t.term = {detail::quad(xe, P, xe), 2.0 * detail::quad(s.dy, P, xe), detail::quad(yw, P, yw),
              2.0 * detail::quad(s.dy, P, yw), 2.0 * detail::quad(xe, P, yw)};
    t.monomial = {W * W, W * std::sqrt(V), nv * nv, std::sqrt(V) * nv, W * nv};
    Vector after = s.dy;
    for (std::size_t i = 0; i < after.size(); ++i) after[i] += xe[i] + yw[i];
    t.lhs = detail::quad(after, P, after) - V;
    return t;
}

/// Sampled ratio maximization (term / monomial) with a multiplicative safety margin.
inline JumpLambdas slow_jump_lambdas(const BoundsContext& c, std::size_t samples = 100000, std::uint64_t seed = 1,
                                     double margin = 0.05) {
    const Matrix P = c.side_f.P.full();
    const auto pieces = detail::jump_pieces(c);
    JumpLambdas r;
    r.method = "sampled";
    r.samples = samples;
    r.seed = seed;
    r.margin = margin;
    const std::size_t chunk = 4096;
    for (std::size_t base = 0, ci = 0; base < samples; base += chunk, ++ci) {
        auto rng = detail::stream(seed, ci);
        for (std::size_t k = base; k < std::min(samples, base + chunk); ++k) {
            const JumpTerms t = jump_terms(c, pieces, P, draw_jump_sample(c, rng));
            for (std::size_t i = 0; i < 5; ++i)
                if (t.monomial[i] > 0) r.lambda[i] = std::max(r.lambda[i], t.term[i] / t.monomial[i]);
        }
    }
    for (auto& l : r.lambda) l *= 1.0 + margin;
    return r;
}

struct ValidationResult {
    std::size_t samples = 0, failures = 0;
    double worst_excess = 0.0;  // max (lhs - rhs) / (1 + |rhs|)
    double failure_fraction() const { return samples ? static_cast<double>(failures) / samples : 0.0; }
};

/// Checks the slow-jump inequality on fresh samples.
inline ValidationResult validate_jump_lambdas(const BoundsContext& c, const JumpLambdas& l, std::size_t samples,
                                              std::uint64_t seed) {
    const Matrix P = c.side_f.P.full();
    const auto pieces = detail::jump_pieces(c);
    ValidationResult v;
    v.samples = samples;
    const std::size_t chunk = 4096;
    for (std::size_t base = 0, ci = 0; base < samples; base += chunk, ++ci) {
        auto rng = detail::stream(seed ^ 0x9e3779b97f4a7c15ULL, ci);
        for (std::size_t k = base; k < std::min(samples, base + chunk); ++k) {
            const JumpTerms t = jump_terms(c, pieces, P, draw_jump_sample(c, rng));
            double rhs = 0.0;
            for (std::size_t i = 0; i < 5; ++i) rhs += l.lambda[i] * t.monomial[i];
            const double ex = (t.lhs - rhs) / (1.0 + std::abs(rhs));
            if (t.lhs > rhs + 1e-12 * (1.0 + std::abs(rhs))) ++v.failures;
            v.worst_excess = std::max(v.worst_excess, ex);
        }
    }
    return v;
}

// ---------------------------------------------------------------- interconnection constants

struct Interconnection {
    double b1 = 0, b2 = 0, b3 = 0;
    std::array<double, 3> aDelta{};  // vhat1, vhat2, udot
    double completion_weight = 0;
};

namespace detail {
/// Stacked fast-side operator Z = [2 Pf K; c_f C2s] with c_f = 2 gamma_f aW_upper_f M_f / lambda_f*.
inline Matrix fast_remainder_operator(const BoundsContext& c, double lambda_f_star) {
    const Matrix K = c.hbar.Gx + c.hbar.Ge * c.plant.C1s;
    const double cf = 2.0 * c.side_f.gamma * c.cert_f.aW_upper * c.cert_f.M / lambda_f_star;
    return vstack(2.0 * (c.side_f.P.full() * K), cf * c.plant.C2s);
}
}  // namespace detail

/// Spectral-norm bounds for the two bracketed cross terms of dU/dt, with completion of squares
/// (weight rho per noise channel) for the terms linear in vhat1, vhat2 and udot.
inline Interconnection interconnection_constants(const BoundsContext& c, const SlowTimingCert& tc,
                                                 double completion_weight = 0.1) {
    Interconnection r;
    r.completion_weight = completion_weight;
    const Matrix E = c.E();
    const Matrix Ps = c.side_s.P.full();
    const double c1 = 2.0 * spectral_norm(Ps * E);
    const double c2 = 2.0 * c.side_s.gamma / tc.lambda_s_star * c.cert_s.aW_upper * c.cert_s.M *
                      spectral_norm(c.plant.C1s * E);
    r.b1 = std::hypot(c1, c2);

    const Matrix Z = detail::fast_remainder_operator(c, tc.lambda_f_star);
    r.b2 = spectral_norm(Z * c.S());
    r.b3 = spectral_norm(Z * E);
    const double k1 = spectral_norm(Z * c.reduced.Ar14);
    const double k2 = spectral_norm(Z * c.reduced.Ar15);
    const double k3 = spectral_norm(2.0 * (c.side_f.P.full() * c.hbar.Gu));
    const double rho = completion_weight;
    std::size_t i = 0;
    for (double k : {k1, k2, k3}) {
        if (k > 0) {
            r.b3 += 0.5 * rho;
            r.aDelta[i] = k * k / (2.0 * rho);
        }
        ++i;
    }
    return r;
}

struct InterconnectionValidation {
    ValidationResult slow, fast;
};

/// Resamples both cross-term inequalities with worst-case timer values and gradient directions.
inline InterconnectionValidation validate_interconnection(const BoundsContext& c, const SlowTimingCert& tc,
                                                          const Interconnection& ic, std::size_t samples,
                                                          std::uint64_t seed) {
    InterconnectionValidation out;
    out.slow.samples = out.fast.samples = samples;
    const Matrix E = c.E(), S = c.S();
    const Matrix Ps = c.side_s.P.full(), Pf = c.side_f.P.full();
    const Matrix K = c.hbar.Gx + c.hbar.Ge * c.plant.C1s;
    const std::size_t nx = c.plant.nx(), nes = c.nes(), nz = c.plant.nz(), nyf = c.plant.nyf();
    const std::size_t nys = c.plant.nys(), nu = c.plant.nu();
    const double phis = 1.0 / tc.lambda_s_star, phif = 1.0 / tc.lambda_f_star;
    auto split = [](const Vector& v, std::size_t a) {
        return std::pair<Vector, Vector>{Vector(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(a)),
                                         Vector(v.begin() + static_cast<std::ptrdiff_t>(a), v.end())};
    };
    const std::size_t chunk = 4096;
    for (std::size_t base = 0, ci = 0; base < samples; base += chunk, ++ci) {
        auto rng = detail::stream(seed ^ 0x51ed27011ULL, ci);
        for (std::size_t k = base; k < std::min(samples, base + chunk); ++k) {
            const Vector xs = detail::sphere_sample(nx + nes, rng);
            const Vector xf = detail::sphere_sample(nz + nyf, rng);
            const Vector v1 = detail::sphere_sample(nys, rng);
            const Vector v2 = detail::sphere_sample(nyf, rng);
            const Vector du = nu ? detail::sphere_sample(nu, rng) : Vector{};
            const std::uint64_t kappa = rng() % 64;
            auto [dx, es] = split(xs, nx);
            auto [dy, ef] = split(xf, nz);
            const Vector Ex = E * xf;
            // slow side: 2 dx' Ps E xf + 2 gamma_s phi_s W_s M_s |C1s E xf|
            const double lhs_s = 2.0 * dot(dx, Ps * Ex) + 2.0 * c.side_s.gamma * phis *
                                                              w_value(c.proto_s, kappa, es) * c.cert_s.M *
                                                              norm(c.plant.C1s * Ex);
            const double rhs_s = ic.b1 * norm(xs) * norm(xf);
            if (lhs_s > rhs_s + 1e-12 * (1.0 + rhs_s)) ++out.slow.failures;
            out.slow.worst_excess = std::max(out.slow.worst_excess, (lhs_s - rhs_s) / (1.0 + rhs_s));
            // fast side
            Vector f = S * xs;
            const Vector a14 = c.reduced.Ar14 * v1, a15 = c.reduced.Ar15 * v2;
            for (std::size_t i = 0; i < f.size(); ++i) f[i] += Ex[i] + a14[i] + a15[i];
            const Vector gu = nu ? c.hbar.Gu * du : Vector(nz, 0.0);
            Vector inner = K * f;
            for (std::size_t i = 0; i < inner.size(); ++i) inner[i] = -inner[i] + gu[i];
            const double lhs_f = 2.0 * dot(dy, Pf * inner) + 2.0 * c.side_f.gamma * phif *
                                                                 w_value(c.proto_f, kappa, ef) * c.cert_f.M *
                                                                 norm(c.plant.C2s * f);
            const double nxf = norm(xf);
            const double rhs_f = ic.b2 * norm(xs) * nxf + ic.b3 * nxf * nxf + ic.aDelta[0] * dot(v1, v1) +
                                 ic.aDelta[1] * dot(v2, v2) + ic.aDelta[2] * (nu ? dot(du, du) : 0.0);
            if (lhs_f > rhs_f + 1e-12 * (1.0 + rhs_f)) ++out.fast.failures;
            out.fast.worst_excess = std::max(out.fast.worst_excess, (lhs_f - rhs_f) / (1.0 + rhs_f));
        }
    }
    return out;
}

// ---------------------------------------------------------------- pipeline

struct PipelineKnobs {
    double mu_frac = 0.6;
    double mu1_frac = 0.4;
    std::optional<double> lambda_tilde;
    std::optional<double> lambda_final;
    double eta1_split = 0.5;         // eta_11 = split * eta1, eta_12 = (1 - split) * eta1
    double completion_weight = 0.1;  // rho in the completion of squares
    std::size_t samples = 100000;
    std::size_t validation_samples = 1000000;
    std::uint64_t seed = 1;
    bool sampled = true;   // false: closed-form lambdas (used inside the design search)
    bool validate = true;  // resampling checks (hard error on failure)
};

struct LedgerEntry {
    std::string name;
    double value;
    std::string formula;
};

struct ConstantsLedger {
    double L_s = 0, L_f = 0, T_s = 0, T_star = 0;
    double a_s = 0, a_f = 0;
    double aU_lower_s = 0, aU_upper_s = 0, aU_lower_f = 0, aU_upper_f = 0, aU_lower = 0, aU_upper = 0;
    std::array<double, 5> lambda{};
    double b1 = 0, b2 = 0, b3 = 0;
    std::array<double, 3> aDelta{};
    double mu = 0, mu1 = 0, lambda_tilde = 0, lambda_final = 0;
    double qa = 0, qb = 0, qc = 0;
    double d = 0, a_d = 0, a_v = 0;
    double epsilon_star = 0, tau_mati_f = 0;
    double aVs_v1 = 0, aVs_v2 = 0, aws_v1 = 0, aws_v2 = 0;
    double gamma_v1 = 0, gamma_v2 = 0, gamma_dus = 0;
    double k_overshoot = 0, rate = 0;
    SlowTimingCheck slow_timing;
    JumpLambdas lambdas_meta;
    ValidationResult lambda_validation;
    InterconnectionValidation interconnection_validation;

    std::vector<LedgerEntry> entries() const {
        return {
            {"L_s", L_s, "M_s |As22| / aW_lower_s"},
            {"L_f", L_f, "M_f |Af22| / aW_lower_f"},
            {"T_s", T_s, "T(L_s, gamma_s, lambda_s)"},
            {"T_star", T_star, "T(L_f, gamma_f, lambda_f*)"},
            {"a_s", a_s, "a_rho_s min{1, aW_lower_s^2}"},
            {"a_f", a_f, "a_rho_f min{1, aW_lower_f^2}"},
            {"aU_lower_s", aU_lower_s, "min{lambda_min(Ps), gamma_s lambda_s* aW_lower_s^2}"},
            {"aU_upper_s", aU_upper_s, "max{lambda_max(Ps), gamma_s aW_upper_s^2 / lambda_s*}"},
            {"aU_lower_f", aU_lower_f, "min{lambda_min(Pf), gamma_f lambda_f* aW_lower_f^2}"},
            {"aU_upper_f", aU_upper_f, "max{lambda_max(Pf), gamma_f aW_upper_f^2 / lambda_f*}"},
            {"aU_lower", aU_lower, "min{aU_lower_s, d aU_lower_f}"},
            {"aU_upper", aU_upper, "max{aU_upper_s, d aU_upper_f}"},
            {"lambda1", lambda[0], "slow-jump V_f increment: W_s^2 coefficient"},
            {"lambda2", lambda[1], "slow-jump V_f increment: W_s sqrt(V_f) coefficient"},
            {"lambda3", lambda[2], "slow-jump V_f increment: |v|^2 coefficient"},
            {"lambda4", lambda[3], "slow-jump V_f increment: sqrt(V_f)|v| coefficient"},
            {"lambda5", lambda[4], "slow-jump V_f increment: W_s |v| coefficient"},
            {"b1", b1, "|(2 Ps E, 2 gamma_s M_s aW_upper_s C1s E / lambda_s*)|"},
            {"b2", b2, "|Z S|, Z = [2 Pf K; 2 gamma_f aW_upper_f M_f C2s / lambda_f*]"},
            {"b3", b3, "|Z E| + rho/2 per active noise channel"},
            {"aDelta1", aDelta[0], "|Z Ar14|^2 / (2 rho)"},
            {"aDelta2", aDelta[1], "|Z Ar15|^2 / (2 rho)"},
            {"aDelta3", aDelta[2], "|2 Pf Gu|^2 / (2 rho)"},
            {"mu", mu, "mu_frac a_s aU_lower_s"},
            {"mu1", mu1, "mu1_frac a_s aU_lower_s"},
            {"lambda_tilde", lambda_tilde, "in (exp(-mu1 tau_miati_s), 1)"},
            {"lambda_final", lambda_final, "in (lambda_tilde, 1)"},
            {"quad_a", qa, "max{(lambda1 + lambda5/2)/(gamma_s lambda_s*), lambda4/2}"},
            {"quad_b", qb, "(lambda2/2) max{lambda1/(gamma_s lambda_s*), 1}"},
            {"quad_c", qc, "1 - lambda_tilde exp(mu1 tau_miati_s)"},
            {"d", d, "((-b + sqrt(b^2 - 4ac)) / (2a))^2"},
            {"a_d", a_d, "1 + a d + b sqrt(d)"},
            {"a_v", a_v, "d lambda3 + (lambda4 + d lambda5)/2"},
            {"epsilon_star", epsilon_star, "eps* display"},
            {"tau_mati_f", tau_mati_f, "eps* T*"},
            {"aws_v1", aws_v1, "M_s |Ar24|"},
            {"aws_v2", aws_v2, "M_s |Ar25|"},
            {"aVs_v1", aVs_v1, "lambda_max(Ar14' Ar14) / eta_11"},
            {"aVs_v2", aVs_v2, "lambda_max(Ar15' Ar15) / eta_12"},
            {"gamma_v1", gamma_v1, "sqrt(a_d/aU max{a_v/(lambda-lambda_tilde), (aws1^2/eta_s1 + aVs1 + d aD1)/(mu-mu1)})"},
            {"gamma_v2", gamma_v2, "sqrt(a_d/(aU (mu-mu1)) (aws2^2/eta_s2 + aVs2 + d aD2))"},
            {"gamma_dus", gamma_dus, "sqrt(a_d/aU (M_s^2/eta_s3 + d aD3))"},
            {"k_overshoot", k_overshoot, "sqrt(a_d aU_upper / (lambda_final aU_lower))"},
            {"rate", rate, "ln(1/lambda_final) / (2 tau_mati_s)"},
        };
    }
};

/// Runs the full constants pipeline for a design.
inline ConstantsLedger epsilon_star_pipeline(const BoundsContext& c, const SlowTimingCert& tc, const PipelineKnobs& k) {
    if (!(k.mu_frac > 0 && k.mu_frac < 1)) throw InvalidConfig("mu_frac must lie in (0,1)");
    if (!(k.mu1_frac > 0 && k.mu1_frac < k.mu_frac)) throw InvalidConfig("mu1_frac must lie in (0, mu_frac)");
    if (!(tc.tau_miati_s > 0 && tc.tau_miati_s <= tc.tau_mati_s)) throw InvalidConfig("need 0 < tau_miati_s <= tau_mati_s");
    if (!(tc.lambda_s_star > 0 && tc.lambda_s_star < 1) || !(tc.lambda_f_star > c.cert_f.lambda && tc.lambda_f_star < 1))
        throw InvalidConfig("lambda_s*, lambda_f* must lie in (lambda, 1)");
    if (!(tc.eta_s1 > 0 && tc.eta_s2 > 0 && tc.eta_s3 > 0)) throw InvalidConfig("eta_s1..3 must be positive");
    if (!(k.eta1_split > 0 && k.eta1_split < 1)) throw InvalidConfig("eta1_split must lie in (0,1)");
    if (!(k.completion_weight > 0)) throw InvalidConfig("completion_weight must be positive");

    ConstantsLedger L;
    L.L_s = c.growth.L_s;
    L.L_f = c.growth.L_f;
    L.T_star = t_bound(L.L_f, c.side_f.gamma, tc.lambda_f_star);
    L.slow_timing = check_slow_timing(L.L_s, c.side_s.gamma, c.cert_s.lambda, tc, k.sampled);
    L.T_s = L.slow_timing.T_s;

    const Envelopes env = lyapunov_envelopes(c.side_s, c.side_f, c.cert_s, c.cert_f, tc);
    L.a_s = env.a_s;
    L.a_f = env.a_f;
    L.aU_lower_s = env.aU_lower_s;
    L.aU_upper_s = env.aU_upper_s;
    L.aU_lower_f = env.aU_lower_f;
    L.aU_upper_f = env.aU_upper_f;

    if (k.sampled) {
        L.lambdas_meta = slow_jump_lambdas(c, k.samples, k.seed);
        if (k.validate) {
            L.lambda_validation = validate_jump_lambdas(c, L.lambdas_meta, k.validation_samples, k.seed + 1);
            if (L.lambda_validation.failure_fraction() > 1e-4)
                throw NumericalBlowup("slow-jump constants failed resampling validation");
        }
    } else {
        L.lambdas_meta = slow_jump_lambdas_analytic(c);
    }
    L.lambda = L.lambdas_meta.lambda;

    const Interconnection ic = interconnection_constants(c, tc, k.completion_weight);
    L.b1 = ic.b1;
    L.b2 = ic.b2;
    L.b3 = ic.b3;
    L.aDelta = ic.aDelta;
    if (k.validate) {
        L.interconnection_validation = validate_interconnection(c, tc, ic, std::min<std::size_t>(k.samples, 100000), k.seed + 2);
        if (L.interconnection_validation.slow.failure_fraction() > 1e-4 ||
            L.interconnection_validation.fast.failure_fraction() > 1e-4)
            throw NumericalBlowup("interconnection constants failed resampling validation");
    }

    const double psi_s2 = L.aU_lower_s, psi_f2 = L.aU_lower_f;
    L.mu = k.mu_frac * L.a_s * psi_s2;
    L.mu1 = k.mu1_frac * L.a_s * psi_s2;
    const double lt_lo = std::exp(-L.mu1 * tc.tau_miati_s);
    L.lambda_tilde = k.lambda_tilde ? *k.lambda_tilde : std::sqrt(lt_lo);
    if (!(L.lambda_tilde >= lt_lo && L.lambda_tilde < 1.0))
        throw InvalidConfig("lambda_tilde outside [exp(-mu1 tau_miati_s), 1)");
    L.lambda_final = k.lambda_final ? *k.lambda_final : 0.5 * (L.lambda_tilde + 1.0);
    if (!(L.lambda_final > L.lambda_tilde && L.lambda_final < 1.0)) throw InvalidConfig("lambda_final outside (lambda_tilde, 1)");

    const auto& l = L.lambda;
    const double gl = c.side_s.gamma * tc.lambda_s_star;
    L.qa = std::max((l[0] + 0.5 * l[4]) / gl, 0.5 * l[3]);
    L.qb = 0.5 * l[1] * std::max(l[0] / gl, 1.0);
    L.qc = std::min(0.0, 1.0 - L.lambda_tilde * std::exp(L.mu1 * tc.tau_miati_s));
    if (L.qa > 0) {
        const double root = (-L.qb + std::sqrt(L.qb * L.qb - 4.0 * L.qa * L.qc)) / (2.0 * L.qa);
        L.d = root * root;
    } else if (L.qb > 0) {
        L.d = std::pow(-L.qc / L.qb, 2);
    } else {
        L.d = 1.0;  // jumps leave V_f unchanged; any positive weight works
    }
    L.a_d = 1.0 + L.qa * L.d + L.qb * std::sqrt(L.d);
    L.a_v = L.d * l[2] + 0.5 * (l[3] + L.d * l[4]);

    const double denom_s = L.a_s * psi_s2 - L.mu;
    const double inv = (L.d > 0)
                           ? (1.0 / (L.d * L.a_f * psi_f2)) *
                                     (std::pow(L.b1 + L.d * L.b2, 2) * psi_s2 * psi_f2 / (4.0 * denom_s) + L.mu * L.d) +
                                 L.b3 / L.a_f
                           : std::numeric_limits<double>::infinity();
    L.epsilon_star = 1.0 / inv;
    L.tau_mati_f = L.epsilon_star * L.T_star;

    L.aU_lower = std::min(L.aU_lower_s, L.d * L.aU_lower_f);
    L.aU_upper = std::max(L.aU_upper_s, L.d * L.aU_upper_f);

    const double eta11 = k.eta1_split * c.side_s.eta1, eta12 = (1.0 - k.eta1_split) * c.side_s.eta1;
    const double n14 = spectral_norm(c.reduced.Ar14), n15 = spectral_norm(c.reduced.Ar15);
    L.aVs_v1 = eta11 > 0 ? n14 * n14 / eta11 : (n14 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    L.aVs_v2 = eta12 > 0 ? n15 * n15 / eta12 : (n15 > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    L.aws_v1 = c.growth.aws_v1;
    L.aws_v2 = c.growth.aws_v2;
    const double dm = L.mu - L.mu1;
    const double Ms = c.cert_s.M;
    if (L.aU_lower > 0) {
        L.gamma_v1 = std::sqrt(L.a_d / L.aU_lower *
                               std::max(L.a_v / (L.lambda_final - L.lambda_tilde),
                                        (L.aws_v1 * L.aws_v1 / tc.eta_s1 + L.aVs_v1 + L.d * L.aDelta[0]) / dm));
        L.gamma_v2 = std::sqrt(L.a_d / (L.aU_lower * dm) * (L.aws_v2 * L.aws_v2 / tc.eta_s2 + L.aVs_v2 + L.d * L.aDelta[1]));
        L.gamma_dus = std::sqrt(L.a_d / L.aU_lower * (Ms * Ms / tc.eta_s3 + L.d * L.aDelta[2]));
        L.k_overshoot = std::sqrt(L.a_d * L.aU_upper / (L.lambda_final * L.aU_lower));
    } else {
        L.gamma_v1 = L.gamma_v2 = L.gamma_dus = L.k_overshoot = std::numeric_limits<double>::infinity();
    }
    L.rate = std::log(1.0 / L.lambda_final) / (2.0 * tc.tau_mati_s);

    // ledger invariants
    if (!(L.mu > 0 && L.mu1 > 0 && L.mu1 < L.mu && L.mu < L.a_s * psi_s2)) throw InvalidConfig("mu/mu1 invariants violated");
    if (!(L.d >= 0) || !(L.qc <= 0)) throw InvalidConfig("d invariants violated");
    return L;
}

/// eps* T* for a candidate design using closed-form constants. When the slow timing condition or the slow MATI
/// condition fails it returns minus the timing shortfall; NaN on other failures.
inline MatiObjective make_mati_objective(const PlantParams& p, const ProtocolState& ps, const ProtocolState& pf,
                                         const ProtocolCertificate& cs, const ProtocolCertificate& cf,
                                         const SlowTimingCert& tc, PipelineKnobs knobs) {
    knobs.sampled = false;
    knobs.validate = false;
    return [=](const DesignResult& d) -> double {
        try {
            const BoundsContext c = BoundsContext::make(p, d, ps, pf, cs, cf);
            if (!(tc.lambda_s_star > cs.lambda)) return std::numeric_limits<double>::quiet_NaN();
            const double T_s = t_bound(c.growth.L_s, d.reduced->gamma, cs.lambda);
            const double transit = phi_transit_time(c.growth.L_s, d.reduced->gamma, tc.eta_s(), tc.lambda_s_star);
            const double shortfall = std::max(tc.tau_mati_s - T_s + 1e-12, tc.tau_mati_s - transit);
            if (shortfall > 0) return -shortfall;
            const ConstantsLedger L = epsilon_star_pipeline(c, tc, knobs);
            return L.epsilon_star * L.T_star;
        } catch (const Error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
}

}  // namespace spncs
