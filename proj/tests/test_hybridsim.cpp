#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "spncs/config.hpp"
#include "spncs/hybridsim.hpp"

using namespace spncs;
using Catch::Approx;
using L = StateLayout;

namespace {
ExperimentConfig example() { return load_config("configs/example.json"); }

Vector axpy(Vector a, double k, const Vector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += k * b[i];
    return a;
}
Vector sub(const Vector& a, const Vector& b) { return axpy(a, -1.0, b); }

/// Plant and observer integrated in their own coordinates with zero-order-held outputs.
/// Both protocols are single-node zeroing, so every transmission refreshes all held values.
struct DirectSim {
    PlantParams p;
    ObserverGains g;
    Signals sig;
    Vector xp, zp, xo, zo;
    Vector hys, hos, hu, hyf, hof;  // held noisy plant outputs, observer outputs and input

    void sample_slow(double t) {
        hys = axpy(p.C1s * xp, 1.0, eval_signal(sig.v1, t));
        hos = p.C1s * xo;
        hu = eval_signal(sig.u_s, t);
    }
    void sample_fast(double t) {
        hyf = axpy(axpy(p.C2s * xp, 1.0, p.C2f * zp), 1.0, eval_signal(sig.v2, t));
        hof = axpy(p.C2s * xo, 1.0, p.C2f * zo);
    }
    Vector pack() const {
        Vector s = xp;
        s.insert(s.end(), zp.begin(), zp.end());
        s.insert(s.end(), xo.begin(), xo.end());
        s.insert(s.end(), zo.begin(), zo.end());
        return s;
    }
    void unpack(const Vector& s) {
        const std::size_t nx = p.nx(), nz = p.nz();
        xp.assign(s.begin(), s.begin() + nx);
        zp.assign(s.begin() + nx, s.begin() + nx + nz);
        xo.assign(s.begin() + nx + nz, s.begin() + 2 * nx + nz);
        zo.assign(s.begin() + 2 * nx + nz, s.end());
    }
    Vector field(double t, const Vector& s) const {
        DirectSim c = *this;
        c.unpack(s);
        const Vector u = eval_signal(sig.u_s, t);
        const Vector innov_s = sub(hys, hos), innov_f = sub(hyf, hof);
        Vector dxp = axpy(axpy(p.A11 * c.xp, 1.0, p.A12 * c.zp), 1.0, p.B1 * u);
        Vector dzp = axpy(axpy(p.A21 * c.xp, 1.0, p.A22 * c.zp), 1.0, p.B2 * u);
        Vector dxo = axpy(axpy(p.A11 * c.xo, 1.0, p.A12 * c.zo), 1.0, p.B1 * hu);
        dxo = axpy(axpy(dxo, 1.0, g.L1s * innov_s), 1.0, g.L1f * innov_f);
        Vector dzo = axpy(axpy(p.A21 * c.xo, 1.0, p.A22 * c.zo), 1.0, p.B2 * hu);
        dzo = axpy(axpy(dzo, 1.0, g.L2s * innov_s), 1.0, g.L2f * innov_f);
        for (auto& v : dzp) v /= p.epsilon;
        for (auto& v : dzo) v /= p.epsilon;
        Vector out = dxp;
        out.insert(out.end(), dzp.begin(), dzp.end());
        out.insert(out.end(), dxo.begin(), dxo.end());
        out.insert(out.end(), dzo.begin(), dzo.end());
        return out;
    }
    void flow(double t0, double t1, double hmax) {
        if (t1 <= t0) return;
        const std::size_t n = static_cast<std::size_t>(std::ceil((t1 - t0) / hmax));
        const double h = (t1 - t0) / static_cast<double>(n);
        Vector s = pack();
        for (std::size_t i = 0; i < n; ++i)
            s = rk4_step([this](double t, const Vector& x) { return field(t, x); }, s, t0 + i * h, h);
        unpack(s);
    }
};

double max_abs(const Vector& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}
}  // namespace

TEST_CASE("schedule gap bounds on 1e4 random schedules") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t total = 0;
    for (int k = 0; k < 10000; ++k) {
        SchedulePolicy pol;
        pol.mode = k % 5 == 0 ? SchedulePolicy::Mode::periodic : SchedulePolicy::Mode::uniform_random;
        pol.tau_mati_f = 0.002 + 0.02 * u(rng);
        pol.tau_miati_f = pol.tau_mati_f * (0.05 + 0.45 * u(rng));
        pol.tau_mati_s = 3.5 * pol.tau_miati_f + 0.3 * u(rng);
        pol.tau_miati_s = (pol.tau_mati_s - 2 * pol.tau_miati_f) * (0.01 + 0.99 * u(rng));
        pol.seed = rng();
        const double horizon = 0.3 + u(rng);
        const auto ev = generate_schedule(pol, horizon);
        const ScheduleCheck c = check_schedule(ev, pol, horizon);
        total += ev.size();
        REQUIRE(c.ok());
    }
    CHECK(total > 100000);
}

TEST_CASE("schedule policy validation") {
    SchedulePolicy pol;
    pol.tau_mati_s = 0.13;
    pol.tau_miati_s = 1e-4;
    pol.tau_mati_f = 0.007;
    pol.tau_miati_f = 0.004;
    CHECK_THROWS_AS(pol.validate(), InvalidConfig);
    pol.tau_miati_f = 0.0007;
    CHECK_NOTHROW(pol.validate());
    pol.tau_miati_s = 0.2;
    CHECK_THROWS_AS(pol.validate(), InvalidConfig);
}

TEST_CASE("hybrid model reproduces a direct plant/observer co-simulation") {
    const ExperimentConfig c = example();
    const ObserverGains g = c.effective_gains();
    const FlowModel m(c.plant, g);
    Signals sig = Signals::zeros(c.plant);
    sig.u_s[0] = SignalSpec::ramp(1.0, 0.5);
    sig.v1[0] = SignalSpec::sinusoid(0.04, 25.0);
    sig.v2[0] = SignalSpec::sinusoid(0.02, 50.0);
    SchedulePolicy pol = c.schedule;
    pol.mode = SchedulePolicy::Mode::uniform_random;
    pol.seed = 4;
    const double horizon = 2.0;
    const auto events = generate_schedule(pol, horizon);
    InitialConditions ic = c.initial;
    ic.x_o = {0.05, -0.02};
    ic.z_o = {0.1, 0.0};
    SimOptions opt;
    opt.record_stride = 1000000;
    const HybridTrajectory tr = simulate(m, c.proto_s, c.proto_f, pol, events, sig, initial_state(m, ic, sig), horizon, opt);

    DirectSim d{c.plant, g, sig, ic.x_p, ic.z_p, ic.x_o, ic.z_o, {}, {}, {}, {}, {}};
    d.sample_slow(0.0);
    d.sample_fast(0.0);
    double t = 0.0;
    std::size_t compared = 0;
    auto compare = [&](const Vector& s) {
        const Vector dx = m.layout().get(s, L::dx);
        Vector dz = m.layout().get(s, L::dy);
        dz = axpy(dz, 1.0, m.hbar_at(s));
        const Vector ddx = sub(d.xo, d.xp), ddz = sub(d.zo, d.zp);
        CHECK(max_abs(sub(dx, ddx)) <= 1e-8 * (1.0 + max_abs(ddx)));
        CHECK(max_abs(sub(dz, ddz)) <= 1e-8 * (1.0 + max_abs(ddz)));
        CHECK(max_abs(sub(m.layout().get(s, L::x_p), d.xp)) <= 1e-8 * (1.0 + max_abs(d.xp)));
        CHECK(max_abs(sub(m.layout().get(s, L::z_p), d.zp)) <= 1e-8 * (1.0 + max_abs(d.zp)));
        ++compared;
    };
    // samples come in pre/post pairs at each event
    std::size_t k = 1;
    for (const auto& ev : events) {
        d.flow(t, ev.t, 2e-5);
        t = ev.t;
        while (k < tr.samples.size() && !(tr.samples[k].at_jump && tr.samples[k].t == ev.t)) ++k;
        REQUIRE(k < tr.samples.size());
        compare(tr.samples[k].state);
        if (ev.channel == Channel::slow) d.sample_slow(t);
        else d.sample_fast(t);
        k += 2;
    }
    d.flow(t, horizon, 2e-5);
    compare(tr.samples.back().state);
    CHECK(compared == events.size() + 1);
}

TEST_CASE("step refinement changes the example run by at most 1e-7 relative") {
    const ExperimentConfig c = example();
    const FlowModel m(c.plant, c.effective_gains());
    const ScenarioConfig& sc = c.scenarios.front();
    const auto events = generate_schedule(c.schedule, c.horizon);
    const Vector x0 = initial_state(m, c.initial, sc.signals);
    SimOptions a, b;
    a.record_stride = b.record_stride = 1000000;
    b.step_divisor = 2.0;
    const HybridTrajectory ta = simulate(m, c.proto_s, c.proto_f, c.schedule, events, sc.signals, x0, c.horizon, a);
    const HybridTrajectory tb = simulate(m, c.proto_s, c.proto_f, c.schedule, events, sc.signals, x0, c.horizon, b);
    REQUIRE(ta.samples.size() == tb.samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ta.samples.size(); ++i) {
        REQUIRE(ta.samples[i].t == tb.samples[i].t);
        const double scale = std::max(1.0, max_abs(ta.samples[i].state));
        worst = std::max(worst, max_abs(sub(ta.samples[i].state, tb.samples[i].state)) / scale);
    }
    INFO("worst relative change " << worst);
    CHECK(worst <= 1e-7);
}

TEST_CASE("zero initial error and zero signals stay at the attractor") {
    const ExperimentConfig c = example();
    const FlowModel m(c.plant, c.effective_gains());
    const Signals sig = Signals::zeros(c.plant);
    InitialConditions ic;
    ic.x_p = ic.x_o = {0.0, 0.0};
    ic.z_p = ic.z_o = {0.0, 0.0};
    const auto events = generate_schedule(c.schedule, 1.0);
    const HybridTrajectory tr =
        simulate(m, c.proto_s, c.proto_f, c.schedule, events, sig, initial_state(m, ic, sig), 1.0);
    for (const auto& s : tr.samples) REQUIRE(distance_to_attractor(tr.layout, s.state) == 0.0);
    CHECK(tr.events.size() == events.size());
}

TEST_CASE("jumps outside the jump set are rejected") {
    const ExperimentConfig c = example();
    const FlowModel m(c.plant, c.effective_gains());
    const Signals sig = Signals::zeros(c.plant);
    const Vector x0 = initial_state(m, c.initial, sig);
    // fast transmissions missing: the fast timer overruns tau_mati_f
    const std::vector<ScheduledEvent> late{{0.05, Channel::slow}};
    CHECK_THROWS_AS(simulate(m, c.proto_s, c.proto_f, c.schedule, late, sig, x0, 0.06), SetViolation);
    // two transmissions closer than tau_miati_f
    const std::vector<ScheduledEvent> close{{0.005, Channel::fast}, {0.0051, Channel::fast}};
    CHECK_THROWS_AS(simulate(m, c.proto_s, c.proto_f, c.schedule, close, sig, x0, 0.006), SetViolation);
    SimOptions off;
    off.check_sets = false;
    CHECK_NOTHROW(simulate(m, c.proto_s, c.proto_f, c.schedule, late, sig, x0, 0.06, off));
}

TEST_CASE("trajectory and event CSV layout") {
    const ExperimentConfig c = example();
    const FlowModel m(c.plant, c.effective_gains());
    const Signals sig = Signals::zeros(c.plant);
    const auto events = generate_schedule(c.schedule, 0.2);
    const HybridTrajectory tr =
        simulate(m, c.proto_s, c.proto_f, c.schedule, events, sig, initial_state(m, c.initial, sig), 0.2);
    std::ostringstream a, b;
    write_trajectory_csv(a, tr);
    write_events_csv(b, tr);
    std::istringstream ia(a.str()), ib(b.str());
    std::string line;
    std::getline(ia, line);
    CHECK(line.rfind("t,j,dx1", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) == tr.layout.size + 2);
    std::size_t rows = 0;
    while (std::getline(ia, line)) ++rows;
    CHECK(rows == tr.samples.size());
    std::getline(ib, line);
    CHECK(line == "t,channel,node,kappa");
    rows = 0;
    while (std::getline(ib, line)) ++rows;
    CHECK(rows == tr.events.size());
}

TEST_CASE("hybrid sup norm respects hybrid time ordering") {
    const std::vector<SignalSample> s{{0.0, 0, 1.0}, {0.5, 0, -3.0}, {0.5, 1, 5.0}, {1.0, 1, 2.0}};
    CHECK(hybrid_sup_norm(s, 0.5, 0) == 3.0);
    CHECK(hybrid_sup_norm(s, 0.5, 1) == 5.0);
    CHECK(hybrid_sup_norm(s, 0.2, 5) == 1.0);
}

TEST_CASE("distance to the attractor ignores free coordinates") {
    const StateLayout lay(fixtures::example_plant());
    Vector s(lay.size, 0.0);
    lay.put(s, L::dx, {3.0, 4.0});
    CHECK(distance_to_attractor(lay, s) == 5.0);
    lay.scalar(s, L::tau_s) = 0.1;
    lay.put(s, L::vhat1, {2.0});
    lay.put(s, L::x_p, {7.0, 7.0});
    CHECK(distance_to_attractor(lay, s) == 5.0);
}

TEST_CASE("sup norm of a sampled sinusoid") {
    std::vector<SignalSample> s;
    const SignalSpec v = SignalSpec::sinusoid(0.04, 25.0);
    for (int k = 0; k <= 10000; ++k) {
        const double t = 1e-4 * k;
        s.push_back({t, 0, v.value(t)});
    }
    CHECK(hybrid_sup_norm(s, 1.0, 0) == Approx(0.04).epsilon(1e-4));
    CHECK(generate_schedule(SchedulePolicy{SchedulePolicy::Mode::periodic, 0.13, 1e-4, 0.007, 7e-4, 1}, 5e-4).empty());
}
