#include <catch_amalgamated.hpp>

#include <random>

#include "fixtures.hpp"
#include "spncs/model.hpp"

using namespace spncs;
using Catch::Approx;

namespace {
Vector randn(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    Vector v(n);
    for (auto& x : v) x = d(rng);
    return v;
}
Vector add(Vector a, const Vector& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}
}  // namespace

TEST_CASE("plant validation") {
    const PlantParams p = fixtures::example_plant();
    CHECK_NOTHROW(p.validate());

    PlantParams bad = p;
    bad.B2 = Matrix{{0}, {0}, {0}};
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = p;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
    bad = p;
    bad.C1s = Matrix{{1, 0}};
    bad.A11 = Matrix{{1, 0}, {0, 2}};
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);
    bad = p;
    bad.A22 = Matrix{{1, 1}, {1, 1}};
    CHECK_THROWS_AS(bad.validate(), InvalidConfig);

    ObserverGains g = fixtures::example_gains();
    CHECK_NOTHROW(g.validate(p));
    g.L1s = Matrix{{1, 2}, {3, 4}};
    CHECK_THROWS_AS(g.validate(p), InvalidInput);
}

TEST_CASE("fast blocks at the example gains") {
    const PlantParams p = fixtures::example_plant();
    const FastBlocks f = build_fast_blocks(p, fixtures::example_gains());
    CHECK(f.Af11 == p.A22);
    CHECK(frobenius_norm(f.Af12) == 0.0);
    CHECK(f.Af21 == p.C2f * p.A22);

    ObserverGains g = fixtures::example_gains();
    g.L2f = Matrix{{0}, {10}};  // makes A22 - L2f C2f unstable
    CHECK_THROWS_AS(build_fast_blocks(p, g), DesignInfeasible);
}

TEST_CASE("quasi-steady fast error solves the fast equilibrium") {
    const PlantParams p = fixtures::example_plant();
    std::mt19937_64 rng(11);
    for (double n2 : {0.01, 0.5, -0.2}) {
        const ObserverGains g = fixtures::example_gains(0.02, n2, 0.18);
        const FastBlocks f = build_fast_blocks(p, g);
        const HbarCoeffs h = build_hbar(p, g, f);
        for (int k = 0; k < 200; ++k) {
            const Vector dx = randn(2, rng), ey = randn(1, rng), eu = randn(1, rng), v1 = randn(1, rng),
                         v2 = randn(1, rng);
            const Vector hb = h.eval(dx, ey, eu, v1, v2);
            Vector r = f.Af11 * hb;
            r = add(r, (p.A21 - g.L2s * p.C1s - g.L2f * p.C2s) * dx);
            r = add(r, g.L2s * add(ey, v1));
            r = add(r, p.B2 * eu);
            r = add(r, g.L2f * v2);
            CHECK(norm(r) <= 1e-9);
        }
    }
}

TEST_CASE("quasi-steady plant state solves A21 x + A22 z + B2 u = 0") {
    const PlantParams p = fixtures::example_plant();
    std::mt19937_64 rng(5);
    for (int k = 0; k < 200; ++k) {
        const Vector x = randn(2, rng), u = randn(1, rng);
        const Vector z = quasi_steady_plant(p, x, u);
        const Vector r = add(add(p.A21 * x, p.A22 * z), p.B2 * u);
        CHECK(norm(r) <= 1e-9);
    }
}

TEST_CASE("reduced blocks reproduce f_dx on the slow manifold") {
    const PlantParams p = fixtures::example_plant();
    const ObserverGains g = fixtures::example_gains();
    const FastBlocks f = build_fast_blocks(p, g);
    const ReducedBlocks r = build_reduced_blocks(p, g, f);
    CHECK(frobenius_norm(r.D * f.Af11 - (p.A12 - g.L1f * p.C2f)) < 1e-12);

    const FlowModel m(p, g);
    const StateLayout& L = m.layout();
    std::mt19937_64 rng(9);
    for (int k = 0; k < 100; ++k) {
        Vector s(L.size, 0.0);
        const Vector dx = randn(2, rng), ey = randn(1, rng), eu = randn(1, rng), v1 = randn(1, rng),
                     v2 = randn(1, rng);
        L.put(s, StateLayout::dx, dx);
        L.put(s, StateLayout::e_ys, ey);
        L.put(s, StateLayout::e_us, eu);
        L.put(s, StateLayout::vhat1, v1);
        L.put(s, StateLayout::vhat2, v2);
        Vector expect = r.Ar11 * dx;
        expect = add(expect, r.Ar12 * ey);
        expect = add(expect, r.Ar13 * eu);
        expect = add(expect, r.Ar14 * v1);
        expect = add(expect, r.Ar15 * v2);
        const Vector got = m.f_dx(s);
        for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == Approx(expect[i]).margin(1e-12));
    }
    CHECK(r.As21.rows() == 2);
    CHECK(r.As22.cols() == 2);
    CHECK(r.As23.cols() == 2);
}

TEST_CASE("flow map: delta_y tracks delta_z minus Hbar") {
    // d/dt (dy + Hbar) must equal the raw fast estimation-error rate.
    const PlantParams p = fixtures::example_plant();
    const ObserverGains g = fixtures::example_gains();
    const FlowModel m(p, g);
    const StateLayout& L = m.layout();
    std::mt19937_64 rng(2);
    for (int k = 0; k < 50; ++k) {
        Vector s = randn(L.size, rng);
        FlowInputs in{randn(1, rng), randn(1, rng), randn(1, rng), randn(1, rng), randn(1, rng), randn(1, rng)};
        const Vector d = m(s, in);
        const Vector dx = L.get(s, StateLayout::dx), ey = L.get(s, StateLayout::e_ys),
                     eu = L.get(s, StateLayout::e_us), v1 = L.get(s, StateLayout::vhat1),
                     v2 = L.get(s, StateLayout::vhat2), dy = L.get(s, StateLayout::dy),
                     ef = L.get(s, StateLayout::e_f);
        const Vector dz = add(dy, m.hbar_at(s));
        // eps d(dz)/dt from the plant and observer equations with dz = z_o - z_p
        Vector rate = add(p.A21 * dx, p.A22 * dz);
        rate = add(rate, p.B2 * eu);
        const Vector ys = add(ey, v1), yf = add(ef, v2);
        const Vector cs = p.C1s * dx, cf = add(p.C2s * dx, p.C2f * dz);
        for (std::size_t i = 0; i < rate.size(); ++i)
            rate[i] = (rate[i] + (g.L2s * ys)[i] - (g.L2s * cs)[i] + (g.L2f * yf)[i] - (g.L2f * cf)[i]) / p.epsilon;

        const Vector ddy = L.get(d, StateLayout::dy);
        const Vector dhbar = add(m.hbar().Gx * L.get(d, StateLayout::dx),
                                 add(m.hbar().Ge * L.get(d, StateLayout::e_ys), m.hbar().Gu * L.get(d, StateLayout::e_us)));
        for (std::size_t i = 0; i < rate.size(); ++i)
            CHECK(ddy[i] + dhbar[i] == Approx(rate[i]).epsilon(1e-10).margin(1e-9));
        CHECK(L.scalar(d, StateLayout::tau_s) == 1.0);
        CHECK(L.scalar(d, StateLayout::tau_f) == Approx(1.0 / p.epsilon));
        CHECK(L.scalar(d, StateLayout::kappa_s) == 0.0);
    }
}

TEST_CASE("state layout") {
    const StateLayout L(fixtures::example_plant());
    CHECK(L.names().size() == L.size);
    CHECK(L.size == 2 + 1 + 1 + 1 + 1 + 1 + 2 + 1 + 2 + 1 + 1 + 1 + 1 + 2 + 1);
    Vector s(L.size, 0.0);
    CHECK_THROWS_AS(L.put(s, StateLayout::dx, Vector{1.0}), InvalidInput);
}
