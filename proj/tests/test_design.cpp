#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "spncs/bounds.hpp"
#include "spncs/config.hpp"
#include "spncs/design.hpp"

using namespace spncs;
using Catch::Approx;

namespace {
const char* kConfig = "configs/example.json";

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
    std::normal_distribution<double> n01(0.0, s);
    Matrix m(r, c);
    for (auto& x : m.data()) x = n01(rng);
    return m;
}

Matrix random_pd(std::size_t n, std::mt19937_64& rng) {
    const Matrix g = random_matrix(n, n, rng);
    Matrix p = g * g.transpose();
    for (std::size_t i = 0; i < n; ++i) p(i, i) += 0.1;
    return p;
}

ProtocolCertificate unit_certificate() {
    ProtocolCertificate c;
    c.aW_lower = c.aW_upper = c.M = 1.0;
    c.lambda = 0.0;
    return c;
}

struct Example {
    ExperimentConfig cfg;
    ProtocolCertificate cs, cf;
    DesignProblem prob;
    DesignResult printed;
};

Example example() {
    Example e;
    e.cfg = load_config(kConfig);
    e.cs = certificate(e.cfg.proto_s);
    e.cf = certificate(e.cfg.proto_f);
    e.prob = e.cfg.problem(e.cs, e.cf);
    e.printed = e.cfg.design_result();
    return e;
}
}  // namespace

TEST_CASE("growth constants at the example gains") {
    const PlantParams p = fixtures::example_plant();
    const ObserverGains g = fixtures::example_gains();
    const FastBlocks f = build_fast_blocks(p, g);
    const ReducedBlocks r = build_reduced_blocks(p, g, f);
    const auto c = certificate(ProtocolState{ProtocolKind::zeroing, NodePartition({1})});
    const GrowthConstants k = growth_constants(f, r, c, c);
    CHECK(k.L_s == Approx(1.85).margin(5e-3));
    CHECK(k.L_f == 0.0);
}

TEST_CASE("printed certificates do not satisfy the LMIs") {
    // frozen values: the top-left block of the boundary-layer LMI is indefinite at the printed P and a_rho
    const Example e = example();
    const VerifyReport v = verify_design(e.prob, e.printed);
    CHECK(v.hurwitz);
    CHECK(v.bl_max_eig == Approx(0.0546505).epsilon(1e-5));
    CHECK(v.red_max_eig == Approx(0.889674).epsilon(1e-5));
    CHECK(v.pf_min_eig > 0);
    CHECK(v.ps_min_eig > 0);
    CHECK_FALSE(v.pass);
    DesignResult d = e.printed;
    d.fast->gamma = 1e3;
    CHECK(verify_design(e.prob, d).bl_max_eig == Approx(v.bl_max_eig));
}

TEST_CASE("Schur minimal gamma agrees with the eigenvalue test on 500 instances") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int finite = 0;
    for (int k = 0; k < 500; ++k) {
        const std::size_t n = 1 + k % 3, m = 1 + k % 2;
        const Matrix P = random_pd(n, rng);
        Matrix A = random_matrix(n, n, rng);
        for (std::size_t i = 0; i < n; ++i) A(i, i) -= 3.0;
        const Matrix B = random_matrix(n, m, rng, 0.5);
        const Matrix AH = random_matrix(1, n, rng, 0.3);
        const double a_rho = 0.01 + 0.2 * u(rng), eta1 = (k % 2) ? 0.0 : 0.1 * u(rng);
        ProtocolCertificate c = unit_certificate();
        c.aW_lower = 0.5 + 0.5 * u(rng);
        c.aW_upper = 1.0 + u(rng);
        const SchurGamma s = schur_min_gamma(P, A, B, AH, a_rho, eta1, c);
        auto lmax = [&](double g) { return sym_eigvals(detail::assemble_lmi(P, A, B, AH, a_rho, g, eta1, c)).max(); };
        if (std::isfinite(s.gamma)) {
            ++finite;
            CHECK(lmax(s.gamma * (1 + 1e-6)) <= 1e-8);
            CHECK(lmax(s.gamma * (1 - 1e-3)) > 0);
        } else {
            CHECK(lmax(1e4) > 0);
        }
    }
    CHECK(finite > 250);
}

TEST_CASE("feasibility is monotone in gamma") {
    std::mt19937_64 rng(8);
    for (int k = 0; k < 100; ++k) {
        const Matrix P = random_pd(2, rng);
        Matrix A = random_matrix(2, 2, rng);
        A(0, 0) -= 2.0;
        A(1, 1) -= 2.0;
        const Matrix B = random_matrix(2, 1, rng), AH = random_matrix(1, 2, rng, 0.2);
        const ProtocolCertificate c = unit_certificate();
        double prev = std::numeric_limits<double>::infinity();
        for (double g = 0.0; g <= 20.0; g += 0.5) {
            const double v = sym_eigvals(detail::assemble_lmi(P, A, B, AH, 0.05, g, 0.0, c)).max();
            CHECK(v <= prev + 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("a large eta1 makes the reduced LMI infeasible") {
    const Example e = example();
    DesignResult d = e.printed;
    d.reduced->gamma = 1e3;
    d.reduced->eta1 = 1e3;
    CHECK_FALSE(verify_design(e.prob, d).pass);
}

TEST_CASE("scalar instance: minimal gamma is sqrt of the a_rho floor") {
    // A22 = -1, C2f = 1, zero gains: Af12 = 0 and the LMI reads diag(-2p + 1 + a_rho, a_rho - gamma^2).
    PlantParams p;
    p.A11 = Matrix{{-1.0}};
    p.A12 = Matrix{{0.0}};
    p.A21 = Matrix{{0.0}};
    p.A22 = Matrix{{-1.0}};
    p.B1 = Matrix{{1.0}};
    p.B2 = Matrix{{0.0}};
    p.C1s = Matrix{{1.0}};
    p.C2s = Matrix{{0.0}};
    p.C2f = Matrix{{1.0}};
    p.epsilon = 0.01;
    const ObserverGains g{Matrix{{0.5}}, Matrix{{0.0}}, Matrix{{0.0}}, Matrix{{0.0}}};
    DesignProblem prob;
    prob.plant = p;
    prob.structure = GainTemplate::fixed(g);
    prob.cert_s = prob.cert_f = unit_certificate();

    // grid oracle over (p, a_rho, gamma)
    const FastBlocks f = build_fast_blocks(p, g);
    double grid_best = std::numeric_limits<double>::infinity();
    for (double P = 0.1; P <= 5.0; P += 0.1)
        for (double ar : {1e-6, 1e-4, 1e-2, 0.1})
            for (double gam = 1e-4; gam <= 1.0; gam *= 1.05) {
                const SymMatrix m = assemble_lmi_bl(
                    f, prob.cert_f, {LmiKind::boundary_layer, SymMatrix::from_lower(Matrix{{P}}), ar, gam, 0.0});
                if (sym_eigvals(m).max() <= 0) {
                    grid_best = std::min(grid_best, gam);
                    break;
                }
            }
    CHECK(grid_best == Approx(1e-3).epsilon(0.06));

    SearchConfig sc;
    sc.bisection_tol = 1e-4;
    sc.gamma_max = 10.0;
    const DesignResult d = min_gamma(LmiKind::boundary_layer, prob, sc);
    CHECK(d.fast->gamma >= std::sqrt(sc.a_rho_floor) * (1 - 1e-9));
    CHECK(d.fast->gamma <= grid_best + 2 * sc.bisection_tol);
    CHECK(verify_design(prob, d).pass);
}

TEST_CASE("minimal gammas on the example meet the printed levels") {
    const Example e = example();
    SearchConfig sc = e.cfg.search;
    const DesignResult df = min_gamma(LmiKind::boundary_layer, e.prob, sc);
    const DesignResult ds = min_gamma(LmiKind::reduced, e.prob, sc);
    CHECK(df.fast->gamma <= 1.7);
    CHECK(ds.reduced->gamma <= 3.6);
    CHECK(verify_design(e.prob, df).pass);
    CHECK(verify_design(e.prob, ds).pass);

    sc.gamma_max = 0.5;
    CHECK_THROWS_AS(min_gamma(LmiKind::reduced, e.prob, sc), InfeasibleAtUpperBound);
}

TEST_CASE("minimal gamma is deterministic for a fixed seed") {
    const Example e = example();
    const DesignResult a = min_gamma(LmiKind::reduced, e.prob, e.cfg.search);
    const DesignResult b = min_gamma(LmiKind::reduced, e.prob, e.cfg.search);
    CHECK(a.reduced->gamma == b.reduced->gamma);
    CHECK(a.params == b.params);
}

TEST_CASE("evaluation mode scores the starting design only") {
    const Example e = example();
    const auto obj = make_mati_objective(e.cfg.plant, e.cfg.proto_s, e.cfg.proto_f, e.cs, e.cf, e.cfg.timing,
                                         e.cfg.pipeline);
    SearchConfig sc = e.cfg.search;
    sc.sweeps = 0;
    // the printed certificates are infeasible, so evaluating them alone must fail
    CHECK_THROWS_AS(maximize_mati_objective(e.prob, obj, sc, {e.printed.fast, e.printed.reduced}), DesignInfeasible);
}

TEST_CASE("objective maximisation is seed-robust") {
    const Example e = example();
    const auto obj = make_mati_objective(e.cfg.plant, e.cfg.proto_s, e.cfg.proto_f, e.cs, e.cf, e.cfg.timing,
                                         e.cfg.pipeline);
    SearchConfig sc = e.cfg.search;
    sc.max_evals = 60000;
    std::vector<double> best;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        sc.seed = seed;
        const DesignResult d = maximize_mati_objective(e.prob, obj, sc, {e.printed.fast, e.printed.reduced});
        CHECK(verify_design(e.prob, d).pass);
        CHECK(d.objective > 0);
        best.push_back(d.objective);

        SearchConfig ev = sc;
        ev.sweeps = 0;
        DesignProblem at = e.prob;
        at.structure.initial = d.params;
        const DesignResult again = maximize_mati_objective(at, obj, ev, {d.fast, d.reduced});
        CHECK(again.objective == Approx(d.objective).epsilon(1e-6));
    }
    const auto [lo, hi] = std::minmax_element(best.begin(), best.end());
    CHECK(*lo >= 0.95 * *hi);
}

TEST_CASE("gain templates") {
    const Example e = example();
    const GainTemplate& t = e.prob.structure;
    REQUIRE(t.size() == 3);
    const ObserverGains g = t.make({0.02, 0.01, 0.18});
    const ObserverGains ref = fixtures::example_gains();
    CHECK(g.L1s == ref.L1s);
    CHECK(g.L1f == ref.L1f);
    CHECK(g.L2s == ref.L2s);
    CHECK(g.L2f == ref.L2f);
    CHECK_THROWS_AS(t.make({1.0}), InvalidInput);
    CHECK_THROWS_AS(t.parse_entry("2*"), InvalidConfig);
    CHECK_THROWS_AS(t.parse_entry("n9"), InvalidConfig);
    const auto ent = t.parse_entry("0.5 - 2*n1 + n3");
    CHECK(ent.constant == 0.5);
    REQUIRE(ent.terms.size() == 2);
    CHECK(ent.terms[0].coef == -2.0);
}
