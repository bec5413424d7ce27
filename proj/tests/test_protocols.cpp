#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spncs/protocols.hpp"

using namespace spncs;
using Catch::Approx;

namespace {
ProtocolState make(ProtocolKind k, std::vector<std::size_t> dims) {
    ProtocolState p;
    p.kind = k;
    p.partition = NodePartition(std::move(dims));
    return p;
}
}  // namespace

TEST_CASE("partition invariants") {
    CHECK_THROWS_AS(NodePartition(std::vector<std::size_t>{}), InvalidInput);
    CHECK_THROWS_AS(NodePartition({1, 0}), InvalidInput);
    const NodePartition p({2, 1, 3});
    CHECK(p.total() == 6);
    CHECK(p.offset(2) == 3);
}

TEST_CASE("W values") {
    const auto z = make(ProtocolKind::zeroing, {2});
    CHECK(w_value(z, 7, {3, 4}) == Approx(5.0));
    for (auto k : {ProtocolKind::zeroing, ProtocolKind::round_robin, ProtocolKind::try_once_discard})
        CHECK(w_value(make(k, {1, 1}), 3, {0, 0}) == 0.0);
    CHECK_THROWS_AS(w_value(z, 0, {1, 2, 3}), InvalidInput);
}

TEST_CASE("jump maps") {
    const auto z = make(ProtocolKind::zeroing, {2});
    const JumpResult jz = jump(z, 4, {1, -2});
    CHECK(jz.e_plus == Vector{0, 0});

    const auto rr = make(ProtocolKind::round_robin, {1, 1});
    const JumpResult j0 = jump(rr, 0, {1, 2});
    CHECK(j0.e_plus == Vector{0, 2});
    CHECK(j0.node == 0);
    CHECK(jump(rr, 1, {1, 2}).node == 1);

    const auto tod = make(ProtocolKind::try_once_discard, {1, 1});
    const JumpResult jt = jump(tod, 0, {1, 3});
    CHECK(jt.e_plus == Vector{1, 0});
    CHECK(jt.node == 1);
    CHECK(jump(tod, 0, {2, -2}).node == 0);  // tie goes to the lowest index
}

TEST_CASE("certificates by construction") {
    const auto cz = certificate(make(ProtocolKind::zeroing, {3}));
    CHECK(cz.aW_lower == 1.0);
    CHECK(cz.aW_upper == 1.0);
    CHECK(cz.lambda == 0.0);
    CHECK(cz.M == 1.0);
    const auto c1 = certificate(make(ProtocolKind::round_robin, {2}));
    CHECK(c1.lambda == 0.0);
    CHECK(c1.aW_upper == 1.0);
    const auto c2 = certificate(make(ProtocolKind::round_robin, {1, 1}));
    CHECK(c2.lambda == Approx(std::sqrt(0.5)));
    CHECK(c2.empirical);
    const auto ct = certificate(make(ProtocolKind::try_once_discard, {1, 2, 1}));
    CHECK(ct.lambda == Approx(std::sqrt(2.0 / 3.0)));
    CHECK(ct.M == 1.0);
}

TEST_CASE("contraction, sandwich and gradient properties on 1e4 samples") {
    const std::vector<ProtocolState> cases{
        make(ProtocolKind::zeroing, {2}),          make(ProtocolKind::round_robin, {1, 1}),
        make(ProtocolKind::round_robin, {2, 1, 1}), make(ProtocolKind::round_robin, {1, 1, 1, 1}),
        make(ProtocolKind::try_once_discard, {1, 1}), make(ProtocolKind::try_once_discard, {2, 1, 3})};
    for (const auto& p : cases) {
        const ProtocolCertificate c = nominal_certificate(p);
        const CertificateCheck chk = validate_certificate(p, c, 10000, 99);
        INFO(to_string(p.kind) << " with " << p.partition.nodes() << " nodes");
        CHECK(chk.contraction_failures == 0);
        CHECK(chk.sandwich_failures == 0);
        CHECK(chk.gradient_failures == 0);
        if (p.kind == ProtocolKind::round_robin) CHECK(chk.max_ratio >= 0.95 * c.lambda);
    }
}

TEST_CASE("an understated contraction factor is rejected") {
    const auto rr = make(ProtocolKind::round_robin, {1, 1, 1});
    ProtocolCertificate c = nominal_certificate(rr);
    c.lambda *= 0.9;
    CHECK_FALSE(validate_certificate(rr, c, 5000, 1).ok());
}

TEST_CASE("exactly one node resets and other blocks are bit-identical") {
    std::mt19937_64 rng(4);
    for (auto k : {ProtocolKind::round_robin, ProtocolKind::try_once_discard}) {
        const auto p = make(k, {2, 1, 3});
        for (int s = 0; s < 2000; ++s) {
            const Vector e = random_error(p.partition, rng);
            const std::uint64_t kappa = rng() % 10;
            const JumpResult j = jump(p, kappa, e);
            for (std::size_t n = 0; n < p.partition.nodes(); ++n) {
                const std::size_t o = p.partition.offset(n);
                for (std::size_t i = 0; i < p.partition.dims[n]; ++i) {
                    if (n == j.node) CHECK(j.e_plus[o + i] == 0.0);
                    else CHECK(j.e_plus[o + i] == e[o + i]);
                }
            }
        }
    }
}

TEST_CASE("companion jumps") {
    const NodePartition one({1});
    const auto r = companion_jumps(one, true, 0, {0.3}, {0.1}, {-0.2});
    CHECK(r.e_ys == Vector{0.0});
    CHECK(r.vhat1 == Vector{-0.2});
    const auto z = companion_jumps(one, true, 0, {0.3}, {0.1}, {0.0});
    CHECK(z.vhat1 == Vector{0.0});

    const NodePartition two({1, 2});
    const auto m = companion_jumps(two, false, 1, {1, 2, 3}, {4, 5, 6}, {7, 8, 9});
    CHECK(m.e_ys == Vector{1, 0, 0});
    CHECK(m.vhat1 == Vector{4, 8, 9});
    CHECK_THROWS_AS(companion_jumps(two, false, 0, {1}, {1}, {1}), InvalidInput);
}
