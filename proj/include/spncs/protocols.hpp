#pragma once
// Scheduling protocols: jump maps, Lyapunov functions W and their certificates.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spncs/numerics.hpp"

namespace spncs {

enum class ProtocolKind { zeroing, round_robin, try_once_discard };

inline std::string to_string(ProtocolKind k) {
    switch (k) {
        case ProtocolKind::zeroing: return "zeroing";
        case ProtocolKind::round_robin: return "round_robin";
        case ProtocolKind::try_once_discard: return "try_once_discard";
    }
    return "?";
}

inline ProtocolKind protocol_kind_from_string(const std::string& s) {
    if (s == "zeroing") return ProtocolKind::zeroing;
    if (s == "round_robin" || s == "round-robin" || s == "RR") return ProtocolKind::round_robin;
    if (s == "try_once_discard" || s == "try-once-discard" || s == "TOD") return ProtocolKind::try_once_discard;
    throw InvalidConfig("unknown protocol kind: " + s);
}

struct NodePartition {
    std::vector<std::size_t> dims;

    NodePartition() = default;
    explicit NodePartition(std::vector<std::size_t> d) : dims(std::move(d)) {
        if (dims.empty()) throw InvalidInput("partition: no nodes");
        for (auto n : dims)
            if (n == 0) throw InvalidInput("partition: empty node");
    }
    std::size_t nodes() const { return dims.size(); }
    std::size_t total() const { return std::accumulate(dims.begin(), dims.end(), std::size_t{0}); }
    std::size_t offset(std::size_t k) const {
        return std::accumulate(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(k), std::size_t{0});
    }
};

struct ProtocolState {
    ProtocolKind kind = ProtocolKind::zeroing;
    NodePartition partition;
    std::uint64_t counter = 0;
};

struct ProtocolCertificate {
    double aW_lower = 1.0, aW_upper = 1.0, lambda = 0.0, M = 1.0;
    bool empirical = false;  // true when validated by sampling rather than by construction
};

namespace detail {
inline void check_dim(const ProtocolState& p, const Vector& e) {
    if (e.size() != p.partition.total()) throw InvalidInput("protocol: error dimension does not match partition");
}
inline double block_sq(const NodePartition& part, std::size_t k, const Vector& e) {
    const std::size_t o = part.offset(k);
    double s = 0.0;
    for (std::size_t i = 0; i < part.dims[k]; ++i) s += e[o + i] * e[o + i];
    return s;
}
}  // namespace detail

/// Lyapunov function W(kappa, e).
inline double w_value(const ProtocolState& p, std::uint64_t kappa, const Vector& e) {
    detail::check_dim(p, e);
    if (p.kind != ProtocolKind::round_robin) return norm(e);
    // Node transmitted k steps from now carries weight k+1.
    const std::size_t l = p.partition.nodes();
    double s = 0.0;
    for (std::size_t k = 0; k < l; ++k) s += static_cast<double>(k + 1) * detail::block_sq(p.partition, (kappa + k) % l, e);
    return std::sqrt(s);
}

/// Node granted access at counter kappa given the measured error.
inline std::size_t select_node(const ProtocolState& p, std::uint64_t kappa, const Vector& measured) {
    detail::check_dim(p, measured);
    switch (p.kind) {
        case ProtocolKind::zeroing: return 0;
        case ProtocolKind::round_robin: return static_cast<std::size_t>(kappa % p.partition.nodes());
        case ProtocolKind::try_once_discard: {
            std::size_t best = 0;
            double bv = -1.0;
            for (std::size_t k = 0; k < p.partition.nodes(); ++k) {
                const double v = detail::block_sq(p.partition, k, measured);
                if (v > bv) {  // strict: ties go to the lowest index
                    bv = v;
                    best = k;
                }
            }
            return best;
        }
    }
    return 0;
}

/// Zero the block(s) reset by a transmission of `node`.
inline Vector reset_node(const ProtocolState& p, std::size_t node, Vector e) {
    detail::check_dim(p, e);
    if (p.kind == ProtocolKind::zeroing) {
        std::fill(e.begin(), e.end(), 0.0);
        return e;
    }
    const std::size_t o = p.partition.offset(node);
    for (std::size_t i = 0; i < p.partition.dims[node]; ++i) e[o + i] = 0.0;
    return e;
}

struct JumpResult {
    Vector e_plus;
    std::size_t node;
};

inline JumpResult jump(const ProtocolState& p, std::uint64_t kappa, const Vector& e) {
    const std::size_t node = select_node(p, kappa, e);
    return {reset_node(p, node, e), node};
}

/// Closed-form certificate constants, before validation.
inline ProtocolCertificate nominal_certificate(const ProtocolState& p) {
    const double l = static_cast<double>(p.partition.nodes());
    switch (p.kind) {
        case ProtocolKind::zeroing: return {1.0, 1.0, 0.0, 1.0, false};
        case ProtocolKind::round_robin:
            if (p.partition.nodes() == 1) return {1.0, 1.0, 0.0, 1.0, false};
            return {1.0, std::sqrt(l), std::sqrt((l - 1.0) / l), std::sqrt(l), true};
        case ProtocolKind::try_once_discard:
            if (p.partition.nodes() == 1) return {1.0, 1.0, 0.0, 1.0, false};
            return {1.0, 1.0, std::sqrt((l - 1.0) / l), 1.0, true};
    }
    return {};
}

struct CertificateCheck {
    std::size_t samples = 0;
    std::size_t contraction_failures = 0;
    std::size_t sandwich_failures = 0;
    std::size_t gradient_failures = 0;
    double max_ratio = 0.0;     // max W(k+1, e+)/W(k, e)
    double max_gradient = 0.0;  // finite-difference estimate of |dW/de|
    bool ok() const { return contraction_failures == 0 && sandwich_failures == 0 && gradient_failures == 0; }
};

/// Random error vector with a random subset of nodes active (so sparse directions are visited).
inline Vector random_error(const NodePartition& part, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> dec(-3.0, 3.0);
    Vector e(part.total(), 0.0);
    const double keep = u01(rng);
    bool any = false;
    for (std::size_t k = 0; k < part.nodes(); ++k) {
        if (u01(rng) > keep && !(k + 1 == part.nodes() && !any)) continue;
        any = true;
        const std::size_t o = part.offset(k);
        for (std::size_t i = 0; i < part.dims[k]; ++i) e[o + i] = n01(rng);
    }
    const double scale = std::pow(10.0, dec(rng));
    for (auto& x : e) x *= scale;
    return e;
}

/// Sampling check of contraction, sandwich and gradient bounds for a certificate.
inline CertificateCheck validate_certificate(const ProtocolState& p, const ProtocolCertificate& c,
                                             std::size_t samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CertificateCheck r;
    r.samples = samples;
    const std::size_t l = p.partition.nodes();
    for (std::size_t s = 0; s < samples; ++s) {
        const std::uint64_t kappa = rng() % (4 * l + 1);
        const Vector e = random_error(p.partition, rng);
        const double w = w_value(p, kappa, e);
        const double ne = norm(e);
        if (w < c.aW_lower * ne * (1 - 1e-12) || w > c.aW_upper * ne * (1 + 1e-12)) ++r.sandwich_failures;
        const JumpResult j = jump(p, kappa, e);
        const double wp = w_value(p, kappa + 1, j.e_plus);
        if (wp > c.lambda * w + 1e-12 * (1.0 + w)) ++r.contraction_failures;
        if (w > 0) r.max_ratio = std::max(r.max_ratio, wp / w);
        // central differences on a unit-scaled copy
        Vector x = e;
        for (auto& v : x) v /= (ne > 0 ? ne : 1.0);
        double g2 = 0.0;
        const double h = 1e-6;
        for (std::size_t i = 0; i < x.size(); ++i) {
            Vector a = x, b = x;
            a[i] += h;
            b[i] -= h;
            const double gi = (w_value(p, kappa, a) - w_value(p, kappa, b)) / (2 * h);
            g2 += gi * gi;
        }
        const double g = std::sqrt(g2);
        r.max_gradient = std::max(r.max_gradient, g);
        if (g > c.M + 1e-6) ++r.gradient_failures;
    }
    return r;
}

/// Certificate (aW_lower, aW_upper, lambda, M); multi-node constructions are validated by sampling.
inline ProtocolCertificate certificate(const ProtocolState& p, std::size_t samples = 10000, std::uint64_t seed = 12345) {
    const ProtocolCertificate c = nominal_certificate(p);
    if (c.empirical) {
        const CertificateCheck chk = validate_certificate(p, c, samples, seed);
        if (!chk.ok()) throw DesignInfeasible("protocol certificate failed empirical validation");
    }
    return c;
}

struct CompanionResult {
    Vector e_ys, vhat1;
};

/// Companion updates at a slow transmission of `node`: the node's e_ys block is zeroed
/// and its vhat1 block latches the current v1. `part` partitions the slow output only.
inline CompanionResult companion_jumps(const NodePartition& part, bool all_nodes, std::size_t node,
                                       Vector e_ys, Vector vhat1, const Vector& v1) {
    if (e_ys.size() != part.total() || vhat1.size() != part.total() || v1.size() != part.total())
        throw InvalidInput("companion_jumps: dimension mismatch");
    std::size_t lo = 0, hi = part.total();
    if (!all_nodes) {
        lo = part.offset(node);
        hi = lo + part.dims[node];
    }
    for (std::size_t i = lo; i < hi; ++i) {
        e_ys[i] = 0.0;
        vhat1[i] = v1[i];
    }
    return {std::move(e_ys), std::move(vhat1)};
}

}  // namespace spncs
