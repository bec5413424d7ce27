#pragma once
// LMI design conditions, growth constants and derivative-free gain/certificate search.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spncs/model.hpp"
#include "spncs/numerics.hpp"
#include "spncs/protocols.hpp"

namespace spncs {

// ---------------------------------------------------------------- growth constants

struct GrowthConstants {
    double L_s = 0, aws_v1 = 0, aws_v2 = 0, L_f = 0;
    Matrix A_Hs, A_Hf;
};

inline GrowthConstants growth_constants(const FastBlocks& f, const ReducedBlocks& r, const ProtocolCertificate& cs,
                                        const ProtocolCertificate& cf) {
    GrowthConstants g;
    g.L_s = cs.M * spectral_norm(r.As22) / cs.aW_lower;
    g.A_Hs = cs.M * r.As21;
    g.aws_v1 = cs.M * spectral_norm(r.Ar24);
    g.aws_v2 = cs.M * spectral_norm(r.Ar25);
    g.L_f = cf.M * spectral_norm(f.Af22) / cf.aW_lower;
    g.A_Hf = cf.M * f.Af21;
    return g;
}

// ---------------------------------------------------------------- LMIs

enum class LmiKind { boundary_layer, reduced };

struct LmiInstance {
    LmiKind which = LmiKind::boundary_layer;
    SymMatrix P;
    double a_rho = 0, gamma = 0, eta1 = 0;
};

namespace detail {
inline SymMatrix assemble_lmi(const Matrix& P, const Matrix& A, const Matrix& B, const Matrix& AH, double a_rho,
                              double gamma, double eta1, const ProtocolCertificate& c) {
    const std::size_t n = A.rows(), m = B.cols();
    if (P.rows() != n || B.rows() != n || AH.cols() != n) throw InvalidInput("LMI: dimension mismatch");
    const Matrix PA = P * A;
    Matrix tl = PA + PA.transpose() + AH.transpose() * AH;
    if (eta1 != 0.0) tl += eta1 * (P.transpose() * P);
    for (std::size_t i = 0; i < n; ++i) tl(i, i) += a_rho;
    const Matrix tr = P * B;
    const double br = a_rho * c.aW_upper * c.aW_upper - gamma * gamma * c.aW_lower * c.aW_lower;
    SymMatrix s(n + m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) s.set(i, j, 0.5 * (tl(i, j) + tl(j, i)));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) s.set(n + i, j, tr(j, i));
        s.set(n + i, n + i, br);
    }
    return s;
}
}  // namespace detail

inline SymMatrix assemble_lmi_bl(const FastBlocks& f, const ProtocolCertificate& cf, const LmiInstance& inst) {
    if (inst.which != LmiKind::boundary_layer) throw InvalidInput("assemble_lmi_bl: wrong instance kind");
    return detail::assemble_lmi(inst.P.full(), f.Af11, f.Af12, cf.M * f.Af21, inst.a_rho, inst.gamma, 0.0, cf);
}

inline SymMatrix assemble_lmi_reduced(const ReducedBlocks& r, const ProtocolCertificate& cs, const LmiInstance& inst) {
    if (inst.which != LmiKind::reduced) throw InvalidInput("assemble_lmi_reduced: wrong instance kind");
    return detail::assemble_lmi(inst.P.full(), r.As11, r.As12, cs.M * r.As21, inst.a_rho, inst.gamma, inst.eta1, cs);
}

/// Smallest gamma making the LMI feasible for fixed (P, a_rho, eta1), via the Schur complement
/// on the top-left block. Returns +inf when the top-left block is not negative definite
/// (or not negative semidefinite when the coupling block vanishes).
struct SchurGamma {
    double gamma = std::numeric_limits<double>::infinity();
    double top_left_max = 0;  // lambda_max of the top-left block
};

inline SchurGamma schur_min_gamma(const Matrix& P, const Matrix& A, const Matrix& B, const Matrix& AH, double a_rho,
                                  double eta1, const ProtocolCertificate& c) {
    const std::size_t n = A.rows();
    const Matrix PA = P * A;
    Matrix tl = PA + PA.transpose() + AH.transpose() * AH;
    if (eta1 != 0.0) tl += eta1 * (P.transpose() * P);
    for (std::size_t i = 0; i < n; ++i) tl(i, i) += a_rho;
    const SymMatrix tls = SymMatrix::symmetric_part(tl);
    SchurGamma out;
    out.top_left_max = sym_eigvals(tls).max();
    const Matrix tr = P * B;
    const double base = a_rho * c.aW_upper * c.aW_upper;
    double extra = 0.0;
    if (frobenius_norm(tr) == 0.0) {
        if (out.top_left_max > tol::lmi) return out;
    } else {
        if (out.top_left_max >= -1e-12) return out;
        Matrix x;
        try {
            x = solve_linear(-tls.full(), tr);
        } catch (const SingularMatrix&) {
            return out;
        }
        extra = std::max(0.0, sym_eigvals(SymMatrix::symmetric_part(tr.transpose() * x)).max());
    }
    const double g2 = (base + extra) / (c.aW_lower * c.aW_lower);
    out.gamma = std::sqrt(g2 * (1.0 + 1e-10) + 1e-14);
    return out;
}

// ---------------------------------------------------------------- gain templates

/// \brief Gains as affine functions of named parameters. Each entry is a constant plus
/// a sum of coefficient*parameter terms.
struct GainTemplate {
    struct Term {
        std::size_t param;
        double coef;
    };
    struct Entry {
        double constant = 0.0;
        std::vector<Term> terms;
    };
    struct Shape {
        std::size_t rows = 0, cols = 0;
        std::vector<Entry> entries;  // row-major
    };

    std::vector<std::string> names;
    Vector initial;
    std::vector<bool> free;  // parameters excluded from search when false
    Shape L1s, L1f, L2s, L2f;

    std::size_t size() const { return names.size(); }

    std::size_t index_of(const std::string& n) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return i;
        throw InvalidConfig("gain template: unknown parameter '" + n + "'");
    }

    /// Parses "n1", "-n2", "0", "2.5", "0.5*n1 - n3 + 1" into an Entry.
    Entry parse_entry(const std::string& text) const {
        Entry e;
        std::size_t i = 0;
        auto skip = [&] {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        };
        bool first = true;
        while (true) {
            skip();
            if (i >= text.size()) break;
            double sign = 1.0;
            if (text[i] == '+' || text[i] == '-') {
                sign = text[i] == '-' ? -1.0 : 1.0;
                ++i;
                skip();
            } else if (!first) {
                throw InvalidConfig("gain template: cannot parse '" + text + "'");
            }
            first = false;
            double coef = 1.0;
            bool have_num = false;
            if (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.')) {
                std::size_t used = 0;
                coef = std::stod(text.substr(i), &used);
                i += used;
                have_num = true;
                skip();
                if (i < text.size() && text[i] == '*') {
                    ++i;
                    skip();
                } else {
                    e.constant += sign * coef;
                    continue;
                }
            }
            std::size_t j = i;
            while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
            if (j == i) {
                if (have_num) throw InvalidConfig("gain template: dangling '*' in '" + text + "'");
                throw InvalidConfig("gain template: cannot parse '" + text + "'");
            }
            e.terms.push_back({index_of(text.substr(i, j - i)), sign * coef});
            i = j;
        }
        return e;
    }

    Shape parse_shape(const std::vector<std::vector<std::string>>& rows) const {
        Shape s;
        s.rows = rows.size();
        s.cols = rows.empty() ? 0 : rows.front().size();
        for (const auto& r : rows) {
            if (r.size() != s.cols) throw InvalidConfig("gain template: ragged matrix");
            for (const auto& t : r) s.entries.push_back(parse_entry(t));
        }
        return s;
    }

    static Matrix eval(const Shape& s, const Vector& theta) {
        Matrix m(s.rows, s.cols);
        for (std::size_t k = 0; k < s.entries.size(); ++k) {
            double v = s.entries[k].constant;
            for (const auto& t : s.entries[k].terms) v += t.coef * theta[t.param];
            m(k / s.cols, k % s.cols) = v;
        }
        return m;
    }

    ObserverGains make(const Vector& theta) const {
        if (theta.size() != names.size()) throw InvalidInput("gain template: parameter count mismatch");
        return {eval(L1s, theta), eval(L1f, theta), eval(L2s, theta), eval(L2f, theta)};
    }

    /// Template with no parameters reproducing fixed gains.
    static GainTemplate fixed(const ObserverGains& g) {
        GainTemplate t;
        auto shape = [](const Matrix& m) {
            Shape s;
            s.rows = m.rows();
            s.cols = m.cols();
            for (double v : m.data()) s.entries.push_back({v, {}});
            return s;
        };
        t.L1s = shape(g.L1s);
        t.L1f = shape(g.L1f);
        t.L2s = shape(g.L2s);
        t.L2f = shape(g.L2f);
        return t;
    }
};

// ---------------------------------------------------------------- design results

struct LmiSide {
    SymMatrix P;
    double gamma = 0, a_rho = 0, eta1 = 0;
    double max_eig = 0;  // lambda_max of the assembled LMI
};

struct SearchConfig {
    int restarts = 32;
    int sweeps = 200;
    double bisection_tol = 1e-3;
    double gamma_max = 100.0;
    std::uint64_t seed = 7;
    double a_rho_floor = 1e-6;
    double eta1_floor = 1e-6;
    double log_upper = 8.0;          // upper bound on log-parameters
    double min_step = 1e-6;          // coordinate step at which a restart stops
    int cma_restarts = 4;            // population-doubling restarts of the objective search
    std::size_t max_evals = 200000;  // evaluation budget of the objective search
    std::optional<double> fixed_a_rho;  // pin a_rho (both sides) when set
    std::optional<double> fixed_eta1;
};

struct DesignResult {
    ObserverGains gains;
    Vector params;
    std::optional<LmiSide> fast, reduced;
    double objective = std::numeric_limits<double>::quiet_NaN();
    SearchConfig config;
    std::size_t evaluations = 0;
};

struct DesignProblem {
    PlantParams plant;
    GainTemplate structure;
    ProtocolCertificate cert_s, cert_f;
};

struct VerifyReport {
    bool hurwitz = false;
    double bl_max_eig = std::numeric_limits<double>::quiet_NaN();
    double red_max_eig = std::numeric_limits<double>::quiet_NaN();
    double pf_min_eig = std::numeric_limits<double>::quiet_NaN();
    double ps_min_eig = std::numeric_limits<double>::quiet_NaN();
    bool pass = false;
};

inline VerifyReport verify_design(const DesignProblem& prob, const DesignResult& d, double tolerance = tol::lmi) {
    VerifyReport v;
    FastBlocks f;
    try {
        f = build_fast_blocks(prob.plant, d.gains);
        v.hurwitz = true;
    } catch (const DesignInfeasible&) {
        return v;
    }
    bool ok = true;
    if (d.fast) {
        v.bl_max_eig = sym_eigvals(assemble_lmi_bl(
            f, prob.cert_f, {LmiKind::boundary_layer, d.fast->P, d.fast->a_rho, d.fast->gamma, 0.0})).max();
        v.pf_min_eig = sym_eigvals(d.fast->P).min();
        ok = ok && v.bl_max_eig <= tolerance && v.pf_min_eig > tol::pd_min && d.fast->a_rho > 0;
    }
    if (d.reduced) {
        const ReducedBlocks r = build_reduced_blocks(prob.plant, d.gains, f);
        v.red_max_eig = sym_eigvals(assemble_lmi_reduced(
            r, prob.cert_s, {LmiKind::reduced, d.reduced->P, d.reduced->a_rho, d.reduced->gamma, d.reduced->eta1})).max();
        v.ps_min_eig = sym_eigvals(d.reduced->P).min();
        ok = ok && v.red_max_eig <= tolerance && v.ps_min_eig > tol::pd_min && d.reduced->a_rho > 0;
    }
    v.pass = ok;
    return v;
}

// ---------------------------------------------------------------- search engine

/// \brief Compass (coordinate) search with restarts. Minimizes f over a box.
struct CompassSearch {
    Vector lower, upper, step0, spread;
    int restarts = 32, sweeps = 200;
    double min_step = 1e-6;
    std::uint64_t seed = 7;

    struct Result {
        Vector x;
        double f = std::numeric_limits<double>::infinity();
        std::size_t evaluations = 0;
    };

    template <class F>
    Result run(F&& f, const Vector& x0, double stop_below = -std::numeric_limits<double>::infinity()) const {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n01(0.0, 1.0);
        Result best;
        const std::size_t n = x0.size();
        auto clamp = [&](Vector x) {
            for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
            return x;
        };
        auto better = [](double fa, const Vector& a, double fb, const Vector& b) {
            if (fa != fb) return fa < fb;
            return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
        };
        for (int r = 0; r < std::max(1, restarts); ++r) {
            Vector x = x0;
            if (r > 0)
                for (std::size_t i = 0; i < n; ++i) x[i] += spread[i] * n01(rng);
            x = clamp(x);
            double fx = f(x);
            ++best.evaluations;
            Vector step = step0;
            for (int s = 0; s < sweeps && n > 0; ++s) {
                bool improved = false;
                for (std::size_t i = 0; i < n; ++i) {
                    for (int dir : {+1, -1}) {
                        Vector y = x;
                        y[i] = std::clamp(x[i] + dir * step[i], lower[i], upper[i]);
                        if (y[i] == x[i]) continue;
                        const double fy = f(y);
                        ++best.evaluations;
                        if (fy < fx) {
                            x = std::move(y);
                            fx = fy;
                            improved = true;
                            step[i] *= 1.5;
                            break;
                        }
                    }
                }
                if (fx <= stop_below) break;
                if (!improved) {
                    double mx = 0.0;
                    for (auto& st : step) {
                        st *= 0.5;
                        mx = std::max(mx, st);
                    }
                    if (mx < min_step) break;
                }
            }
            if (r == 0 || better(fx, x, best.f, best.x)) {
                best.x = x;
                best.f = fx;
            }
            if (best.f <= stop_below) break;
        }
        return best;
    }
};

/// \brief CMA-ES with increasing-population restarts. Minimizes f; box bounds are handled by
/// evaluating at the clamped point plus a quadratic distance penalty.
struct CmaEs {
    Vector lower, upper, scale;  // scale: initial per-coordinate standard deviation
    int restarts = 4;
    std::size_t max_evals = 200000;
    double tol_x = 1e-10;
    double sigma0 = 1.0;
    bool restart_from_best = false;
    std::uint64_t seed = 7;

    struct Result {
        Vector x;
        double f = std::numeric_limits<double>::infinity();
        std::size_t evaluations = 0;
    };

    template <class F>
    Result run(F&& f, const Vector& x0) const {
        const std::size_t n = x0.size();
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n01(0.0, 1.0);
        Result best;
        auto clamp = [&](const Vector& x) {
            Vector y = x;
            for (std::size_t i = 0; i < n; ++i) y[i] = std::clamp(y[i], lower[i], upper[i]);
            return y;
        };
        auto eval = [&](const Vector& x) {
            const Vector y = clamp(x);
            double pen = 0.0;
            for (std::size_t i = 0; i < n; ++i) pen += (x[i] - y[i]) * (x[i] - y[i]);
            const double fy = f(y);
            ++best.evaluations;
            if (fy < best.f || (fy == best.f && std::lexicographical_compare(y.begin(), y.end(), best.x.begin(),
                                                                               best.x.end()))) {
                best.f = fy;
                best.x = y;
            }
            return fy + 1e3 * pen;
        };
        if (n == 0) {
            best.x = x0;
            best.f = f(x0);
            best.evaluations = 1;
            return best;
        }
        eval(x0);
        const double dn = static_cast<double>(n);
        const double chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));
        std::size_t lambda = 4 + static_cast<std::size_t>(3.0 * std::log(dn));
        for (int r = 0; r <= restarts && best.evaluations < max_evals; ++r, lambda *= 2) {
            const std::size_t mu = lambda / 2;
            Vector w(mu);
            for (std::size_t i = 0; i < mu; ++i) w[i] = std::log(static_cast<double>(mu) + 0.5) - std::log(i + 1.0);
            double sw = 0, sw2 = 0;
            for (double v : w) sw += v;
            for (double& v : w) v /= sw;
            for (double v : w) sw2 += v * v;
            const double mueff = 1.0 / sw2;
            const double cc = (4.0 + mueff / dn) / (dn + 4.0 + 2.0 * mueff / dn);
            const double cs = (mueff + 2.0) / (dn + mueff + 5.0);
            const double c1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + mueff);
            const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dn + 2.0) * (dn + 2.0) + mueff));
            const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (dn + 1.0)) - 1.0) + cs;

            Vector m = restart_from_best && r > 0 ? best.x : x0;
            double sigma = restart_from_best && r > 0 ? 0.5 * sigma0 : sigma0;
            Matrix C = Matrix::diag([&] {
                Vector d(n);
                for (std::size_t i = 0; i < n; ++i) d[i] = scale[i] * scale[i];
                return d;
            }());
            Vector pc(n, 0.0), ps(n, 0.0);
            std::vector<double> history;
            int flat_gens = 0;
            for (std::size_t gen = 0; best.evaluations < max_evals; ++gen) {
                const EigDecomposition e = sym_eig(SymMatrix::symmetric_part(C));
                Vector D(n);
                for (std::size_t i = 0; i < n; ++i) D[i] = std::sqrt(std::max(e.eigenvalues[i], 1e-300));
                std::vector<Vector> ys(lambda), xs(lambda);
                std::vector<std::pair<double, std::size_t>> fit(lambda);
                for (std::size_t k = 0; k < lambda; ++k) {
                    Vector z(n);
                    for (auto& v : z) v = n01(rng);
                    Vector y(n, 0.0);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < n; ++j) y[i] += e.vectors(i, j) * D[j] * z[j];
                    Vector x = m;
                    for (std::size_t i = 0; i < n; ++i) x[i] += sigma * y[i];
                    fit[k] = {eval(x), k};
                    ys[k] = std::move(y);
                    xs[k] = std::move(x);
                }
                std::stable_sort(fit.begin(), fit.end(),
                                 [](const auto& a, const auto& b) { return a.first < b.first; });
                Vector yw(n, 0.0);
                for (std::size_t i = 0; i < mu; ++i)
                    for (std::size_t j = 0; j < n; ++j) yw[j] += w[i] * ys[fit[i].second][j];
                for (std::size_t j = 0; j < n; ++j) m[j] += sigma * yw[j];
                // C^{-1/2} yw
                Vector t(n, 0.0), cinv(n, 0.0);
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < n; ++i) t[j] += e.vectors(i, j) * yw[i];
                for (std::size_t j = 0; j < n; ++j) t[j] /= D[j];
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) cinv[i] += e.vectors(i, j) * t[j];
                const double a_s = std::sqrt(cs * (2.0 - cs) * mueff);
                for (std::size_t i = 0; i < n; ++i) ps[i] = (1.0 - cs) * ps[i] + a_s * cinv[i];
                const double nps = norm(ps);
                const bool hsig =
                    nps / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * (gen + 1.0))) / chi_n < 1.4 + 2.0 / (dn + 1.0);
                const double a_c = std::sqrt(cc * (2.0 - cc) * mueff);
                for (std::size_t i = 0; i < n; ++i) pc[i] = (1.0 - cc) * pc[i] + (hsig ? a_c * yw[i] : 0.0);
                const double keep = 1.0 - c1 - cmu + (hsig ? 0.0 : c1 * cc * (2.0 - cc));
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double rank_mu = 0.0;
                        for (std::size_t k = 0; k < mu; ++k) rank_mu += w[k] * ys[fit[k].second][i] * ys[fit[k].second][j];
                        C(i, j) = keep * C(i, j) + c1 * pc[i] * pc[j] + cmu * rank_mu;
                    }
                sigma *= std::exp((cs / damps) * (nps / chi_n - 1.0));
                if (!std::isfinite(sigma)) break;
                if (fit[0].first == fit[std::min(mu, lambda - 1)].first) {
                    // flat fitness: widen the search rather than stopping on a plateau
                    sigma *= std::exp(0.2 + cs / damps);
                    if (++flat_gens > 50) break;
                    continue;
                }
                flat_gens = 0;

                history.push_back(fit[0].first);
                const double dmax = *std::max_element(D.begin(), D.end());
                if (sigma * dmax < tol_x) break;
                const std::size_t hw = 10 + static_cast<std::size_t>(30.0 * dn / static_cast<double>(lambda));
                if (history.size() > hw) {
                    const double a = history[history.size() - 1 - hw], b = history.back();
                    if (std::abs(a - b) <= 1e-13) break;
                }
            }
        }
        return best;
    }
};

/// \brief Maps a flat search vector to gains, P matrices (Cholesky, log diagonal) and log-scalars.
class DesignSpace {
public:
    DesignSpace(const DesignProblem& prob, bool with_fast, bool with_reduced, const SearchConfig& cfg)
        : prob_(prob), with_fast_(with_fast), with_reduced_(with_reduced), cfg_(cfg) {
        const GainTemplate& t = prob.structure;
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t.free.empty() || t.free[i]) free_.push_back(i);
        std::size_t o = free_.size();
        nz_ = prob.plant.nz();
        nx_ = prob.plant.nx();
        if (with_fast_) {
            pf_off_ = o;
            o += nz_ * (nz_ + 1) / 2;
            rf_off_ = o++;
        }
        if (with_reduced_) {
            ps_off_ = o;
            o += nx_ * (nx_ + 1) / 2;
            rs_off_ = o++;
            eta_off_ = o++;
        }
        dim_ = o;
    }

    std::size_t dim() const { return dim_; }
    std::size_t free_count() const { return free_.size(); }

    Vector gain_params(const Vector& x) const {
        Vector th = prob_.structure.initial;
        for (std::size_t k = 0; k < free_.size(); ++k) th[free_[k]] = x[k];
        return th;
    }

    static SymMatrix chol_to_P(const Vector& x, std::size_t off, std::size_t n) {
        Matrix L(n, n);
        std::size_t k = off;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) L(i, j) = (i == j) ? std::exp(x[k++]) : x[k++];
        Matrix P = L * L.transpose();
        return SymMatrix::from_lower(P);
    }

    static void P_to_chol(const SymMatrix& P, Vector& x, std::size_t off) {
        const std::size_t n = P.dim();
        Matrix L(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            double s = P(j, j);
            for (std::size_t k = 0; k < j; ++k) s -= L(j, k) * L(j, k);
            if (s <= 0) throw InvalidInput("P_to_chol: matrix not positive definite");
            L(j, j) = std::sqrt(s);
            for (std::size_t i = j + 1; i < n; ++i) {
                double t = P(i, j);
                for (std::size_t k = 0; k < j; ++k) t -= L(i, k) * L(j, k);
                L(i, j) = t / L(j, j);
            }
        }
        std::size_t k = off;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) x[k++] = (i == j) ? std::log(L(i, j)) : L(i, j);
    }

    double a_rho(const Vector& x, bool fast) const {
        if (cfg_.fixed_a_rho) return *cfg_.fixed_a_rho;
        return std::exp(x[fast ? rf_off_ : rs_off_]);
    }
    double eta1(const Vector& x) const {
        if (cfg_.fixed_eta1) return *cfg_.fixed_eta1;
        return std::exp(x[eta_off_]);
    }
    SymMatrix Pf(const Vector& x) const { return chol_to_P(x, pf_off_, nz_); }
    SymMatrix Ps(const Vector& x) const { return chol_to_P(x, ps_off_, nx_); }

    /// Default starting point: template initial gains, P = I, a_rho = 0.1, eta1 = 0.1.
    Vector initial_point(const std::optional<LmiSide>& fast0 = {}, const std::optional<LmiSide>& red0 = {}) const {
        Vector x(dim_, 0.0);
        for (std::size_t k = 0; k < free_.size(); ++k) x[k] = prob_.structure.initial[free_[k]];
        if (with_fast_) {
            P_to_chol(fast0 ? fast0->P : SymMatrix::identity(nz_), x, pf_off_);
            x[rf_off_] = std::log(fast0 ? fast0->a_rho : 0.1);
        }
        if (with_reduced_) {
            P_to_chol(red0 ? red0->P : SymMatrix::identity(nx_), x, ps_off_);
            x[rs_off_] = std::log(red0 ? red0->a_rho : 0.1);
            x[eta_off_] = std::log(red0 ? red0->eta1 : 0.1);
        }
        return x;
    }

    CompassSearch engine(const SearchConfig& cfg) const {
        CompassSearch s;
        s.lower.assign(dim_, -std::numeric_limits<double>::infinity());
        s.upper.assign(dim_, std::numeric_limits<double>::infinity());
        s.step0.assign(dim_, 0.25);
        s.spread.assign(dim_, 0.5);
        for (std::size_t k = 0; k < free_.size(); ++k) {
            const double v = std::abs(prob_.structure.initial[free_[k]]);
            s.step0[k] = std::max(0.25 * v, 1e-3);
            s.spread[k] = std::max(0.5 * v, 1e-2);
        }
        auto log_box = [&](std::size_t i, double floor) {
            s.lower[i] = std::log(floor);
            s.upper[i] = cfg.log_upper;
        };
        auto chol_box = [&](std::size_t off, std::size_t n) {
            std::size_t k = off;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j <= i; ++j, ++k) {
                    if (i == j) {
                        s.lower[k] = -12.0;
                        s.upper[k] = cfg.log_upper;
                    } else {
                        s.lower[k] = -1e3;
                        s.upper[k] = 1e3;
                    }
                }
        };
        if (with_fast_) {
            chol_box(pf_off_, nz_);
            log_box(rf_off_, cfg.a_rho_floor);
        }
        if (with_reduced_) {
            chol_box(ps_off_, nx_);
            log_box(rs_off_, cfg.a_rho_floor);
            log_box(eta_off_, cfg.eta1_floor);
        }
        s.restarts = cfg.restarts;
        s.sweeps = cfg.sweeps;
        s.min_step = cfg.min_step;
        s.seed = cfg.seed;
        return s;
    }

    const DesignProblem& problem() const { return prob_; }

private:
    const DesignProblem& prob_;
    bool with_fast_, with_reduced_;
    SearchConfig cfg_;
    std::vector<std::size_t> free_;
    std::size_t nx_ = 0, nz_ = 0, dim_ = 0;
    std::size_t pf_off_ = 0, rf_off_ = 0, ps_off_ = 0, rs_off_ = 0, eta_off_ = 0;
};

/// Minimal feasible gamma for one of the two LMIs: bisection on gamma over a compass search
/// of lambda_max(LMI) in (gain parameters, P, a_rho[, eta1]).
inline DesignResult min_gamma(LmiKind which, const DesignProblem& prob, const SearchConfig& cfg) {
    const bool fast = which == LmiKind::boundary_layer;
    DesignSpace space(prob, fast, !fast, cfg);
    std::size_t evals = 0;

    auto lmi_max = [&](const Vector& x, double gamma) -> double {
        const ObserverGains g = prob.structure.make(space.gain_params(x));
        FastBlocks f;
        try {
            f = build_fast_blocks(prob.plant, g);
        } catch (const DesignInfeasible&) {
            return 1e6;
        }
        if (fast) {
            return sym_eigvals(assemble_lmi_bl(f, prob.cert_f,
                                               {LmiKind::boundary_layer, space.Pf(x), space.a_rho(x, true), gamma, 0.0}))
                .max();
        }
        ReducedBlocks r;
        try {
            r = build_reduced_blocks(prob.plant, g, f);
        } catch (const SingularMatrix&) {
            return 1e6;
        }
        return sym_eigvals(assemble_lmi_reduced(
                               r, prob.cert_s, {LmiKind::reduced, space.Ps(x), space.a_rho(x, false), gamma, space.eta1(x)}))
            .max();
    };

    const CompassSearch eng = space.engine(cfg);
    // Feasibility target keeps a margin below the acceptance tolerance.
    const double target = -1e-9;
    auto feasible_at = [&](double gamma, const Vector& start, Vector& xbest) {
        auto r = eng.run([&](const Vector& x) { return lmi_max(x, gamma); }, start, target);
        evals += r.evaluations;
        xbest = r.x;
        return r.f <= target;
    };

    Vector x_hi;
    if (!feasible_at(cfg.gamma_max, space.initial_point(), x_hi))
        throw InfeasibleAtUpperBound("no feasible point at gamma_max");
    double lo = 0.0, hi = cfg.gamma_max;
    while (hi - lo > cfg.bisection_tol) {
        const double mid = 0.5 * (lo + hi);
        Vector x_mid;
        if (feasible_at(mid, x_hi, x_mid)) {
            hi = mid;
            x_hi = x_mid;
        } else {
            lo = mid;
        }
    }

    DesignResult d;
    d.params = space.gain_params(x_hi);
    d.gains = prob.structure.make(d.params);
    d.config = cfg;
    LmiSide side;
    side.gamma = hi;
    side.max_eig = lmi_max(x_hi, hi);
    if (fast) {
        side.P = space.Pf(x_hi);
        side.a_rho = space.a_rho(x_hi, true);
        d.fast = side;
    } else {
        side.P = space.Ps(x_hi);
        side.a_rho = space.a_rho(x_hi, false);
        side.eta1 = space.eta1(x_hi);
        d.reduced = side;
    }
    d.objective = hi;
    d.evaluations = evals;
    return d;
}

/// Candidate design from closed-form minimal gammas; nullopt when either LMI cannot be met.
struct CandidateEval {
    std::optional<DesignResult> design;
    double violation = 0.0;  // positive part of top-left eigenvalues when infeasible
};

inline CandidateEval design_from_space(const DesignSpace& space, const Vector& x) {
    const DesignProblem& prob = space.problem();
    CandidateEval out;
    DesignResult d;
    d.params = space.gain_params(x);
    d.gains = prob.structure.make(d.params);
    FastBlocks f;
    ReducedBlocks r;
    try {
        f = build_fast_blocks(prob.plant, d.gains);
        r = build_reduced_blocks(prob.plant, d.gains, f);
    } catch (const Error&) {
        out.violation = 1e3;
        return out;
    }
    LmiSide sf, ss;
    sf.P = space.Pf(x);
    sf.a_rho = space.a_rho(x, true);
    ss.P = space.Ps(x);
    ss.a_rho = space.a_rho(x, false);
    ss.eta1 = space.eta1(x);
    const SchurGamma gf = schur_min_gamma(sf.P.full(), f.Af11, f.Af12, prob.cert_f.M * f.Af21, sf.a_rho, 0.0, prob.cert_f);
    const SchurGamma gs =
        schur_min_gamma(ss.P.full(), r.As11, r.As12, prob.cert_s.M * r.As21, ss.a_rho, ss.eta1, prob.cert_s);
    if (!std::isfinite(gf.gamma) || !std::isfinite(gs.gamma)) {
        // the margin keeps the measure positive on the near-singular shell the Schur solve rejects
        const double margin = 1e-6;
        out.violation = (std::isfinite(gf.gamma) ? 0.0 : std::max(margin, gf.top_left_max + margin)) +
                        (std::isfinite(gs.gamma) ? 0.0 : std::max(margin, gs.top_left_max + margin));
        return out;
    }
    sf.gamma = gf.gamma;
    ss.gamma = gs.gamma;
    sf.max_eig = sym_eigvals(assemble_lmi_bl(f, prob.cert_f, {LmiKind::boundary_layer, sf.P, sf.a_rho, sf.gamma, 0.0})).max();
    ss.max_eig =
        sym_eigvals(assemble_lmi_reduced(r, prob.cert_s, {LmiKind::reduced, ss.P, ss.a_rho, ss.gamma, ss.eta1})).max();
    d.fast = sf;
    d.reduced = ss;
    out.design = d;
    return out;
}

/// Objective callback: returns eps*T* for a candidate, or when the candidate violates a
/// downstream condition either minus the size of the violation or a non-finite value.
using MatiObjective = std::function<double(const DesignResult&)>;

struct MaximizeStart {
    std::optional<LmiSide> fast, reduced;
};

/// Maximizes eps*T* jointly over free gain parameters, P's, a_rho's and eta1. With free gain
/// parameters the search runs twice: first with the gains frozen at the template's initial
/// values, then over everything starting from that result. With sweeps = 0 the starting point
/// is only evaluated.
inline DesignResult maximize_mati_objective(const DesignProblem& prob, const MatiObjective& objective,
                                            const SearchConfig& cfg, const MaximizeStart& start = {}) {
    auto make_score = [&](const DesignSpace& space) {
        return [&space, &objective](const Vector& x) -> double {
            const CandidateEval c = design_from_space(space, x);
            if (!c.design) return 1e6 + c.violation;
            const double v = objective(*c.design);
            if (std::isnan(v) || std::isinf(v)) return 2e5;
            if (!(v > 0)) return 1e5 - v;  // non-positive values grade the downstream violation
            return -std::log(v);
        };
    };
    auto engine = [&](const DesignSpace& space, std::size_t budget, double sigma0) {
        const CompassSearch box = space.engine(cfg);
        CmaEs eng;
        eng.lower = box.lower;
        eng.upper = box.upper;
        eng.scale = box.spread;
        eng.restarts = cfg.cma_restarts;
        eng.max_evals = budget;
        eng.seed = cfg.seed;
        eng.sigma0 = sigma0;
        return eng;
    };

    DesignSpace space(prob, true, true, cfg);
    const auto score = make_score(space);
    Vector x0 = space.initial_point(start.fast, start.reduced);
    CmaEs::Result res;
    if (cfg.sweeps <= 0) {
        res.x = x0;
        res.f = score(x0);
        res.evaluations = 1;
    } else {
        const std::size_t nfree = space.free_count();
        std::size_t budget = cfg.max_evals;
        double sigma0 = 1.0;
        if (nfree > 0) {
            DesignProblem frozen = prob;
            frozen.structure.free.assign(prob.structure.size(), false);
            DesignSpace inner(frozen, true, true, cfg);
            const auto inner_score = make_score(inner);
            const CmaEs::Result r0 =
                engine(inner, cfg.max_evals / 2, 1.0).run(inner_score, inner.initial_point(start.fast, start.reduced));
            budget -= std::min(budget, r0.evaluations);
            if (r0.f < 1e5) {
                std::copy(r0.x.begin(), r0.x.end(), x0.begin() + static_cast<std::ptrdiff_t>(nfree));
                sigma0 = 0.3;
            }
            res.evaluations += r0.evaluations;
        }
        const CmaEs::Result r1 = engine(space, budget, sigma0).run(score, x0);
        res.x = r1.x;
        res.f = r1.f;
        res.evaluations += r1.evaluations;
    }
    const CandidateEval best = design_from_space(space, res.x);
    if (!best.design) throw DesignInfeasible("no candidate satisfies both LMIs");
    DesignResult d = *best.design;
    d.config = cfg;
    d.evaluations = res.evaluations;
    const double v = objective(d);
    if (!(v > 0) || !std::isfinite(v)) throw DesignInfeasible("best candidate violates the timing conditions");
    d.objective = v;
    return d;
}

}  // namespace spncs
