#pragma once
// Dense linear algebra and ODE stepping for small problems (dimension <= ~64).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spncs {

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidInput : Error { using Error::Error; };
struct SingularMatrix : Error { using Error::Error; };
struct NumericalBlowup : Error { using Error::Error; };
struct DesignInfeasible : Error { using Error::Error; };
struct InfeasibleAtUpperBound : Error { using Error::Error; };
struct InfeasibleSchedule : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };

// ---------------------------------------------------------------- tolerances

namespace tol {
inline constexpr double jacobi_offdiag = 1e-14;   // relative to Frobenius norm
inline constexpr int jacobi_max_sweeps = 100;
inline constexpr double cond_max = 1e12;          // solve_linear singularity threshold
inline constexpr double rank_rel = 1e-9;          // singular value threshold, relative to sigma_max
inline constexpr double hurwitz_margin = 1e-9;    // real parts must be < -margin
inline constexpr double lmi = 1e-8;               // NSD tolerance for design LMIs
inline constexpr double pd_min = 1e-9;            // lambda_min for positive definite P
inline constexpr double residual = 1e-9;          // solve_linear residual bound (relative)
}  // namespace tol

using Vector = std::vector<double>;

// ---------------------------------------------------------------- Matrix

/// \brief Dense row-major real matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : r_(r), c_(c), a_(r * c, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        r_ = rows.size();
        c_ = r_ ? rows.begin()->size() : 0;
        a_.reserve(r_ * c_);
        for (const auto& row : rows) {
            if (row.size() != c_) throw InvalidInput("Matrix: ragged initializer");
            a_.insert(a_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
    static Matrix column(const Vector& v) {
        Matrix m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
        return m;
    }
    static Matrix diag(const Vector& v) {
        Matrix m(v.size(), v.size());
        for (std::size_t i = 0; i < v.size(); ++i) m(i, i) = v[i];
        return m;
    }

    std::size_t rows() const { return r_; }
    std::size_t cols() const { return c_; }
    bool empty() const { return r_ == 0 || c_ == 0; }
    double& operator()(std::size_t i, std::size_t j) { return a_[i * c_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * c_ + j]; }
    const std::vector<double>& data() const { return a_; }
    std::vector<double>& data() { return a_; }

    Matrix transpose() const {
        Matrix t(c_, r_);
        for (std::size_t i = 0; i < r_; ++i)
            for (std::size_t j = 0; j < c_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Matrix block(std::size_t i0, std::size_t j0, std::size_t nr, std::size_t nc) const {
        Matrix b(nr, nc);
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(i0 + i, j0 + j);
        return b;
    }
    void set_block(std::size_t i0, std::size_t j0, const Matrix& b) {
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) (*this)(i0 + i, j0 + j) = b(i, j);
    }

    bool all_finite() const {
        return std::all_of(a_.begin(), a_.end(), [](double x) { return std::isfinite(x); });
    }

    Matrix& operator+=(const Matrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] -= o.a_[k];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (auto& x : a_) x *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator-(Matrix a) { return a *= -1.0; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }
    friend Matrix operator*(const Matrix& a, const Matrix& b) {
        if (a.c_ != b.r_) throw InvalidInput("Matrix: product dimension mismatch");
        Matrix p(a.r_, b.c_);
        for (std::size_t i = 0; i < a.r_; ++i)
            for (std::size_t k = 0; k < a.c_; ++k) {
                const double aik = a(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < b.c_; ++j) p(i, j) += aik * b(k, j);
            }
        return p;
    }
    friend Vector operator*(const Matrix& a, const Vector& x) {
        if (a.c_ != x.size()) throw InvalidInput("Matrix: matvec dimension mismatch");
        Vector y(a.r_, 0.0);
        for (std::size_t i = 0; i < a.r_; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.c_; ++j) s += a(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }
    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.r_ == b.r_ && a.c_ == b.c_ && a.a_ == b.a_;
    }

private:
    void check_same(const Matrix& o) const {
        if (r_ != o.r_ || c_ != o.c_) throw InvalidInput("Matrix: dimension mismatch");
    }
    std::size_t r_ = 0, c_ = 0;
    std::vector<double> a_;
};

inline Matrix hstack(const Matrix& a, const Matrix& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.rows() != b.rows()) throw InvalidInput("hstack: row mismatch");
    Matrix m(a.rows(), a.cols() + b.cols());
    m.set_block(0, 0, a);
    m.set_block(0, a.cols(), b);
    return m;
}

inline Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.cols() != b.cols()) throw InvalidInput("vstack: column mismatch");
    Matrix m(a.rows() + b.rows(), a.cols());
    m.set_block(0, 0, a);
    m.set_block(a.rows(), 0, b);
    return m;
}

inline double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

inline double norm1(const Matrix& m) {
    double best = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
        best = std::max(best, s);
    }
    return best;
}

// ---------------------------------------------------------------- vectors

inline double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm(const Vector& v) { return std::sqrt(dot(v, v)); }

inline Vector axpy(double s, const Vector& x, Vector y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
    return y;
}

// ---------------------------------------------------------------- SymMatrix

/// \brief Symmetric matrix stored once (lower triangle, packed row-wise).
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t n) : n_(n), a_(n * (n + 1) / 2, 0.0) {}

    /// Reads the lower triangle of m; the upper triangle is ignored.
    static SymMatrix from_lower(const Matrix& m) {
        if (m.rows() != m.cols()) throw InvalidInput("SymMatrix: not square");
        SymMatrix s(m.rows());
        for (std::size_t i = 0; i < s.n_; ++i)
            for (std::size_t j = 0; j <= i; ++j) s.set(i, j, m(i, j));
        return s;
    }
    /// (m + m^T)/2.
    static SymMatrix symmetric_part(const Matrix& m) {
        if (m.rows() != m.cols()) throw InvalidInput("SymMatrix: not square");
        SymMatrix s(m.rows());
        for (std::size_t i = 0; i < s.n_; ++i)
            for (std::size_t j = 0; j <= i; ++j) s.set(i, j, 0.5 * (m(i, j) + m(j, i)));
        return s;
    }
    static SymMatrix identity(std::size_t n) {
        SymMatrix s(n);
        for (std::size_t i = 0; i < n; ++i) s.set(i, i, 1.0);
        return s;
    }

    std::size_t dim() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return a_[idx(i, j)]; }
    void set(std::size_t i, std::size_t j, double v) { a_[idx(i, j)] = v; }

    Matrix full() const {
        Matrix m(n_, n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) m(i, j) = (*this)(i, j);
        return m;
    }
    bool all_finite() const {
        return std::all_of(a_.begin(), a_.end(), [](double x) { return std::isfinite(x); });
    }

private:
    std::size_t idx(std::size_t i, std::size_t j) const {
        if (i < j) std::swap(i, j);
        return i * (i + 1) / 2 + j;
    }
    std::size_t n_ = 0;
    std::vector<double> a_;
};

struct EigSpectrum {
    Vector eigenvalues;  // ascending
    double min() const { return eigenvalues.front(); }
    double max() const { return eigenvalues.back(); }
};

struct EigDecomposition {
    Vector eigenvalues;  // ascending
    Matrix vectors;      // columns, matching eigenvalues
};

/// \brief Cyclic Jacobi eigen-decomposition of a symmetric matrix.
inline EigDecomposition sym_eig(const SymMatrix& s) {
    if (!s.all_finite()) throw InvalidInput("sym_eig: non-finite entries");
    const std::size_t n = s.dim();
    Matrix a = s.full();
    Matrix v = Matrix::identity(n);
    const double scale = frobenius_norm(a);
    auto off = [&] {
        double o = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) o += a(i, j) * a(i, j);
        return std::sqrt(o);
    };
    for (int sweep = 0; sweep < tol::jacobi_max_sweeps; ++sweep) {
        if (off() <= tol::jacobi_offdiag * scale) break;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    EigDecomposition d{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        d.eigenvalues[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) d.vectors(i, k) = v(i, order[k]);
    }
    return d;
}

inline EigSpectrum sym_eigvals(const SymMatrix& s) { return {sym_eig(s).eigenvalues}; }

inline bool is_negative_semidefinite(const SymMatrix& m, double tolerance) {
    if (tolerance < 0) throw InvalidInput("is_negative_semidefinite: negative tolerance");
    return sym_eigvals(m).max() <= tolerance;
}

inline bool is_positive_definite(const SymMatrix& m, double min_eig = tol::pd_min) {
    return sym_eigvals(m).min() > min_eig;
}

/// \brief Largest singular value.
inline double spectral_norm(const Matrix& m) {
    if (m.empty()) return 0.0;
    const Matrix g = m.rows() < m.cols() ? m * m.transpose() : m.transpose() * m;
    return std::sqrt(std::max(0.0, sym_eigvals(SymMatrix::from_lower(g)).max()));
}

inline Vector singular_values(const Matrix& m) {
    Vector ev = sym_eigvals(SymMatrix::from_lower(m.transpose() * m)).eigenvalues;
    for (auto& x : ev) x = std::sqrt(std::max(0.0, x));
    std::reverse(ev.begin(), ev.end());
    return ev;
}

inline std::size_t matrix_rank(const Matrix& m, double rel = tol::rank_rel) {
    const Vector sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    return static_cast<std::size_t>(
        std::count_if(sv.begin(), sv.end(), [&](double s) { return s > rel * sv.front(); }));
}

// ---------------------------------------------------------------- LU

/// \brief LU factorization with partial pivoting.
class LU {
public:
    explicit LU(const Matrix& a) : lu_(a), piv_(a.rows()) {
        if (a.rows() != a.cols()) throw InvalidInput("LU: matrix not square");
        if (!a.all_finite()) throw InvalidInput("LU: non-finite entries");
        const std::size_t n = a.rows();
        for (std::size_t i = 0; i < n; ++i) piv_[i] = i;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t p = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(lu_(i, k)) > std::abs(lu_(p, k))) p = i;
            if (lu_(p, k) == 0.0) {
                singular_ = true;
                return;
            }
            if (p != k) {
                for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
                std::swap(piv_[k], piv_[p]);
                sign_ = -sign_;
            }
            for (std::size_t i = k + 1; i < n; ++i) {
                const double f = lu_(i, k) / lu_(k, k);
                lu_(i, k) = f;
                for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= f * lu_(k, j);
            }
        }
        if (n > 0) {
            const Matrix inv = solve_unchecked(Matrix::identity(n));
            cond_ = norm1(a) * norm1(inv);
            if (!std::isfinite(cond_)) singular_ = true;
        }
    }

    bool singular() const { return singular_ || cond_ > tol::cond_max; }
    double condition_estimate() const { return singular_ ? std::numeric_limits<double>::infinity() : cond_; }

    double determinant() const {
        if (singular_) return 0.0;
        double d = sign_;
        for (std::size_t i = 0; i < lu_.rows(); ++i) d *= lu_(i, i);
        return d;
    }

    Matrix solve(const Matrix& b) const {
        if (b.rows() != lu_.rows()) throw InvalidInput("solve_linear: row mismatch");
        if (singular())
            throw SingularMatrix("solve_linear: condition estimate exceeds threshold");
        return solve_unchecked(b);
    }

private:
    Matrix solve_unchecked(const Matrix& b) const {
        const std::size_t n = lu_.rows(), m = b.cols();
        Matrix x(n, m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) x(i, j) = b(piv_[i], j);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < i; ++k) x(i, j) -= lu_(i, k) * x(k, j);
            for (std::size_t ii = n; ii-- > 0;) {
                for (std::size_t k = ii + 1; k < n; ++k) x(ii, j) -= lu_(ii, k) * x(k, j);
                x(ii, j) /= lu_(ii, ii);
            }
        }
        return x;
    }

    Matrix lu_;
    std::vector<std::size_t> piv_;
    double sign_ = 1.0;
    double cond_ = 1.0;
    bool singular_ = false;
};

inline Matrix solve_linear(const Matrix& a, const Matrix& b) { return LU(a).solve(b); }
inline Matrix inverse(const Matrix& a) { return LU(a).solve(Matrix::identity(a.rows())); }

// ---------------------------------------------------------------- stability tests

/// Kronecker-form solution X of A^T X + X A = -Q.
inline Matrix lyapunov_solve(const Matrix& a, const Matrix& q) {
    const std::size_t n = a.rows();
    Matrix k(n * n, n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t row = i * n + j;
            for (std::size_t m = 0; m < n; ++m) {
                k(row, m * n + j) += a(m, i);  // (A^T X)_ij
                k(row, i * n + m) += a(m, j);  // (X A)_ij
            }
        }
    Matrix rhs(n * n, 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) rhs(i * n + j, 0) = -q(i, j);
    const Matrix x = solve_linear(k, rhs);
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = x(i * n + j, 0);
    return out;
}

/// True iff every eigenvalue of a has real part < -margin.
inline bool is_hurwitz(const Matrix& a, double margin = tol::hurwitz_margin) {
    if (a.rows() != a.cols()) throw InvalidInput("is_hurwitz: not square");
    if (a.rows() == 0) return true;
    Matrix shifted = a;
    for (std::size_t i = 0; i < a.rows(); ++i) shifted(i, i) += margin;
    try {
        const Matrix x = lyapunov_solve(shifted, Matrix::identity(a.rows()));
        return sym_eigvals(SymMatrix::symmetric_part(x)).min() > 0.0;
    } catch (const SingularMatrix&) {
        return false;
    }
}

inline Matrix observability_matrix(const Matrix& a, const Matrix& c) {
    Matrix o = c, blk = c;
    for (std::size_t k = 1; k < a.rows(); ++k) {
        blk = blk * a;
        o = vstack(o, blk);
    }
    return o;
}

inline bool is_observable(const Matrix& a, const Matrix& c) {
    if (a.rows() == 0) return true;
    return matrix_rank(observability_matrix(a, c)) == a.rows();
}

// ---------------------------------------------------------------- ODE stepping

/// \brief Classical RK4 step for x' = f(t, x).
template <class F>
Vector rk4_step(F&& f, const Vector& x, double t, double h) {
    if (!(h > 0.0)) throw InvalidInput("rk4_step: step must be positive");
    auto checked = [&](double tt, const Vector& xx) {
        Vector d = f(tt, xx);
        for (double v : d)
            if (!std::isfinite(v)) throw NumericalBlowup("rk4_step: non-finite derivative");
        return d;
    };
    const Vector k1 = checked(t, x);
    const Vector k2 = checked(t + 0.5 * h, axpy(0.5 * h, k1, x));
    const Vector k3 = checked(t + 0.5 * h, axpy(0.5 * h, k2, x));
    const Vector k4 = checked(t + h, axpy(h, k3, x));
    Vector y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return y;
}

}  // namespace spncs
