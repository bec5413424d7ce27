#pragma once
// Plant, observer, error coordinates and the derived fast/reduced matrix blocks.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "spncs/numerics.hpp"

namespace spncs {

/// \brief Linear singularly perturbed plant with slow and fast measured outputs.
struct PlantParams {
    Matrix A11, A12, A21, A22, B1, B2, C1s, C2s, C2f;
    double epsilon = 0.0;

    std::size_t nx() const { return A11.rows(); }
    std::size_t nz() const { return A22.rows(); }
    std::size_t nu() const { return B1.cols(); }
    std::size_t nys() const { return C1s.rows(); }
    std::size_t nyf() const { return C2f.rows(); }

    /// Throws InvalidInput on dimension errors and InvalidConfig on violated assumptions.
    void validate() const {
        auto need = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
            if (m.rows() != r || m.cols() != c)
                throw InvalidInput(std::string("plant: ") + name + " has wrong dimensions");
            if (!m.all_finite()) throw InvalidInput(std::string("plant: ") + name + " not finite");
        };
        const std::size_t x = nx(), z = nz(), u = nu(), ys = nys(), yf = nyf();
        if (x == 0 || z == 0 || ys == 0 || yf == 0) throw InvalidInput("plant: empty block");
        need(A11, x, x, "A11");
        need(A12, x, z, "A12");
        need(A21, z, x, "A21");
        need(A22, z, z, "A22");
        need(B1, x, u, "B1");
        need(B2, z, u, "B2");
        need(C1s, ys, x, "C1s");
        need(C2s, yf, x, "C2s");
        need(C2f, yf, z, "C2f");
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidConfig("plant: epsilon must lie in (0,1)");
        if (LU(A22).singular()) throw InvalidConfig("plant: A22 is not invertible");
        if (!is_observable(A11, C1s)) throw InvalidConfig("plant: (A11, C1s) not observable");
        if (!is_observable(A22, C2f)) throw InvalidConfig("plant: (A22, C2f) not observable");
    }
};

struct ObserverGains {
    Matrix L1s, L1f, L2s, L2f;

    void validate(const PlantParams& p) const {
        auto need = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
            if (m.rows() != r || m.cols() != c)
                throw InvalidInput(std::string("gains: ") + name + " has wrong dimensions");
            if (!m.all_finite()) throw InvalidInput(std::string("gains: ") + name + " not finite");
        };
        need(L1s, p.nx(), p.nys(), "L1s");
        need(L1f, p.nx(), p.nyf(), "L1f");
        need(L2s, p.nz(), p.nys(), "L2s");
        need(L2f, p.nz(), p.nyf(), "L2f");
    }
};

/// \brief Boundary-layer blocks.
struct FastBlocks {
    Matrix Af11, Af12, Af21, Af22;
};

inline FastBlocks build_fast_blocks(const PlantParams& p, const ObserverGains& g) {
    FastBlocks f;
    f.Af11 = p.A22 - g.L2f * p.C2f;
    f.Af12 = g.L2f;
    f.Af21 = p.C2f * f.Af11;
    f.Af22 = p.C2f * g.L2f;
    if (!is_hurwitz(f.Af11)) throw DesignInfeasible("A22 - L2f C2f is not Hurwitz");
    return f;
}

/// \brief Coefficients of the quasi-steady fast error
/// Hbar = Gx dx + Ge (e_ys + vhat1) + Gu e_us + Gv2 vhat2.
struct HbarCoeffs {
    Matrix Gx, Ge, Gu, Gv2;

    Vector eval(const Vector& dx, const Vector& e_ys, const Vector& e_us, const Vector& vhat1,
                const Vector& vhat2) const {
        Vector ey = e_ys;
        for (std::size_t i = 0; i < ey.size(); ++i) ey[i] += vhat1[i];
        Vector h = Gx * dx;
        const Vector a = Ge * ey, b = Gu * e_us, c = Gv2 * vhat2;
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += a[i] + b[i] + c[i];
        return h;
    }
};

inline HbarCoeffs build_hbar(const PlantParams& p, const ObserverGains& g, const FastBlocks& f) {
    const LU lu(f.Af11);
    HbarCoeffs h;
    h.Gx = -lu.solve(p.A21 - g.L2s * p.C1s - g.L2f * p.C2s);
    h.Ge = -lu.solve(g.L2s);
    h.Gu = -lu.solve(p.B2);
    h.Gv2 = -lu.solve(g.L2f);
    return h;
}

/// \brief Reduced (slow) system blocks. e_s = (e_ys, e_us), vhat = (vhat1, vhat2).
struct ReducedBlocks {
    Matrix D;
    Matrix Ar11, Ar12, Ar13, Ar14, Ar15;
    Matrix Ar21, Ar22, Ar23, Ar24, Ar25;
    Matrix As11, As12, As13, As21, As22, As23;
};

inline ReducedBlocks build_reduced_blocks(const PlantParams& p, const ObserverGains& g, const FastBlocks& f) {
    ReducedBlocks r;
    // D = (A12 - L1f C2f) Af11^{-1}, via the transposed solve.
    const Matrix E1 = p.A12 - g.L1f * p.C2f;
    r.D = solve_linear(f.Af11.transpose(), E1.transpose()).transpose();
    r.Ar11 = (p.A11 - g.L1s * p.C1s - g.L1f * p.C2s) - r.D * (p.A21 - g.L2s * p.C1s - g.L2f * p.C2s);
    r.Ar12 = g.L1s - r.D * g.L2s;
    r.Ar13 = p.B1 - r.D * p.B2;
    r.Ar14 = r.Ar12;
    r.Ar15 = g.L1f - r.D * g.L2f;
    r.Ar21 = p.C1s * r.Ar11;
    r.Ar22 = p.C1s * r.Ar12;
    r.Ar23 = p.C1s * r.Ar13;
    r.Ar24 = p.C1s * r.Ar14;
    r.Ar25 = p.C1s * r.Ar15;

    const std::size_t nys = p.nys(), nu = p.nu(), nyf = p.nyf(), nx = p.nx();
    r.As11 = r.Ar11;
    r.As12 = hstack(r.Ar12, r.Ar13);
    r.As13 = hstack(r.Ar14, r.Ar15);
    r.As21 = vstack(r.Ar21, Matrix(nu, nx));
    r.As22 = vstack(hstack(r.Ar22, r.Ar23), Matrix(nu, nys + nu));
    r.As23 = vstack(hstack(r.Ar24, r.Ar25), Matrix(nu, nys + nyf));
    return r;
}

/// Quasi-steady plant fast state: solves A21 x + A22 z + B2 u = 0.
inline Vector quasi_steady_plant(const PlantParams& p, const Vector& x_p, const Vector& u_s) {
    Vector rhs = p.A21 * x_p;
    const Vector bu = p.B2 * u_s;
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = -(rhs[i] + bu[i]);
    const Matrix z = solve_linear(p.A22, Matrix::column(rhs));
    Vector out(z.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z(i, 0);
    return out;
}

/// delta_y = delta_z - Hbar.
inline Vector delta_y_shift(const Vector& dz, const Vector& hbar_value) {
    if (dz.size() != hbar_value.size()) throw InvalidInput("delta_y_shift: dimension mismatch");
    Vector y = dz;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= hbar_value[i];
    return y;
}

// ---------------------------------------------------------------- state layout

/// \brief Offsets of the named blocks in the full hybrid state
/// (dx, e_ys, e_us, tau_s, kappa_s, vhat1, x_p, et_ps, dy, e_f, tau_f, kappa_f, vhat2, z_p, et_pf).
struct StateLayout {
    enum Block { dx, e_ys, e_us, tau_s, kappa_s, vhat1, x_p, et_ps, dy, e_f, tau_f, kappa_f, vhat2, z_p, et_pf, count };

    std::array<std::size_t, count> off{};
    std::array<std::size_t, count> len{};
    std::size_t size = 0;

    StateLayout() = default;
    explicit StateLayout(const PlantParams& p) {
        const std::size_t nx = p.nx(), nz = p.nz(), nu = p.nu(), ys = p.nys(), yf = p.nyf();
        len = {nx, ys, nu, 1, 1, ys, nx, ys, nz, yf, 1, 1, yf, nz, yf};
        std::size_t o = 0;
        for (std::size_t b = 0; b < count; ++b) {
            off[b] = o;
            o += len[b];
        }
        size = o;
    }

    Vector get(const Vector& s, Block b) const {
        return Vector(s.begin() + static_cast<std::ptrdiff_t>(off[b]),
                      s.begin() + static_cast<std::ptrdiff_t>(off[b] + len[b]));
    }
    void put(Vector& s, Block b, const Vector& v) const {
        if (v.size() != len[b]) throw InvalidInput("StateLayout::put: length mismatch");
        std::copy(v.begin(), v.end(), s.begin() + static_cast<std::ptrdiff_t>(off[b]));
    }
    double& scalar(Vector& s, Block b) const { return s[off[b]]; }
    double scalar(const Vector& s, Block b) const { return s[off[b]]; }

    /// Column names, in order, used by trajectory export.
    std::vector<std::string> names() const {
        static const char* base[count] = {"dx", "eys", "eus", "tau_s", "kappa_s", "vhat1", "xp", "etps",
                                          "dy", "ef", "tau_f", "kappa_f", "vhat2", "zp", "etpf"};
        std::vector<std::string> out;
        for (std::size_t b = 0; b < count; ++b) {
            if (len[b] == 1 && (b == tau_s || b == kappa_s || b == tau_f || b == kappa_f)) {
                out.emplace_back(base[b]);
                continue;
            }
            for (std::size_t i = 0; i < len[b]; ++i) out.push_back(std::string(base[b]) + std::to_string(i + 1));
        }
        return out;
    }
};

/// Exogenous values entering the flow at one instant.
struct FlowInputs {
    Vector u_s, du_s, v1, v2, dv1, dv2;
};

/// \brief Precomputed flow map of the full hybrid state.
class FlowModel {
public:
    FlowModel(const PlantParams& p, const ObserverGains& g)
        : p_(p), g_(g), layout_(p), fast_(build_fast_blocks(p, g)), hbar_(build_hbar(p, g, fast_)) {
        Fx_ = p.A11 - g.L1s * p.C1s - g.L1f * p.C2s;
        E1_ = p.A12 - g.L1f * p.C2f;
        K_ = hbar_.Gx + hbar_.Ge * p.C1s;
    }

    const PlantParams& plant() const { return p_; }
    const ObserverGains& gains() const { return g_; }
    const StateLayout& layout() const { return layout_; }
    const FastBlocks& fast() const { return fast_; }
    const HbarCoeffs& hbar() const { return hbar_; }
    /// d Hbar / d dx along the flow, combined with the e_ys part: Gx + Ge C1s.
    const Matrix& hbar_rate() const { return K_; }

    Vector hbar_at(const Vector& s) const {
        using L = StateLayout;
        return hbar_.eval(layout_.get(s, L::dx), layout_.get(s, L::e_ys), layout_.get(s, L::e_us),
                          layout_.get(s, L::vhat1), layout_.get(s, L::vhat2));
    }

    /// f_dx evaluated at the given state.
    Vector f_dx(const Vector& s) const {
        using L = StateLayout;
        const Vector dx = layout_.get(s, L::dx), ey = layout_.get(s, L::e_ys), eu = layout_.get(s, L::e_us);
        const Vector v1 = layout_.get(s, L::vhat1), v2 = layout_.get(s, L::vhat2);
        const Vector dy = layout_.get(s, L::dy), ef = layout_.get(s, L::e_f);
        Vector dz = hbar_.eval(dx, ey, eu, v1, v2);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dy[i];
        Vector ey1 = ey, ef2 = ef;
        for (std::size_t i = 0; i < ey1.size(); ++i) ey1[i] += v1[i];
        for (std::size_t i = 0; i < ef2.size(); ++i) ef2[i] += v2[i];
        Vector out = Fx_ * dx;
        add(out, E1_ * dz);
        add(out, p_.B1 * eu);
        add(out, g_.L1s * ey1);
        add(out, g_.L1f * ef2);
        return out;
    }

    /// Time derivative of the full state (slow-time scale).
    Vector operator()(const Vector& s, const FlowInputs& in) const {
        using L = StateLayout;
        const double eps = p_.epsilon;
        Vector d(layout_.size, 0.0);
        const Vector fdx = f_dx(s);
        layout_.put(d, L::dx, fdx);
        layout_.put(d, L::e_ys, p_.C1s * fdx);
        Vector neg_du = in.du_s;
        for (auto& x : neg_du) x = -x;
        layout_.put(d, L::e_us, neg_du);
        layout_.scalar(d, L::tau_s) = 1.0;

        const Vector xp = layout_.get(s, L::x_p), zp = layout_.get(s, L::z_p);
        Vector xdot = p_.A11 * xp;
        add(xdot, p_.A12 * zp);
        add(xdot, p_.B1 * in.u_s);
        layout_.put(d, L::x_p, xdot);
        Vector etps = p_.C1s * xdot;
        for (std::size_t i = 0; i < etps.size(); ++i) etps[i] = -etps[i] - in.dv1[i];
        layout_.put(d, L::et_ps, etps);

        const Vector dy = layout_.get(s, L::dy), ef = layout_.get(s, L::e_f);
        Vector fast = fast_.Af11 * dy;
        add(fast, g_.L2f * ef);
        // eps * dHbar/dxi_s F_xi_s = eps (K f_dx - Gu du_s)
        Vector hrate = K_ * fdx;
        const Vector gu = hbar_.Gu * in.du_s;
        Vector ddy(dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) ddy[i] = (fast[i] - eps * (hrate[i] - gu[i])) / eps;
        layout_.put(d, L::dy, ddy);
        Vector def = p_.C2f * fast;
        const Vector c2s = p_.C2s * fdx;
        for (std::size_t i = 0; i < def.size(); ++i) def[i] = (eps * c2s[i] + def[i]) / eps;
        layout_.put(d, L::e_f, def);
        layout_.scalar(d, L::tau_f) = 1.0 / eps;

        Vector zdot = p_.A21 * xp;
        add(zdot, p_.A22 * zp);
        add(zdot, p_.B2 * in.u_s);
        for (auto& x : zdot) x /= eps;
        layout_.put(d, L::z_p, zdot);
        Vector etpf = p_.C2s * xdot;
        add(etpf, p_.C2f * zdot);
        for (std::size_t i = 0; i < etpf.size(); ++i) etpf[i] = -etpf[i] - in.dv2[i];
        layout_.put(d, L::et_pf, etpf);

        for (double x : d)
            if (!std::isfinite(x)) throw NumericalBlowup("flow: non-finite derivative");
        return d;
    }

private:
    static void add(Vector& a, const Vector& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    }

    PlantParams p_;
    ObserverGains g_;
    StateLayout layout_;
    FastBlocks fast_;
    HbarCoeffs hbar_;
    Matrix Fx_, E1_, K_;
};

/// Functional form of the flow map.
inline Vector flow_field(const FlowModel& m, const Vector& state, const FlowInputs& in) { return m(state, in); }

}  // namespace spncs
