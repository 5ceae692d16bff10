#pragma once

// Smooth, globally Lipschitz replacement of the singular drift. The cut-off
// rho_eps is built from lambda(xi) = e^{-1/xi} / (e^{-1/xi} + e^{-1/(1-xi)}),
// and every eps is a rescaling of one unit profile:
//
//   rho_eps(xi) = eps * R(xi / eps),   R(u) = 1 - int_u^1 lambda
//   g_eps(xi)   = G(xi / eps) / eps,   G(u) = 1 + int_u^1 R(v)^{-2} dv   (u < 1)
//
// with phi^(eps)_ij(xi) = alpha_ij g_eps(xi) for i > j and the odd reflection
// for i < j. Lambda = int_0^u lambda and G are tabulated once on [0, 1].

#include "ncps/error.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace ncps {

/// e^{-1/xi} for xi > 0, else 0.
inline double lambda_tilde(double xi) { return xi > 0.0 ? std::exp(-1.0 / xi) : 0.0; }

/// Smooth step: 0 for xi <= 0, 1 for xi >= 1, lambda(u) + lambda(1-u) = 1.
inline double lambda(double xi) {
    if (xi <= 0.0) return 0.0;
    if (xi >= 1.0) return 1.0;
    const double e = 1.0 / xi - 1.0 / (1.0 - xi);
    if (e > 700.0) return 0.0;
    if (e < -700.0) return 1.0;
    return 1.0 / (1.0 + std::exp(e));
}

namespace detail {

class UnitMollifierTable {
public:
    static constexpr std::size_t kPoints = 4096;

    static const UnitMollifierTable& instance() {
        static const UnitMollifierTable table;
        return table;
    }

    /// int_0^u lambda, u in [0, 1].
    double primitive(double u) const {
        return hermite(primitive_, u, [](double v) { return lambda(v); });
    }

    double primitive_total() const { return primitive_.back(); }

    /// R(u) = rho_1(u).
    double unit_rho(double u) const {
        if (u >= 1.0) return u;
        if (u <= 0.0) return 1.0 - primitive_total();
        return 1.0 - (primitive_total() - primitive(u));
    }

    /// G(u) = eps * g_eps(eps * u).
    double unit_phi(double u) const {
        if (u >= 1.0) return 1.0 / u;
        if (u <= 0.0) {
            const double r0 = unit_rho(0.0);
            return unit_phi_.front() - u / (r0 * r0);
        }
        return hermite(unit_phi_, u, [this](double v) {
            const double r = unit_rho(v);
            return -1.0 / (r * r);
        });
    }

private:
    static constexpr double kStep = 1.0 / static_cast<double>(kPoints - 1);

    UnitMollifierTable() : primitive_(kPoints, 0.0), unit_phi_(kPoints, 0.0) {
        // Cells are narrow and both integrands smooth on each cell, so fixed
        // 10-point Gauss-Legendre is at rounding level.
        using rule = boost::math::quadrature::gauss<double, 10>;
        for (std::size_t k = 0; k + 1 < kPoints; ++k) {
            const double a = node(k);
            const double b = node(k + 1);
            primitive_[k + 1] =
                primitive_[k] + rule::integrate([](double v) { return lambda(v); }, a, b);
        }
        unit_phi_[kPoints - 1] = 1.0;
        for (std::size_t k = kPoints - 1; k > 0; --k) {
            const double a = node(k - 1);
            const double b = node(k);
            const double piece = rule::integrate(
                [this](double v) {
                    const double r = unit_rho(v);
                    return 1.0 / (r * r);
                },
                a, b);
            unit_phi_[k - 1] = unit_phi_[k] + piece;
        }
    }

    static double node(std::size_t k) {
        return k + 1 == kPoints ? 1.0 : static_cast<double>(k) * kStep;
    }

    // Cubic Hermite interpolation with exact end-point derivatives.
    template <class Derivative>
    static double hermite(const std::vector<double>& values, double u, Derivative derivative) {
        if (u <= 0.0) return values.front();
        if (u >= 1.0) return values.back();
        std::size_t k = static_cast<std::size_t>(u / kStep);
        if (k >= kPoints - 1) k = kPoints - 2;
        const double a = node(k);
        const double h = node(k + 1) - a;
        const double t = (u - a) / h;
        const double t2 = t * t;
        const double t3 = t2 * t;
        return (2 * t3 - 3 * t2 + 1) * values[k] + (t3 - 2 * t2 + t) * h * derivative(a) +
               (-2 * t3 + 3 * t2) * values[k + 1] + (t3 - t2) * h * derivative(node(k + 1));
    }

    std::vector<double> primitive_;
    std::vector<double> unit_phi_;
};

}  // namespace detail

/// Mollification at scale eps in (0, 1). Immutable and cheap to copy.
class Mollifier {
public:
    explicit Mollifier(double epsilon) : eps_(epsilon), table_(&detail::UnitMollifierTable::instance()) {
        if (!(epsilon > 0.0 && epsilon < 1.0))
            throw Error(ErrorKind::ConfigInvalid, "mollification scale must lie in (0, 1), got " + std::to_string(epsilon));
    }

    double epsilon() const noexcept { return eps_; }

    double lambda_eps(double xi) const { return lambda(xi / eps_); }

    /// rho_eps(xi) = eps + int_eps^xi lambda_eps; identity for xi >= eps.
    double rho(double xi) const {
        if (xi >= eps_) return xi;
        return eps_ * table_->unit_rho(xi / eps_);
    }

    /// phi^(eps)_ij / alpha_ij for i > j.
    double unit_phi(double xi) const {
        if (xi >= eps_) return 1.0 / xi;
        const double v = table_->unit_phi(xi / eps_) / eps_;
        // phi^(eps) <= phi holds exactly; interpolation round-off must not break it.
        return xi > 0.0 ? std::min(v, 1.0 / xi) : v;
    }

    /// Derivative of unit_phi: -1 / rho_eps(xi)^2.
    double unit_phi_prime(double xi) const {
        const double r = rho(xi);
        return -1.0 / (r * r);
    }

    /// Second derivative of unit_phi: 2 lambda_eps(xi) / rho_eps(xi)^3.
    double unit_phi_second(double xi) const {
        const double r = rho(xi);
        return 2.0 * lambda_eps(xi) / (r * r * r);
    }

private:
    double eps_;
    const detail::UnitMollifierTable* table_;
};

/// phi^(eps)_ij(xi); i > j uses the positive branch, i < j its odd reflection.
inline double phi_eps(double xi, Eigen::Index i, Eigen::Index j, const AlphaMatrix& alpha, const Mollifier& m) {
    if (i == j) throw Error(ErrorKind::ConfigInvalid, "phi_eps needs i != j");
    if (i > j) {
        if (xi >= m.epsilon()) return alpha(i, j) / xi;
        const double v = alpha(i, j) * m.unit_phi(xi);
        return xi > 0.0 ? std::min(v, alpha(i, j) / xi) : v;
    }
    if (-xi >= m.epsilon()) return alpha(i, j) / xi;
    const double v = -alpha(i, j) * m.unit_phi(-xi);
    return xi < 0.0 ? std::max(v, alpha(i, j) / xi) : v;
}

inline double phi_eps_prime(double xi, Eigen::Index i, Eigen::Index j, const AlphaMatrix& alpha,
                            const Mollifier& m) {
    if (i == j) throw Error(ErrorKind::ConfigInvalid, "phi_eps needs i != j");
    return alpha(i, j) * m.unit_phi_prime(i > j ? xi : -xi);
}

inline double phi_eps_second(double xi, Eigen::Index i, Eigen::Index j, const AlphaMatrix& alpha,
                             const Mollifier& m) {
    if (i == j) throw Error(ErrorKind::ConfigInvalid, "phi_eps needs i != j");
    if (i > j) return alpha(i, j) * m.unit_phi_second(xi);
    return -alpha(i, j) * m.unit_phi_second(-xi);
}

/// out += a^(eps)(x). No ordering requirement.
inline void add_mollified_singular_drift(std::span<const double> x, const AlphaMatrix& alpha, const Mollifier& m,
                                         std::span<double> out) {
    const auto d = static_cast<Eigen::Index>(x.size());
    for (Eigen::Index k = 1; k < d; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double a = alpha(k, l);
            if (a == 0.0) continue;
            const double v = a * m.unit_phi(x[k] - x[l]);
            out[k] += v;
            out[l] -= v;
        }
    }
}

/// out = f^(eps)(x) = a^(eps)(x) + b(x).
inline void mollified_drift_into(std::span<const double> x, const DriftSpec& spec, const Mollifier& m,
                                 std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    add_mollified_singular_drift(x, spec.alpha(), m, out);
    spec.smooth().add_value(x, out);
}

/// out = f^(eps)'(x).
inline void mollified_jacobian_into(std::span<const double> x, const DriftSpec& spec, const Mollifier& m,
                                    Matrix& out) {
    const auto d = static_cast<Eigen::Index>(x.size());
    out.setZero(d, d);
    for (Eigen::Index k = 1; k < d; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double a = spec.alpha()(k, l);
            if (a == 0.0) continue;
            const double w = a * m.unit_phi_prime(x[k] - x[l]);
            out(k, k) += w;
            out(l, l) += w;
            out(k, l) -= w;
            out(l, k) -= w;
        }
    }
    spec.smooth().add_jacobian(x, out);
}

inline Vector drift_mollified(const Vector& x, const AlphaMatrix& alpha, const Mollifier& m) {
    detail::require_dim(x.size(), alpha.dim(), "state");
    Vector out = Vector::Zero(x.size());
    add_mollified_singular_drift(as_span(x), alpha, m, as_span(out));
    return out;
}

inline Vector drift_full_mollified(const Vector& x, const DriftSpec& spec, const Mollifier& m) {
    detail::require_dim(x.size(), spec.dim(), "state");
    Vector out(x.size());
    mollified_drift_into(as_span(x), spec, m, as_span(out));
    return out;
}

/// a^(eps)'(x): symmetric, negative semidefinite.
inline Matrix jacobian_mollified(const Vector& x, const AlphaMatrix& alpha, const Mollifier& m) {
    detail::require_dim(x.size(), alpha.dim(), "state");
    const Eigen::Index d = x.size();
    Matrix out = Matrix::Zero(d, d);
    for (Eigen::Index k = 1; k < d; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double w = phi_eps_prime(x[k] - x[l], k, l, alpha, m);
            out(k, k) += w;
            out(l, l) += w;
            out(k, l) -= w;
            out(l, k) -= w;
        }
    }
    return out;
}

inline Matrix jacobian_full_mollified(const Vector& x, const DriftSpec& spec, const Mollifier& m) {
    detail::require_dim(x.size(), spec.dim(), "state");
    Matrix out;
    mollified_jacobian_into(as_span(x), spec, m, out);
    return out;
}

/// <y, a^(eps)'(x) y> in pairwise-difference form.
inline double quadratic_form_mollified(const Vector& x, const Vector& y, const AlphaMatrix& alpha,
                                       const Mollifier& m) {
    double q = 0.0;
    for (Eigen::Index k = 1; k < x.size(); ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double dy = y[k] - y[l];
            q += phi_eps_prime(x[k] - x[l], k, l, alpha, m) * dy * dy;
        }
    }
    return q;
}

/// Component i: sum_{l != i} phi^(eps)''_il(x_i - x_l) (y_i - y_l)(z_i - z_l).
inline Vector second_derivative_contraction_mollified(const Vector& x, const Vector& y, const Vector& z,
                                                      const AlphaMatrix& alpha, const Mollifier& m) {
    const Eigen::Index d = x.size();
    Vector out = Vector::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index l = 0; l < d; ++l) {
            if (l == i) continue;
            out[i] += phi_eps_second(x[i] - x[l], i, l, alpha, m) * (y[i] - y[l]) * (z[i] - z[l]);
        }
    }
    return out;
}

/// Simulation default: keep the mollifier inactive at t = 0 and tie it to the step size.
inline double default_epsilon(std::span<const double> x0, double dt) {
    const double eps = std::min(0.5 * min_adjacent_gap(x0), std::sqrt(dt));
    return std::min(eps, 0.5);
}

}  // namespace ncps
