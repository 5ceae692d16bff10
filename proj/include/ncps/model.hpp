#pragma once

// Coefficients of the particle system: the singular pairwise repulsion a(x),
// the smooth drift b(x), and the constant diffusion matrix sigma.

#include "ncps/error.hpp"
#include "ncps/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ncps {

/// States with a gap below this are treated as collided.
inline constexpr double kMinGap = 1e-12;

inline void require_ordered(std::span<const double> x) {
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double gap = x[i] - x[i - 1];
        if (!(gap >= kMinGap)) {
            throw Error(ErrorKind::NotOrdered, "gap x[" + std::to_string(i) + "] - x[" +
                                                   std::to_string(i - 1) + "] = " + std::to_string(gap) +
                                                   " is not positive");
        }
    }
}

/// A point of the open Weyl chamber: d >= 2 strictly increasing coordinates.
class ParticleState {
public:
    static ParticleState make(Vector x) {
        if (x.size() < 2) throw Error(ErrorKind::ConfigInvalid, "particle systems need d >= 2");
        require_ordered(as_span(x));
        return ParticleState(std::move(x));
    }

    static ParticleState make(std::initializer_list<double> xs) {
        Vector x(static_cast<Eigen::Index>(xs.size()));
        std::copy(xs.begin(), xs.end(), x.data());
        return make(std::move(x));
    }

    const Vector& values() const noexcept { return x_; }
    Eigen::Index dim() const noexcept { return x_.size(); }
    double operator[](Eigen::Index i) const { return x_[i]; }
    std::span<const double> span() const { return as_span(x_); }

private:
    explicit ParticleState(Vector x) : x_(std::move(x)) {}
    Vector x_;
};

/// Symmetric, non-negative interaction strengths with zero diagonal.
class AlphaMatrix {
public:
    static AlphaMatrix constant(Eigen::Index d, double alpha) {
        if (d < 2) throw Error(ErrorKind::ConfigInvalid, "particle systems need d >= 2");
        if (!(alpha >= 0.0)) throw Error(ErrorKind::ConfigInvalid, "alpha must be non-negative");
        Matrix a = Matrix::Constant(d, d, alpha);
        a.diagonal().setZero();
        return AlphaMatrix(std::move(a));
    }

    static AlphaMatrix from_matrix(Matrix a) {
        if (a.rows() != a.cols() || a.rows() < 2)
            throw Error(ErrorKind::ConfigInvalid, "alpha must be a square matrix with d >= 2");
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (a(i, i) != 0.0) throw Error(ErrorKind::ConfigInvalid, "alpha must have a zero diagonal");
            for (Eigen::Index k = 0; k < a.cols(); ++k) {
                if (!(a(i, k) >= 0.0)) throw Error(ErrorKind::ConfigInvalid, "alpha entries must be non-negative");
                if (a(i, k) != a(k, i)) throw Error(ErrorKind::ConfigInvalid, "alpha must be symmetric");
            }
        }
        return AlphaMatrix(std::move(a));
    }

    double operator()(Eigen::Index i, Eigen::Index k) const { return a_(i, k); }
    Eigen::Index dim() const noexcept { return a_.rows(); }
    const Matrix& matrix() const noexcept { return a_; }

    /// Sum over pairs k > l of alpha_kl.
    double pair_sum() const {
        double s = 0.0;
        for (Eigen::Index k = 0; k < dim(); ++k)
            for (Eigen::Index l = 0; l < k; ++l) s += a_(k, l);
        return s;
    }

    std::optional<double> constant_value() const {
        const double v = a_(1, 0);
        for (Eigen::Index k = 0; k < dim(); ++k)
            for (Eigen::Index l = 0; l < k; ++l)
                if (a_(k, l) != v) return std::nullopt;
        return v;
    }

private:
    explicit AlphaMatrix(Matrix a) : a_(std::move(a)) {}
    Matrix a_;
};

namespace detail {

// psi(xi) = coth(xi) - 1/xi and its derivative; series near 0 avoid cancellation.
inline double hyperbolic_psi(double xi) {
    if (std::abs(xi) < 0.1) {
        const double x2 = xi * xi;
        return xi * (1.0 / 3.0 + x2 * (-1.0 / 45.0 + x2 * (2.0 / 945.0 + x2 * (-1.0 / 4725.0 + x2 * 2.0 / 93555.0))));
    }
    return 1.0 / std::tanh(xi) - 1.0 / xi;
}

inline double hyperbolic_psi_prime(double xi) {
    const double x2 = xi * xi;
    if (std::abs(xi) < 0.1)
        return 1.0 / 3.0 + x2 * (-1.0 / 15.0 + x2 * (2.0 / 189.0 + x2 * (-1.0 / 675.0 + x2 * 2.0 / 10395.0)));
    if (std::abs(xi) > 30.0) return 1.0 / x2;
    const double s = std::sinh(xi);
    return 1.0 / x2 - 1.0 / (s * s);
}

}  // namespace detail

/// The smooth part b of the drift together with M, a bound on |b'| (Frobenius).
class SmoothDrift {
public:
    enum class Kind { Zero, LinearMu, HyperbolicCorrection, Custom };

    using ValueFn = std::function<void(std::span<const double> x, std::span<double> out)>;
    using JacobianFn = std::function<void(std::span<const double> x, Matrix& out)>;

    static SmoothDrift zero() { return SmoothDrift(Kind::Zero); }

    /// mu_i(x) = mu_tilde_i * x_i.
    static SmoothDrift linear_mu(Vector mu_tilde) {
        SmoothDrift s(Kind::LinearMu);
        s.dim_ = mu_tilde.size();
        s.bound_ = mu_tilde.norm();
        s.monotone_ = true;
        for (Eigen::Index k = 1; k < mu_tilde.size(); ++k)
            if (mu_tilde[k] < mu_tilde[k - 1]) s.monotone_ = false;
        s.mu_ = std::move(mu_tilde);
        return s;
    }

    /// c_i(x) = sum_k alpha_ik psi(x_i - x_k); with the singular part this gives alpha coth.
    static SmoothDrift hyperbolic_correction(AlphaMatrix alpha) {
        SmoothDrift s(Kind::HyperbolicCorrection);
        s.dim_ = alpha.dim();
        // psi' takes values in (0, 1/3], so the weighted-Laplacian structure of c'
        // is bounded entrywise by alpha/3.
        double sq = 0.0;
        for (Eigen::Index i = 0; i < alpha.dim(); ++i) {
            double row = 0.0;
            for (Eigen::Index k = 0; k < alpha.dim(); ++k) {
                if (k == i) continue;
                row += alpha(i, k) / 3.0;
                sq += (alpha(i, k) / 3.0) * (alpha(i, k) / 3.0);
            }
            sq += row * row;
        }
        s.bound_ = std::sqrt(sq);
        s.alpha_ = std::move(alpha);
        return s;
    }

    /// User-supplied drift and Jacobian. The declared bound is spot-checked on random states.
    static SmoothDrift custom(Eigen::Index d, ValueFn value, JacobianFn jacobian, double bound,
                              bool monotone = false, std::size_t probes = 256, std::uint64_t seed = 1) {
        if (d < 2 || !value || !jacobian)
            throw Error(ErrorKind::ConfigInvalid, "custom smooth drift needs d >= 2 and both callables");
        if (!(bound >= 0.0)) throw Error(ErrorKind::ConfigInvalid, "derivative bound M must be non-negative");
        SmoothDrift s(Kind::Custom);
        s.dim_ = d;
        s.bound_ = bound;
        s.monotone_ = monotone;
        s.value_ = std::move(value);
        s.jacobian_ = std::move(jacobian);

        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 3.0);
        Vector x(d);
        Matrix jac(d, d);
        for (std::size_t p = 0; p < probes; ++p) {
            for (Eigen::Index i = 0; i < d; ++i) x[i] = normal(rng);
            jac.setZero();
            s.jacobian_(as_span(x), jac);
            if (jac.norm() > bound * (1.0 + 1e-9) + 1e-12)
                throw Error(ErrorKind::ConfigInvalid,
                            "declared bound M = " + std::to_string(bound) + " is below |b'(x)| = " +
                                std::to_string(jac.norm()) + " at a probed state");
        }
        return s;
    }

    Kind kind() const noexcept { return kind_; }
    double bound() const noexcept { return bound_; }
    bool monotone() const noexcept { return monotone_; }
    bool is_zero() const noexcept { return kind_ == Kind::Zero; }
    const Vector& mu_tilde() const noexcept { return mu_; }
    /// 0 for the dimension-agnostic zero drift.
    Eigen::Index dim() const noexcept { return dim_; }

    void add_value(std::span<const double> x, std::span<double> out) const {
        switch (kind_) {
            case Kind::Zero: return;
            case Kind::LinearMu:
                for (std::size_t i = 0; i < x.size(); ++i) out[i] += mu_[static_cast<Eigen::Index>(i)] * x[i];
                return;
            case Kind::HyperbolicCorrection: {
                const auto d = static_cast<Eigen::Index>(x.size());
                for (Eigen::Index k = 0; k < d; ++k) {
                    for (Eigen::Index l = 0; l < k; ++l) {
                        const double v = alpha_(k, l) * detail::hyperbolic_psi(x[k] - x[l]);
                        out[k] += v;
                        out[l] -= v;
                    }
                }
                return;
            }
            case Kind::Custom: {
                thread_local std::vector<double> scratch;
                scratch.assign(x.size(), 0.0);
                value_(x, scratch);
                for (std::size_t i = 0; i < x.size(); ++i) out[i] += scratch[i];
                return;
            }
        }
    }

    void add_jacobian(std::span<const double> x, Matrix& out) const {
        switch (kind_) {
            case Kind::Zero: return;
            case Kind::LinearMu: out.diagonal() += mu_; return;
            case Kind::HyperbolicCorrection: {
                const auto d = static_cast<Eigen::Index>(x.size());
                for (Eigen::Index k = 0; k < d; ++k) {
                    for (Eigen::Index l = 0; l < k; ++l) {
                        const double w = alpha_(k, l) * detail::hyperbolic_psi_prime(x[k] - x[l]);
                        out(k, k) += w;
                        out(l, l) += w;
                        out(k, l) -= w;
                        out(l, k) -= w;
                    }
                }
                return;
            }
            case Kind::Custom: {
                Matrix jac = Matrix::Zero(out.rows(), out.cols());
                jacobian_(x, jac);
                out += jac;
                return;
            }
        }
    }

    Vector value(const Vector& x) const {
        Vector out = Vector::Zero(x.size());
        add_value(as_span(x), as_span(out));
        return out;
    }

    Matrix jacobian(const Vector& x) const {
        Matrix out = Matrix::Zero(x.size(), x.size());
        add_jacobian(as_span(x), out);
        return out;
    }

private:
    explicit SmoothDrift(Kind kind) : kind_(kind), alpha_(AlphaMatrix::constant(2, 0.0)) {}

    Kind kind_;
    Eigen::Index dim_ = 0;
    double bound_ = 0.0;
    bool monotone_ = true;
    Vector mu_;
    AlphaMatrix alpha_;
    ValueFn value_;
    JacobianFn jacobian_;
};

/// Full coefficient set: f = a + b and constant sigma.
class DriftSpec {
public:
    static DriftSpec make(AlphaMatrix alpha, SmoothDrift smooth, Matrix sigma,
                          std::optional<double> growth = std::nullopt) {
        const Eigen::Index d = alpha.dim();
        if (smooth.dim() != 0 && smooth.dim() != d)
            throw Error(ErrorKind::ConfigInvalid, "smooth drift dimension does not match alpha");
        if (sigma.rows() != d || sigma.cols() != d)
            throw Error(ErrorKind::ConfigInvalid, "sigma must be d x d");

        DriftSpec spec(std::move(alpha), std::move(smooth), std::move(sigma));
        Eigen::FullPivLU<Matrix> lu(spec.sigma_);
        if (lu.isInvertible()) {
            Matrix inv = lu.inverse();
            if ((spec.sigma_ * inv - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-12)
                spec.sigma_inv_ = std::move(inv);
        }
        spec.sigma_identity_ = spec.sigma_.isIdentity(0.0);

        const double base = 2.0 * spec.alpha_.pair_sum() + spec.sigma_.squaredNorm();
        switch (spec.smooth_.kind()) {
            case SmoothDrift::Kind::Zero: spec.growth_ = base; break;
            case SmoothDrift::Kind::LinearMu:
                spec.growth_ = std::max(base, 2.0 * std::max(0.0, spec.smooth_.mu_tilde().maxCoeff()));
                break;
            case SmoothDrift::Kind::HyperbolicCorrection: {
                // xi coth(xi) <= 1 + |xi| <= 3/2 + xi^2/2 and (x_k - x_l)^2 <= 2|x|^2.
                const double s = spec.alpha_.pair_sum();
                spec.growth_ = std::max(3.0 * s + spec.sigma_.squaredNorm(), 2.0 * s);
                break;
            }
            case SmoothDrift::Kind::Custom: spec.growth_ = 1.1 * spec.sampled_growth(512, 7); break;
        }
        if (growth) {
            if (!(*growth > 0.0)) throw Error(ErrorKind::ConfigInvalid, "growth constant K must be positive");
            spec.growth_ = *growth;
        }
        if (!spec.growth_holds(512, 11))
            throw Error(ErrorKind::ConfigInvalid, "growth constant K is violated at a probed state");
        return spec;
    }

    /// Dyson-type system: constant alpha, given smooth drift, sigma = I.
    static DriftSpec dyson(Eigen::Index d, double alpha, SmoothDrift smooth = SmoothDrift::zero()) {
        return make(AlphaMatrix::constant(d, alpha), std::move(smooth), Matrix::Identity(d, d));
    }

    Eigen::Index dim() const noexcept { return alpha_.dim(); }
    const AlphaMatrix& alpha() const noexcept { return alpha_; }
    const SmoothDrift& smooth() const noexcept { return smooth_; }
    const Matrix& sigma() const noexcept { return sigma_; }
    const std::optional<Matrix>& sigma_inv() const noexcept { return sigma_inv_; }
    bool sigma_is_identity() const noexcept { return sigma_identity_; }
    double growth() const noexcept { return growth_; }
    /// M = sup |b'(x)|.
    double derivative_bound() const noexcept { return smooth_.bound(); }

    /// Largest observed (2<x, f(x)> + |sigma|^2) / (1 + |x|^2) over random ordered states.
    double sampled_growth(std::size_t probes, std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        const double scales[] = {0.5, 2.0, 10.0};
        Vector x(dim());
        Vector b(dim());
        double worst = 0.0;
        for (std::size_t p = 0; p < probes; ++p) {
            std::normal_distribution<double> normal(0.0, scales[p % 3]);
            for (Eigen::Index i = 0; i < dim(); ++i) x[i] = normal(rng);
            std::sort(x.data(), x.data() + x.size());
            if (min_adjacent_gap(as_span(x)) < 1e-6) continue;
            b.setZero();
            smooth_.add_value(as_span(x), as_span(b));
            // <x, a(x)> equals the pair sum exactly on the chamber.
            const double lhs = 2.0 * alpha_.pair_sum() + 2.0 * x.dot(b) + sigma_.squaredNorm();
            worst = std::max(worst, lhs / (1.0 + x.squaredNorm()));
        }
        return worst;
    }

    bool growth_holds(std::size_t probes, std::uint64_t seed) const {
        return sampled_growth(probes, seed) <= growth_ * (1.0 + 1e-12);
    }

private:
    DriftSpec(AlphaMatrix alpha, SmoothDrift smooth, Matrix sigma)
        : alpha_(std::move(alpha)), smooth_(std::move(smooth)), sigma_(std::move(sigma)) {}

    AlphaMatrix alpha_;
    SmoothDrift smooth_;
    Matrix sigma_;
    std::optional<Matrix> sigma_inv_;
    bool sigma_identity_ = false;
    double growth_ = 0.0;
};

namespace detail {

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want)
        throw Error(ErrorKind::ConfigInvalid, std::string(what) + " has dimension " + std::to_string(got) +
                                                  ", expected " + std::to_string(want));
}

}  // namespace detail

/// a_i(x) = sum_{k != i} alpha_ik / (x_i - x_k).
inline Vector drift_singular(const ParticleState& x, const AlphaMatrix& alpha) {
    detail::require_dim(x.dim(), alpha.dim(), "state");
    const Eigen::Index d = x.dim();
    Vector out = Vector::Zero(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double v = alpha(k, l) / (x[k] - x[l]);
            out[k] += v;
            out[l] -= v;
        }
    }
    return out;
}

/// f = a + b.
inline Vector drift_full(const ParticleState& x, const DriftSpec& spec) {
    Vector out = drift_singular(x, spec.alpha());
    spec.smooth().add_value(x.span(), as_span(out));
    return out;
}

/// a'(x): diagonal sum_l phi'_il(x_i - x_l), off-diagonal -phi'_ij(x_i - x_j), phi'(xi) = -alpha/xi^2.
inline Matrix singular_jacobian(const ParticleState& x, const AlphaMatrix& alpha) {
    detail::require_dim(x.dim(), alpha.dim(), "state");
    const Eigen::Index d = x.dim();
    Matrix out = Matrix::Zero(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double xi = x[k] - x[l];
            const double dphi = -alpha(k, l) / (xi * xi);
            out(k, k) += dphi;
            out(l, l) += dphi;
            out(k, l) -= dphi;
            out(l, k) -= dphi;
        }
    }
    return out;
}

/// f'(x) = a'(x) + b'(x).
inline Matrix drift_jacobian(const ParticleState& x, const DriftSpec& spec) {
    Matrix out = singular_jacobian(x, spec.alpha());
    spec.smooth().add_jacobian(x.span(), out);
    return out;
}

/// <y, a'(x) y> via the pairwise-difference form; never positive.
inline double quadratic_form_a(const ParticleState& x, const Vector& y, const AlphaMatrix& alpha) {
    detail::require_dim(x.dim(), alpha.dim(), "state");
    detail::require_dim(y.size(), x.dim(), "y");
    double q = 0.0;
    for (Eigen::Index k = 0; k < x.dim(); ++k) {
        for (Eigen::Index l = 0; l < k; ++l) {
            const double xi = x[k] - x[l];
            const double dy = y[k] - y[l];
            q += -alpha(k, l) / (xi * xi) * dy * dy;
        }
    }
    return q;
}

/// sum_i x_i a_i(x); equals the pair sum of alpha on the chamber.
inline double weighted_drift_sum(const ParticleState& x, const AlphaMatrix& alpha) {
    return x.values().dot(drift_singular(x, alpha));
}

/// Component i: sum_{l != i} phi''_il(x_i - x_l) (y_i - y_l)(z_i - z_l), phi''(xi) = 2 alpha / xi^3.
inline Vector second_derivative_contraction(const ParticleState& x, const Vector& y, const Vector& z,
                                            const AlphaMatrix& alpha) {
    detail::require_dim(x.dim(), alpha.dim(), "state");
    detail::require_dim(y.size(), x.dim(), "y");
    detail::require_dim(z.size(), x.dim(), "z");
    const Eigen::Index d = x.dim();
    Vector out = Vector::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index l = 0; l < d; ++l) {
            if (l == i) continue;
            const double xi = x[i] - x[l];
            out[i] += 2.0 * alpha(i, l) / (xi * xi * xi) * (y[i] - y[l]) * (z[i] - z[l]);
        }
    }
    return out;
}

}  // namespace ncps
