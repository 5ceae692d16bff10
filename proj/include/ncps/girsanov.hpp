#pragma once

// Change of measure between interaction strengths (base alpha = 1/2) and by bounded
// drift shifts. Weights live in the log domain throughout.

#include "ncps/error.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/parallel.hpp"
#include "ncps/sde.hpp"
#include "ncps/statistics.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace ncps {

/// h(x) = prod_{k>l} (x_k - x_l), kept as its logarithm.
struct VandermondeFactor {
    double log_value = 0.0;
    double value() const { return std::exp(log_value); }
};

inline VandermondeFactor vandermonde(std::span<const double> x) {
    require_ordered(x);
    VandermondeFactor h;
    for (std::size_t k = 0; k < x.size(); ++k)
        for (std::size_t l = 0; l < k; ++l) h.log_value += std::log(x[k] - x[l]);
    return h;
}

inline VandermondeFactor vandermonde(const ParticleState& x) { return vandermonde(x.span()); }

/// u_i1 = sum_{k != i} 1/(x_i - x_k) (the gradient of log h), u_i2 = sum_{k != i} (x_i - x_k)^{-2}.
struct UTerms {
    double sum_u1_squared = 0.0;
    double sum_u2 = 0.0;
};

inline UTerms u_identity(std::span<const double> x) {
    require_ordered(x);
    UTerms r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double u1 = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (k == i) continue;
            const double g = x[i] - x[k];
            u1 += 1.0 / g;
            r.sum_u2 += 1.0 / (g * g);
        }
        r.sum_u1_squared += u1 * u1;
    }
    return r;
}

inline UTerms u_identity(const ParticleState& x) { return u_identity(x.span()); }

struct GirsanovWeight {
    double nu = 0.0;
    double log_z = 0.0;
};

namespace detail {

inline void require_girsanov_base(const DriftSpec& spec) {
    const auto a = spec.alpha().constant_value();
    if (!a || *a != 0.5) throw Error(ErrorKind::ConfigInvalid, "Girsanov base must have constant alpha = 1/2");
    if (!spec.sigma_is_identity()) throw Error(ErrorKind::ConfigInvalid, "Girsanov base must have sigma = I");
    if (spec.smooth().kind() == SmoothDrift::Kind::HyperbolicCorrection)
        throw Error(ErrorKind::ConfigInvalid, "Girsanov base takes a mu drift only (c = 0)");
}

inline double require_nu(double target_alpha) {
    if (!(target_alpha >= 0.5)) throw Error(ErrorKind::ConfigInvalid, "target alpha must be at least 1/2");
    return target_alpha - 0.5;
}

/// Integrands of the closed form at one state: sum_{k>l} (mu_k - mu_l)/(x_k - x_l) and sum_i u_i2.
struct ClosedIntegrands {
    double drift = 0.0;
    double u2 = 0.0;
};

inline ClosedIntegrands closed_integrands(std::span<const double> x, const SmoothDrift& smooth,
                                          std::vector<double>& mu) {
    ClosedIntegrands c;
    std::fill(mu.begin(), mu.end(), 0.0);
    smooth.add_value(x, mu);
    for (std::size_t k = 0; k < x.size(); ++k) {
        for (std::size_t l = 0; l < k; ++l) {
            const double g = x[k] - x[l];
            c.drift += (mu[k] - mu[l]) / g;
            c.u2 += 2.0 / (g * g);
        }
    }
    return c;
}

/// u1 = gradient of log h at x: exact, or its mollification (unit alpha) when m is given.
inline void u1_into(std::span<const double> x, const Mollifier* m, const AlphaMatrix& unit, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (m) {
        add_mollified_singular_drift(x, unit, *m, out);
        return;
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        for (std::size_t l = 0; l < k; ++l) {
            const double v = 1.0 / (x[k] - x[l]);
            out[k] += v;
            out[l] -= v;
        }
    }
}

inline bool has_collision(const Path& path) {
    for (Eigen::Index k = 0; k < path.states.rows(); ++k)
        if (!(min_adjacent_gap(row_span(path.states, k)) > 0.0)) return true;
    return false;
}

}  // namespace detail

/// Closed form: log Z = nu log(h(X_T)/h(x0)) - nu int sum_{k>l}(mu_k-mu_l)/(x_k-x_l) - nu^2/2 int sum_i u_i2,
/// time integrals by the trapezoid rule on the path grid.
inline GirsanovWeight weight_closed_form(const Path& path, const DriftSpec& base, double target_alpha) {
    detail::require_girsanov_base(base);
    const double nu = detail::require_nu(target_alpha);
    if (!path.complete()) throw Error(ErrorKind::PathIncomplete, "closed-form weight needs every stored state");
    GirsanovWeight w{nu, 0.0};
    if (nu == 0.0) return w;
    if (detail::has_collision(path)) throw Error(ErrorKind::CollidedPath, "path left the Weyl chamber");
    std::vector<double> mu(static_cast<std::size_t>(path.dim()));
    double drift = 0.0, u2 = 0.0;
    const Eigen::Index n = path.states.rows() - 1;
    for (Eigen::Index k = 0; k <= n; ++k) {
        const double wk = 0.5 * ((k > 0 ? path.times[k] - path.times[k - 1] : 0.0) +
                                 (k < n ? path.times[k + 1] - path.times[k] : 0.0));
        const auto c = detail::closed_integrands(row_span(path.states, k), base.smooth(), mu);
        drift += wk * c.drift;
        u2 += wk * c.u2;
    }
    const double log_h = vandermonde(row_span(path.states, n)).log_value - vandermonde(row_span(path.states, 0)).log_value;
    w.log_z = nu * log_h - nu * drift - 0.5 * nu * nu * u2;
    return w;
}

/// Running log Z_k = sum_{j<k} [nu u1(X_j).dW_j - nu^2/2 |u1(X_j)|^2 dt]. With a mollifier the
/// mollified u1 is used; this is the exact discrete likelihood ratio between the Euler
/// schemes at alpha = 1/2 and at the target alpha.
inline std::vector<double> weight_sde_form(const Path& path, const DriftSpec& base, double target_alpha,
                                           const Mollifier* mollifier = nullptr) {
    detail::require_girsanov_base(base);
    const double nu = detail::require_nu(target_alpha);
    if (!path.complete()) throw Error(ErrorKind::PathIncomplete, "SDE-form weight needs states and increments");
    const std::size_t n = path.n_steps();
    std::vector<double> log_z(n + 1, 0.0);
    if (nu == 0.0) return log_z;
    if (!mollifier && detail::has_collision(path)) throw Error(ErrorKind::CollidedPath, "path left the Weyl chamber");
    const auto d = static_cast<std::size_t>(path.dim());
    const auto unit = AlphaMatrix::constant(path.dim(), 1.0);
    std::vector<double> u(d);
    for (std::size_t k = 0; k < n; ++k) {
        const auto x = row_span(path.states, static_cast<Eigen::Index>(k));
        const auto dw = row_span(path.increments, static_cast<Eigen::Index>(k));
        detail::u1_into(x, mollifier, unit, u);
        const double h = path.times[static_cast<Eigen::Index>(k) + 1] - path.times[static_cast<Eigen::Index>(k)];
        double dm = 0.0, q = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dm += u[i] * dw[i];
            q += u[i] * u[i];
        }
        log_z[k + 1] = log_z[k] + nu * dm - 0.5 * nu * nu * q * h;
    }
    return log_z;
}

struct BracketReport {
    double from_u1_squared = 0.0;  // sum_k sum_i u_i1(X_k)^2 dt
    double from_u2 = 0.0;          // sum_k sum_i u_i2(X_k) dt
};

/// Left-point bracket <M>(T) along a non-colliding path, computed both ways.
inline BracketReport bracket(const Path& path) {
    if (detail::has_collision(path)) throw Error(ErrorKind::CollidedPath, "path left the Weyl chamber");
    BracketReport r;
    for (Eigen::Index k = 0; k + 1 < path.states.rows(); ++k) {
        const double h = path.times[k + 1] - path.times[k];
        const auto u = u_identity(row_span(path.states, k));
        r.from_u1_squared += u.sum_u1_squared * h;
        r.from_u2 += u.sum_u2 * h;
    }
    return r;
}

enum class WeightForm {
    SdeMollified,  // exact discrete likelihood ratio; no exclusions
    SdeExact,      // unmollified u1; paths with a grid gap < eps are excluded
    ClosedForm,    // Vandermonde closed form; paths with a grid gap < eps are excluded
};

/// Terminal states of a base ensemble with one log weight per path.
struct WeightedEnsemble {
    RowMatrix terminal;
    std::vector<double> log_weight;
    std::vector<std::uint8_t> excluded;
    double horizon = 0.0;

    std::size_t size() const { return log_weight.size(); }
    std::size_t excluded_count() const {
        std::size_t c = 0;
        for (auto e : excluded) c += e;
        return c;
    }
    double excluded_fraction() const { return size() ? static_cast<double>(excluded_count()) / size() : 0.0; }
};

/// Base ensemble at alpha = 1/2 reweighted towards target_alpha, streamed path by path.
inline WeightedEnsemble girsanov_ensemble(const SimConfig& base, std::size_t n_paths, double target_alpha,
                                          WeightForm form = WeightForm::SdeMollified) {
    base.validate();
    detail::require_girsanov_base(base.spec);
    const double nu = detail::require_nu(target_alpha);
    const auto d = static_cast<std::size_t>(base.dim());
    const auto unit = AlphaMatrix::constant(base.dim(), 1.0);
    const Mollifier mollifier = base.mollifier();
    const double eps = base.epsilon;
    const double dt = base.dt();

    WeightedEnsemble ens;
    ens.horizon = base.horizon;
    ens.terminal.resize(static_cast<Eigen::Index>(n_paths), base.dim());
    ens.log_weight.assign(n_paths, 0.0);
    ens.excluded.assign(n_paths, 0);
    const double log_h0 = vandermonde(base.x0).log_value;

    parallel_for(n_paths, [&](std::size_t p) {
        std::vector<double> u(d), mu(d);
        double log_z = 0.0, drift = 0.0, u2 = 0.0;
        bool excluded = false;
        auto x = row_span(ens.terminal, static_cast<Eigen::Index>(p));
        simulate_streaming(base, p, x, [&](std::size_t k, std::span<const double> xk, std::span<const double> dw) {
            if (form == WeightForm::SdeMollified) {
                detail::u1_into(xk, &mollifier, unit, u);
            } else {
                if (excluded || min_adjacent_gap(xk) < eps) {
                    excluded = true;
                    return;
                }
                if (form == WeightForm::ClosedForm) {
                    const auto c = detail::closed_integrands(xk, base.spec.smooth(), mu);
                    const double wk = k == 0 ? 0.5 * dt : dt;
                    drift += wk * c.drift;
                    u2 += wk * c.u2;
                    return;
                }
                detail::u1_into(xk, nullptr, unit, u);
            }
            double dm = 0.0, q = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                dm += u[i] * dw[i];
                q += u[i] * u[i];
            }
            log_z += nu * dm - 0.5 * nu * nu * q * dt;
        });
        if (form != WeightForm::SdeMollified && !excluded && min_adjacent_gap(x) < eps) excluded = true;
        if (form == WeightForm::ClosedForm && !excluded) {
            const auto c = detail::closed_integrands(x, base.spec.smooth(), mu);
            drift += 0.5 * dt * c.drift;
            u2 += 0.5 * dt * c.u2;
            log_z = nu * (vandermonde(x).log_value - log_h0) - nu * drift - 0.5 * nu * nu * u2;
        }
        ens.excluded[p] = excluded;
        ens.log_weight[p] = excluded ? 0.0 : log_z;
    });
    return ens;
}

/// Shift of the drift by c(x), |sigma^{-1} c(x)| <= bound_r, reweighting with
/// exp(sum theta.dW - 1/2 sum |theta|^2 dt), theta = sigma^{-1} c.
using DriftShift = std::function<void(std::span<const double> x, std::span<double> out)>;

inline WeightedEnsemble drift_girsanov_ensemble(const SimConfig& base, std::size_t n_paths, const DriftShift& c,
                                                double bound_r) {
    base.validate();
    if (!base.spec.sigma_inv()) throw Error(ErrorKind::SigmaSingular, "drift reweighting needs an invertible sigma");
    const auto d = static_cast<std::size_t>(base.dim());
    const Matrix sinv = *base.spec.sigma_inv();
    const double dt = base.dt();
    WeightedEnsemble ens;
    ens.horizon = base.horizon;
    ens.terminal.resize(static_cast<Eigen::Index>(n_paths), base.dim());
    ens.log_weight.assign(n_paths, 0.0);
    ens.excluded.assign(n_paths, 0);
    std::vector<std::uint8_t> out_of_bound(n_paths, 0);
    parallel_for(n_paths, [&](std::size_t p) {
        Vector cv(static_cast<Eigen::Index>(d)), theta(static_cast<Eigen::Index>(d));
        double log_z = 0.0;
        simulate_streaming(base, p, row_span(ens.terminal, static_cast<Eigen::Index>(p)),
                           [&](std::size_t, std::span<const double> xk, std::span<const double> dw) {
                               cv.setZero();
                               c(xk, as_span(cv));
                               theta.noalias() = sinv * cv;
                               if (theta.norm() > bound_r * (1.0 + 1e-12)) out_of_bound[p] = 1;
                               log_z += theta.dot(Eigen::Map<const Vector>(dw.data(), dw.size())) -
                                        0.5 * theta.squaredNorm() * dt;
                           });
        ens.log_weight[p] = log_z;
    });
    for (auto b : out_of_bound)
        if (b) throw Error(ErrorKind::ConfigInvalid, "drift shift exceeded its declared bound R");
    return ens;
}

/// Effective sample size (sum w)^2 / sum w^2 over included paths.
inline double effective_sample_size(const WeightedEnsemble& ens) {
    double mx = -INFINITY;
    for (std::size_t p = 0; p < ens.size(); ++p)
        if (!ens.excluded[p]) mx = std::max(mx, ens.log_weight[p]);
    if (!std::isfinite(mx)) return 0.0;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < ens.size(); ++p) {
        if (ens.excluded[p]) continue;
        const double w = std::exp(ens.log_weight[p] - mx);
        s1 += w;
        s2 += w * w;
    }
    return s1 * s1 / s2;
}

struct WeightedEstimate {
    Estimate estimate;
    double ess = 0.0;
    double excluded_fraction = 0.0;
};

using TerminalFunctional = std::function<double(std::span<const double>)>;

/// Unnormalized importance-sampling mean of g(X_T) Z(T); excluded paths contribute zero.
inline WeightedEstimate reweighted_expectation(const WeightedEnsemble& ens, const TerminalFunctional& g) {
    WeightedEstimate r;
    r.ess = effective_sample_size(ens);
    r.excluded_fraction = ens.excluded_fraction();
    if (r.ess < 10.0) throw Error(ErrorKind::DegenerateWeights, "effective sample size below 10");
    std::vector<double> v(ens.size(), 0.0);
    for (std::size_t p = 0; p < ens.size(); ++p)
        if (!ens.excluded[p])
            v[p] = g(row_span(ens.terminal, static_cast<Eigen::Index>(p))) * std::exp(ens.log_weight[p]);
    r.estimate = mean_estimate(v);
    return r;
}

struct DriftWeightedEstimate {
    WeightedEstimate weighted;
    Estimate weight_moment;  // E[Z^q]
    double moment_bound = 0.0;  // e^{q(q-1) R^2 T / 2}
};

inline DriftWeightedEstimate drift_reweighted_expectation(const WeightedEnsemble& ens, const TerminalFunctional& g,
                                                          double bound_r, double q = 2.0) {
    DriftWeightedEstimate r;
    r.weighted = reweighted_expectation(ens, g);
    std::vector<double> zq(ens.size());
    for (std::size_t p = 0; p < ens.size(); ++p) zq[p] = std::exp(q * ens.log_weight[p]);
    r.weight_moment = mean_estimate(zq);
    r.moment_bound = std::exp(0.5 * q * (q - 1.0) * bound_r * bound_r * ens.horizon);
    return r;
}

/// Monte Carlo mean of |X_i - X_k|^{-q} over the rows of `states` (0-based i, k).
inline Estimate inverse_moment(const RowMatrix& states, Eigen::Index i, Eigen::Index k, double q) {
    if (i == k || i < 0 || k < 0 || i >= states.cols() || k >= states.cols())
        throw Error(ErrorKind::ConfigInvalid, "inverse moment needs two distinct particle indices");
    if (q == 0.0) return {1.0, 0.0, static_cast<std::size_t>(states.rows())};
    std::vector<double> v(static_cast<std::size_t>(states.rows()));
    for (Eigen::Index p = 0; p < states.rows(); ++p)
        v[static_cast<std::size_t>(p)] = std::pow(std::abs(states(p, i) - states(p, k)), -q);
    return mean_estimate(v);
}

inline void write_estimator_csv_header(std::ostream& os) {
    os << "estimator,target_alpha,q,value,stderr,ess,excluded_fraction\n";
}

inline void write_estimator_csv_row(std::ostream& os, const std::string& estimator, double target_alpha, double q,
                                    const Estimate& e, double ess, double excluded_fraction) {
    CsvWriter w(os);
    w.cell(estimator).cell(target_alpha).cell(q).cell(e.value).cell(e.stderr_).cell(ess).cell(excluded_fraction).end();
}

}  // namespace ncps
