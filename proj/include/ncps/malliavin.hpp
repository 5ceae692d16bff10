#pragma once

// Malliavin derivative kernel, covering functionals and the duality certificate
//   <DX_i(t), u_k>_H = gamma_ik,  gamma = I - e^{-(M+1)t} Y(t).

#include "ncps/error.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/sde.hpp"
#include "ncps/variational.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace ncps {

struct MalliavinBundle {
    std::size_t t_index = 0;
    double t = 0.0;
    double bound_m = 0.0;
    Vector times;                // nodes s_0..s_{t_index}
    std::vector<Matrix> dx;      // dx[k](i, n) = (Y(t) Z(s_k) sigma)_{in}
    std::vector<Matrix> u;       // u[k](n, j) = (sigma^{-1}((M+1)I - f'(X(s_k))))_{nj} e^{-(M+1)(t-s_k)}
    Matrix gamma;
    Matrix gamma_inv;
    double det_gamma = 0.0;
    bool mollified_regime = false;
};

namespace detail {

inline void check_time_index(const FlowPair& fp, std::size_t t_index) {
    if (t_index >= fp.size()) throw Error(ErrorKind::IndexOrder, "time index outside the grid");
}

/// Trapezoid weights on nodes 0..n of `times`.
inline std::vector<double> trapezoid_weights(const Vector& times, std::size_t n) {
    std::vector<double> w(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double h = times[static_cast<Eigen::Index>(k) + 1] - times[static_cast<Eigen::Index>(k)];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    return w;
}

}  // namespace detail

/// DX kernel on nodes s_k <= t; the kernel vanishes for s > t and is not stored there.
inline std::vector<Matrix> derivative_kernel(const FlowPair& fp, const DriftSpec& spec, std::size_t t_index) {
    detail::check_time_index(fp, t_index);
    std::vector<Matrix> dx;
    dx.reserve(t_index + 1);
    const Matrix yt = fp.Y[t_index];
    for (std::size_t k = 0; k <= t_index; ++k) dx.push_back(yt * fp.Z[k] * spec.sigma());
    return dx;
}

/// u kernel on nodes s_k <= t. f' is the mollified Jacobian, which equals the exact one
/// wherever every gap is at least epsilon.
inline std::vector<Matrix> covering_kernel(const Path& path, const FlowPair& fp, const DriftSpec& spec,
                                           std::size_t t_index) {
    detail::check_time_index(fp, t_index);
    if (!spec.sigma_inv()) throw Error(ErrorKind::SigmaSingular, "covering functional needs an invertible sigma");
    if (!path.complete() || static_cast<std::size_t>(path.states.rows()) != fp.size())
        throw Error(ErrorKind::PathIncomplete, "path does not match the flow grid");
    const Eigen::Index d = path.dim();
    const double m1 = spec.derivative_bound() + 1.0;
    const double t = fp.times[static_cast<Eigen::Index>(t_index)];
    const Mollifier mollifier(fp.epsilon);
    std::vector<Matrix> u;
    u.reserve(t_index + 1);
    Matrix jac(d, d);
    for (std::size_t k = 0; k <= t_index; ++k) {
        if (k < fp.jacobians.size()) {
            jac = fp.jacobians[k];
        } else {
            mollified_jacobian_into(row_span(path.states, static_cast<Eigen::Index>(k)), spec, mollifier, jac);
        }
        const double decay = std::exp(-m1 * (t - fp.times[static_cast<Eigen::Index>(k)]));
        u.push_back(*spec.sigma_inv() * (m1 * Matrix::Identity(d, d) - jac) * decay);
    }
    return u;
}

struct GammaMatrices {
    Matrix gamma;
    Matrix gamma_inv;
    double det = 0.0;
};

/// Lower bound (1 - e^{-t})^d on |det gamma|.
inline double gamma_det_bound(double t, Eigen::Index d) { return std::pow(1.0 - std::exp(-t), static_cast<double>(d)); }

inline GammaMatrices gamma_matrices(const FlowPair& fp, const DriftSpec& spec, std::size_t t_index) {
    detail::check_time_index(fp, t_index);
    if (t_index < 1) throw Error(ErrorKind::IndexOrder, "gamma needs t > 0");
    const Eigen::Index d = fp.dim();
    const double t = fp.times[static_cast<Eigen::Index>(t_index)];
    GammaMatrices g;
    g.gamma = Matrix::Identity(d, d) - std::exp(-(spec.derivative_bound() + 1.0) * t) * fp.Y[t_index];
    Eigen::PartialPivLU<Matrix> lu(g.gamma);
    g.det = lu.determinant();
    if (!(std::abs(g.det) >= 0.5 * gamma_det_bound(t, d)))
        throw Error(ErrorKind::GammaDegenerate, "|det gamma| fell below half its lower bound; flow is corrupted");
    g.gamma_inv = lu.inverse();
    return g;
}

inline MalliavinBundle malliavin_bundle(const Path& path, const FlowPair& fp, const DriftSpec& spec,
                                        std::size_t t_index) {
    MalliavinBundle b;
    b.t_index = t_index;
    b.dx = derivative_kernel(fp, spec, t_index);
    b.u = covering_kernel(path, fp, spec, t_index);
    auto g = gamma_matrices(fp, spec, t_index);
    b.t = fp.times[static_cast<Eigen::Index>(t_index)];
    b.bound_m = spec.derivative_bound();
    b.times = fp.times.head(static_cast<Eigen::Index>(t_index) + 1);
    b.gamma = std::move(g.gamma);
    b.gamma_inv = std::move(g.gamma_inv);
    b.det_gamma = g.det;
    double gap = INFINITY;
    for (std::size_t k = 0; k <= t_index; ++k)
        gap = std::min(gap, min_adjacent_gap(row_span(path.states, static_cast<Eigen::Index>(k))));
    b.mollified_regime = gap < fp.epsilon;
    return b;
}

struct DualityReport {
    Matrix pairing;          // (<DX_i, u_k>)_{ik}
    Matrix pairing_residual;  // pairing - gamma
    Matrix residual;          // pairing * gamma^{-1} - I
    double max_residual = 0.0;
    bool mollified_regime = false;
};

/// Trapezoid pairing over [0, t] on the simulation grid.
inline DualityReport duality_check(const MalliavinBundle& b) {
    const Eigen::Index d = b.gamma.rows();
    const auto w = detail::trapezoid_weights(b.times, b.t_index);
    DualityReport r;
    r.pairing = Matrix::Zero(d, d);
    for (std::size_t k = 0; k <= b.t_index; ++k) r.pairing.noalias() += w[k] * (b.dx[k] * b.u[k]);
    r.pairing_residual = r.pairing - b.gamma;
    r.residual = r.pairing * b.gamma_inv - Matrix::Identity(d, d);
    r.max_residual = r.residual.cwiseAbs().maxCoeff();
    r.mollified_regime = b.mollified_regime;
    return r;
}

struct CameronMartinReport {
    Vector norm_squared;     // per component i: sum_n int_0^t (Y(t)Z(s)sigma)_{in}^2 ds (trapezoid)
    double bound = 0.0;       // (e^{2Mt} - 1)/(2M) |sigma|^2, or t |sigma|^2 when M = 0
    double bound_grid = 0.0;  // the same integrand e^{2M(t-s)}|sigma|^2 under the grid trapezoid rule

    double max_ratio() const { return norm_squared.maxCoeff() / bound_grid; }
};

inline CameronMartinReport cameron_martin(const MalliavinBundle& b, const DriftSpec& spec) {
    const Eigen::Index d = b.gamma.rows();
    const auto w = detail::trapezoid_weights(b.times, b.t_index);
    const double m = b.bound_m;
    const double s2 = spec.sigma().squaredNorm();
    CameronMartinReport r;
    r.norm_squared = Vector::Zero(d);
    for (std::size_t k = 0; k <= b.t_index; ++k) {
        r.norm_squared += w[k] * b.dx[k].rowwise().squaredNorm();
        r.bound_grid += w[k] * std::exp(2.0 * m * (b.t - b.times[static_cast<Eigen::Index>(k)])) * s2;
    }
    r.bound = (m > 0.0 ? std::expm1(2.0 * m * b.t) / (2.0 * m) : b.t) * s2;
    return r;
}

inline void write_duality_csv_header(std::ostream& os) { os << "config_id,seed,t,max_residual,flag_mollified\n"; }

inline void write_duality_csv_row(std::ostream& os, const std::string& config_id, std::uint64_t seed, double t,
                                  const DualityReport& r) {
    CsvWriter(os).cell(config_id).cell(seed).cell(t).cell(r.max_residual).cell(r.mollified_regime ? 1 : 0).end();
}

}  // namespace ncps
