#pragma once

// Variational flows along a stored path:
//   dY = f'(X) Y dt,  dZ = -Z f'(X) dt,  Y(0) = Z(0) = I,
// with the Jacobian of the mollified drift frozen on each grid step.

#include "ncps/error.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/sde.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace ncps {

enum class FlowScheme {
    Exponential,  // exact solution of the frozen-coefficient step: Y <- exp(hJ) Y
    RungeKutta4,  // classical RK4 with automatic substeps for stability
};

struct FlowPair {
    Vector times;
    std::vector<Matrix> Y;
    std::vector<Matrix> Z;
    std::vector<Matrix> jacobians;  // J_k = f^(eps)'(X_k), k < n_steps
    double min_gap = INFINITY;      // over the driving path
    double epsilon = 0.0;

    std::size_t size() const { return Y.size(); }
    Eigen::Index dim() const { return Y.empty() ? 0 : Y.front().rows(); }
    /// True when the path went below the mollification scale somewhere.
    bool mollified_regime() const { return min_gap < epsilon; }

    double max_inverse_defect() const {
        double worst = 0.0;
        for (std::size_t k = 0; k < Y.size(); ++k)
            worst = std::max(worst, (Z[k] * Y[k] - Matrix::Identity(dim(), dim())).cwiseAbs().maxCoeff());
        return worst;
    }

    double min_det_y() const {
        double m = INFINITY;
        for (const auto& y : Y) m = std::min(m, y.determinant());
        return m;
    }
};

namespace detail {

inline Matrix rk4_step(const Matrix& a, double h) {
    // Stability function of RK4 for the linear system y' = a y.
    const Eigen::Index d = a.rows();
    const Matrix ha = h * a;
    const Matrix ha2 = ha * ha;
    return Matrix::Identity(d, d) + ha + ha2 / 2.0 + ha2 * ha / 6.0 + ha2 * ha2 / 24.0;
}

inline Matrix rk4_propagator(const Matrix& a, double h) {
    // Keep h|a| inside the real stability interval of RK4.
    const double scale = a.cwiseAbs().rowwise().sum().maxCoeff() * h;
    const int substeps = std::max(1, static_cast<int>(std::ceil(scale / 1.0)));
    const Matrix step = rk4_step(a, h / substeps);
    Matrix out = step;
    for (int s = 1; s < substeps; ++s) out = step * out;
    return out;
}

}  // namespace detail

inline FlowPair integrate_flows(const Path& path, const DriftSpec& spec, const Mollifier& mollifier,
                                FlowScheme scheme = FlowScheme::Exponential) {
    if (!path.complete()) throw Error(ErrorKind::PathIncomplete, "flow integration needs every stored state");
    if (path.dim() != spec.dim()) throw Error(ErrorKind::ConfigInvalid, "path and drift dimensions differ");
    const Eigen::Index d = path.dim();
    const std::size_t n = path.n_steps();

    FlowPair fp;
    fp.times = path.times;
    fp.epsilon = mollifier.epsilon();
    fp.Y.reserve(n + 1);
    fp.Z.reserve(n + 1);
    fp.jacobians.reserve(n);
    fp.Y.push_back(Matrix::Identity(d, d));
    fp.Z.push_back(Matrix::Identity(d, d));

    Matrix jac(d, d), forward(d, d), backward(d, d);
    const bool symmetric_b = spec.smooth().kind() != SmoothDrift::Kind::Custom;
    for (std::size_t k = 0; k < n; ++k) {
        const auto row = row_span(path.states, static_cast<Eigen::Index>(k));
        fp.min_gap = std::min(fp.min_gap, min_adjacent_gap(row));
        mollified_jacobian_into(row, spec, mollifier, jac);
        const double h = path.times[static_cast<Eigen::Index>(k) + 1] - path.times[static_cast<Eigen::Index>(k)];
        if (scheme == FlowScheme::RungeKutta4) {
            forward = detail::rk4_propagator(jac, h);
            backward = detail::rk4_propagator(-jac, h);
        } else if (symmetric_b) {
            Eigen::SelfAdjointEigenSolver<Matrix> eig(jac);
            const Matrix& v = eig.eigenvectors();
            const Vector lam = eig.eigenvalues();
            forward = v * (h * lam).array().exp().matrix().asDiagonal() * v.transpose();
            backward = v * (-h * lam).array().exp().matrix().asDiagonal() * v.transpose();
        } else {
            forward = (h * jac).exp();
            backward = (-h * jac).exp();
        }
        fp.Y.push_back(forward * fp.Y.back());
        fp.Z.push_back(fp.Z.back() * backward);
        fp.jacobians.push_back(jac);
    }
    const auto last = row_span(path.states, path.states.rows() - 1);
    fp.min_gap = std::min(fp.min_gap, min_adjacent_gap(last));
    return fp;
}

/// y~(s, t) = Y(t) Z(s).
inline Matrix propagator(const FlowPair& fp, std::size_t s_index, std::size_t t_index) {
    if (s_index > t_index) throw Error(ErrorKind::IndexOrder, "propagator needs s <= t");
    if (t_index >= fp.size()) throw Error(ErrorKind::IndexOrder, "time index outside the grid");
    return fp.Y[t_index] * fp.Z[s_index];
}

struct PropagatorBoundReport {
    double max_norm_ratio = 0.0;      // |y~|_F e^{-M(t-s)} / sqrt(d)
    double max_eig_ratio = 0.0;       // max |eigenvalue| e^{-M(t-s)}
    double max_spectral_ratio = 0.0;  // largest singular value e^{-M(t-s)}, the unit-vector bound
    std::size_t pairs = 0;

    bool holds(double tol) const {
        return max_norm_ratio <= 1.0 + tol && max_eig_ratio <= 1.0 + tol && max_spectral_ratio <= 1.0 + tol;
    }
};

/// Grid indices of a lattice of at most `points` nodes, endpoints included.
inline std::vector<std::size_t> lattice(std::size_t grid_size, std::size_t points = 128) {
    std::vector<std::size_t> out;
    const std::size_t m = std::min(grid_size, points);
    if (m == 1) return {0};
    for (std::size_t j = 0; j < m; ++j) out.push_back(j * (grid_size - 1) / (m - 1));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Scan of all pairs s <= t on a lattice of at most 128 grid nodes, against e^{M(t-s)}.
inline PropagatorBoundReport bound_report(const FlowPair& fp, double bound_m) {
    PropagatorBoundReport r;
    const auto idx = lattice(fp.size());
    const double sqrt_d = std::sqrt(static_cast<double>(fp.dim()));
    for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = a; b < idx.size(); ++b) {
            const Matrix p = propagator(fp, idx[a], idx[b]);
            const double g = std::exp(-bound_m * (fp.times[static_cast<Eigen::Index>(idx[b])] -
                                                  fp.times[static_cast<Eigen::Index>(idx[a])]));
            r.max_norm_ratio = std::max(r.max_norm_ratio, p.norm() * g / sqrt_d);
            const double rad = Eigen::EigenSolver<Matrix>(p, false).eigenvalues().cwiseAbs().maxCoeff();
            r.max_eig_ratio = std::max(r.max_eig_ratio, rad * g);
            const double sv = Eigen::JacobiSVD<Matrix>(p).singularValues()(0);
            r.max_spectral_ratio = std::max(r.max_spectral_ratio, sv * g);
            ++r.pairs;
        }
    }
    return r;
}

inline PropagatorBoundReport bound_report(const FlowPair& fp, const DriftSpec& spec) {
    return bound_report(fp, spec.derivative_bound());
}

inline void write_bound_csv_header(std::ostream& os) { os << "config_id,max_norm_ratio,max_eig_ratio\n"; }

inline void write_bound_csv_row(std::ostream& os, const std::string& config_id, const PropagatorBoundReport& r) {
    CsvWriter(os).cell(config_id).cell(r.max_norm_ratio).cell(r.max_eig_ratio).end();
}

}  // namespace ncps
