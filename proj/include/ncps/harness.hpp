#pragma once

// Monte Carlo orchestration: terminal ensembles, moment identities, and the
// matrix-valued Brownian motion eigenvalue oracle.

#include "ncps/error.hpp"
#include "ncps/io.hpp"
#include "ncps/linalg.hpp"
#include "ncps/parallel.hpp"
#include "ncps/random.hpp"
#include "ncps/sde.hpp"
#include "ncps/statistics.hpp"

#include <Eigen/Eigenvalues>

#include <complex>
#include <ostream>
#include <string>
#include <vector>

namespace ncps {

struct EnsembleStats {
    std::size_t n_paths = 0;
    Vector mean;
    Vector variance;
    Estimate mean_sq_norm;  // E|X(T)|^2
    Estimate sum_mean;      // E sum_i X_i(T)
    Estimate sum_variance;  // Var sum_i X_i(T)
    double violation_fraction = 0.0;  // paths with at least one ordering violation
    RowMatrix terminal;               // n_paths x d

    std::vector<double> column(Eigen::Index i) const {
        std::vector<double> out(static_cast<std::size_t>(terminal.rows()));
        for (Eigen::Index k = 0; k < terminal.rows(); ++k) out[static_cast<std::size_t>(k)] = terminal(k, i);
        return out;
    }
};

inline EnsembleStats summarize(RowMatrix terminal, std::size_t violating_paths) {
    EnsembleStats s;
    s.n_paths = static_cast<std::size_t>(terminal.rows());
    const Eigen::Index d = terminal.cols();
    s.mean = Vector::Zero(d);
    s.variance = Vector::Zero(d);
    std::vector<double> col(s.n_paths), sq(s.n_paths), sum(s.n_paths);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < s.n_paths; ++k) col[k] = terminal(static_cast<Eigen::Index>(k), i);
        s.mean[i] = mean_estimate(col).value;
        s.variance[i] = variance_estimate(col).value;
    }
    for (std::size_t k = 0; k < s.n_paths; ++k) {
        const auto row = terminal.row(static_cast<Eigen::Index>(k));
        sq[k] = row.squaredNorm();
        sum[k] = row.sum();
    }
    s.mean_sq_norm = mean_estimate(sq);
    s.sum_mean = mean_estimate(sum);
    s.sum_variance = variance_estimate(sum);
    s.violation_fraction = static_cast<double>(violating_paths) / static_cast<double>(s.n_paths);
    s.terminal = std::move(terminal);
    return s;
}

/// Terminal states of paths 0..n_paths-1, streamed without path storage.
inline EnsembleStats run_ensemble(const SimConfig& cfg, std::size_t n_paths) {
    cfg.validate();
    if (n_paths < 2) throw Error(ErrorKind::ConfigInvalid, "an ensemble needs at least 2 paths");
    const Eigen::Index d = cfg.dim();
    RowMatrix terminal(static_cast<Eigen::Index>(n_paths), d);
    std::vector<std::uint8_t> violated(n_paths, 0);
    parallel_for(n_paths, [&](std::size_t p) {
        const auto summary = simulate_streaming(cfg, p, row_span(terminal, static_cast<Eigen::Index>(p)));
        violated[p] = summary.violations > 0;
    });
    std::size_t bad = 0;
    for (auto v : violated) bad += v;
    return summarize(std::move(terminal), bad);
}

/// States at the given grid indices for every path; with `levels` > 0 each path is
/// re-run on the 2^levels-refined grid driven by the Brownian-bridge refinement of
/// its own coarse noise, and indices refer to the coarse grid.
inline std::vector<RowMatrix> snapshot_ensemble(const SimConfig& coarse, std::size_t n_paths,
                                                const std::vector<std::size_t>& indices, std::size_t levels = 0) {
    coarse.validate();
    for (auto k : indices)
        if (k > coarse.n_steps) throw Error(ErrorKind::IndexOrder, "snapshot index beyond the grid");
    SimConfig fine = coarse;
    fine.n_steps = coarse.n_steps << levels;
    const Eigen::Index d = coarse.dim();
    std::vector<RowMatrix> out(indices.size(), RowMatrix(static_cast<Eigen::Index>(n_paths), d));
    parallel_for(n_paths, [&](std::size_t p) {
        const Path path = levels == 0 ? simulate(coarse, p)
                                      : simulate_with_increments(fine, refined_increments(coarse, p, levels));
        for (std::size_t j = 0; j < indices.size(); ++j)
            out[j].row(static_cast<Eigen::Index>(p)) = path.states.row(static_cast<Eigen::Index>(indices[j] << levels));
    });
    return out;
}

/// E|X(t)|^2 = |x0|^2 + (2 sum_{k>l} alpha_kl + |sigma|_F^2) t when b = 0.
inline double expected_mean_sq_norm(const SimConfig& cfg, double t) {
    return cfg.x0.values().squaredNorm() +
           (2.0 * cfg.spec.alpha().pair_sum() + cfg.spec.sigma().squaredNorm()) * t;
}

/// Var sum_i X_i(t) = |sigma^T 1|^2 t when b = 0 (the singular drift sums to zero).
inline double expected_sum_variance(const SimConfig& cfg, double t) {
    return (cfg.spec.sigma().transpose() * Vector::Ones(cfg.dim())).squaredNorm() * t;
}

enum class MatrixEnsemble {
    Hermitian,      // complex Hermitian Brownian motion; eigenvalues follow alpha = 1
    RealSymmetric,  // real symmetric Brownian motion; eigenvalues follow alpha = 1/2
};

/// Sorted eigenvalues of H(t) = diag(x0) + B(t), B a Brownian motion on the matrix space
/// with diagonal entries N(0, t) and off-diagonal entries of total variance t/2 (split
/// evenly between real and imaginary parts in the Hermitian case).
inline RowMatrix simulate_matrix_dyson(Eigen::Index d, const Vector& x0, double t, std::size_t n_paths,
                                       std::uint64_t seed, MatrixEnsemble kind = MatrixEnsemble::Hermitian) {
    if (d < 2 || x0.size() != d) throw Error(ErrorKind::ConfigInvalid, "matrix oracle needs d >= 2 and |x0| = d");
    if (t < 0.0) throw Error(ErrorKind::ConfigInvalid, "matrix oracle needs t >= 0");
    constexpr std::uint64_t kOracleTag = 0x6d617472;
    RowMatrix out(static_cast<Eigen::Index>(n_paths), d);
    const double sd = std::sqrt(t);
    parallel_for(n_paths, [&](std::size_t p) {
        NoiseStream noise(seed, p, kOracleTag);
        Vector ev;
        if (kind == MatrixEnsemble::Hermitian) {
            Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(d, d);
            for (Eigen::Index i = 0; i < d; ++i) {
                h(i, i) = x0[i] + sd * noise.normal();
                for (Eigen::Index j = i + 1; j < d; ++j) {
                    const double re = sd * std::sqrt(0.5) * noise.normal();
                    const double im = sd * std::sqrt(0.5) * noise.normal();
                    h(i, j) = {re, im};
                    h(j, i) = {re, -im};
                }
            }
            ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(h, Eigen::EigenvaluesOnly).eigenvalues();
        } else {
            Matrix h = Matrix::Zero(d, d);
            for (Eigen::Index i = 0; i < d; ++i) {
                h(i, i) = x0[i] + sd * noise.normal();
                for (Eigen::Index j = i + 1; j < d; ++j) h(i, j) = h(j, i) = sd * std::sqrt(0.5) * noise.normal();
            }
            ev = Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues();
        }
        out.row(static_cast<Eigen::Index>(p)) = ev.transpose();
    });
    return out;
}

/// E tr H(t)^2 = |x0|^2 + (d(d-1) + d) t for the Hermitian oracle.
inline double expected_trace_square(const Vector& x0, double t) {
    const double d = static_cast<double>(x0.size());
    return x0.squaredNorm() + (d * (d - 1.0) + d) * t;
}

/// Header `sample_id,x1,...,xd`.
inline void write_ensemble_csv(std::ostream& os, const RowMatrix& samples) {
    CsvWriter w(os);
    w.header(coordinate_columns("sample_id", samples.cols()));
    for (Eigen::Index k = 0; k < samples.rows(); ++k) {
        w.cell(static_cast<std::size_t>(k));
        for (Eigen::Index i = 0; i < samples.cols(); ++i) w.cell(samples(k, i));
        w.end();
    }
}

}  // namespace ncps
