#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>

namespace ncps {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline std::span<double> as_span(Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index row) {
    return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<double> row_span(RowMatrix& m, Eigen::Index row) {
    return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Frobenius norm, the matrix norm used throughout (sub-multiplicative).
inline double frobenius(const Matrix& a) { return a.norm(); }

/// Smallest adjacent gap of a vector; meaningful for sorted states.
inline double min_adjacent_gap(std::span<const double> x) {
    double gap = INFINITY;
    for (std::size_t i = 1; i < x.size(); ++i) gap = std::min(gap, x[i] - x[i - 1]);
    return gap;
}

}  // namespace ncps
