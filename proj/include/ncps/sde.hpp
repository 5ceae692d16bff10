#pragma once

// Euler-Maruyama simulation of the mollified system
//   X_{k+1} = X_k + f^(eps)(X_k) dt + sigma dW_k
// with replayable per-path noise and Brownian-bridge refinement for coupled grids.

#include "ncps/error.hpp"
#include "ncps/linalg.hpp"
#include "ncps/model.hpp"
#include "ncps/mollifier.hpp"
#include "ncps/random.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ncps {

struct SimConfig {
    double horizon;
    std::size_t n_steps;
    double epsilon;
    std::uint64_t seed;
    ParticleState x0;
    DriftSpec spec;

    /// Omitted epsilon resolves to default_epsilon(x0, dt).
    static SimConfig make(DriftSpec spec, ParticleState x0, double horizon, std::size_t n_steps, std::uint64_t seed,
                          std::optional<double> epsilon = std::nullopt) {
        if (!(horizon > 0.0)) throw Error(ErrorKind::ConfigInvalid, "horizon T must be positive");
        if (n_steps < 1) throw Error(ErrorKind::ConfigInvalid, "n_steps must be at least 1");
        const double dt = horizon / static_cast<double>(n_steps);
        const double eps = epsilon ? *epsilon : default_epsilon(x0.span(), dt);
        SimConfig cfg{horizon, n_steps, eps, seed, std::move(x0), std::move(spec)};
        cfg.validate();
        return cfg;
    }

    double dt() const { return horizon / static_cast<double>(n_steps); }
    Eigen::Index dim() const { return x0.dim(); }
    Mollifier mollifier() const { return Mollifier(epsilon); }

    void validate() const {
        if (!(horizon > 0.0)) throw Error(ErrorKind::ConfigInvalid, "horizon T must be positive");
        if (n_steps < 1) throw Error(ErrorKind::ConfigInvalid, "n_steps must be at least 1");
        if (x0.dim() != spec.dim()) throw Error(ErrorKind::ConfigInvalid, "x0 and drift dimensions differ");
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorKind::ConfigInvalid, "epsilon must lie in (0, 1)");
    }

    /// Non-fatal observations about the configuration.
    std::vector<std::string> warnings() const {
        std::vector<std::string> out;
        if (min_adjacent_gap(x0.span()) <= epsilon)
            out.push_back("initial state has a gap <= epsilon; the mollifier is active at t = 0");
        return out;
    }
};

struct Path {
    Vector times;          // n_steps + 1
    RowMatrix states;      // (n_steps + 1) x d
    RowMatrix increments;  // n_steps x d, Brownian increments dW_k
    std::size_t violations = 0;
    std::optional<std::size_t> first_violation;

    std::size_t n_steps() const { return static_cast<std::size_t>(increments.rows()); }
    Eigen::Index dim() const { return states.cols(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
    bool complete() const {
        return states.rows() == times.size() && increments.rows() + 1 == states.rows() && states.rows() > 0;
    }
    Vector state(Eigen::Index k) const { return states.row(k).transpose(); }
};

inline bool strictly_ordered(std::span<const double> x) {
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1])) return false;
    return true;
}

/// One Euler step in place, allocation-free after construction.
class EulerStepper {
public:
    EulerStepper(const DriftSpec& spec, const Mollifier& mollifier)
        : spec_(&spec), mollifier_(mollifier), drift_(static_cast<std::size_t>(spec.dim())) {}

    void step(std::span<double> x, std::span<const double> dw, double dt) {
        mollified_drift_into(x, *spec_, mollifier_, drift_);
        const std::size_t d = x.size();
        if (spec_->sigma_is_identity()) {
            for (std::size_t i = 0; i < d; ++i) x[i] += drift_[i] * dt + dw[i];
            return;
        }
        const Matrix& sigma = spec_->sigma();
        for (std::size_t i = 0; i < d; ++i) {
            double noise = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                noise += sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * dw[j];
            x[i] += drift_[i] * dt + noise;
        }
    }

private:
    const DriftSpec* spec_;
    Mollifier mollifier_;
    std::vector<double> drift_;
};

/// dW rows ~ N(0, dt I), drawn step-major from stream (seed, path_index, 0).
inline RowMatrix draw_increments(std::uint64_t seed, std::uint64_t path_index, std::size_t n_steps, Eigen::Index d,
                                 double dt) {
    NoiseStream noise(seed, path_index);
    const double scale = std::sqrt(dt);
    RowMatrix dw(static_cast<Eigen::Index>(n_steps), d);
    for (Eigen::Index k = 0; k < dw.rows(); ++k)
        for (Eigen::Index i = 0; i < d; ++i) dw(k, i) = scale * noise.normal();
    return dw;
}

/// Halve the step by Brownian-bridge refinement: given the increment over [t, t+h],
/// W(t + h/2) is N(midpoint, h/4). `level` selects an independent stream per refinement.
inline RowMatrix refine_increments(const RowMatrix& coarse, double dt_coarse, std::uint64_t seed,
                                   std::uint64_t path_index, std::uint64_t level) {
    NoiseStream noise(seed, path_index, level);
    const double half_sd = 0.5 * std::sqrt(dt_coarse);
    RowMatrix fine(2 * coarse.rows(), coarse.cols());
    for (Eigen::Index k = 0; k < coarse.rows(); ++k) {
        for (Eigen::Index i = 0; i < coarse.cols(); ++i) {
            const double z = half_sd * noise.normal();
            fine(2 * k, i) = 0.5 * coarse(k, i) + z;
            fine(2 * k + 1, i) = 0.5 * coarse(k, i) - z;
        }
    }
    return fine;
}

/// Increments for `levels` successive halvings of the configured grid.
inline RowMatrix refined_increments(const SimConfig& coarse, std::uint64_t path_index, std::size_t levels) {
    RowMatrix dw = draw_increments(coarse.seed, path_index, coarse.n_steps, coarse.dim(), coarse.dt());
    double dt = coarse.dt();
    for (std::size_t level = 1; level <= levels; ++level) {
        dw = refine_increments(dw, dt, coarse.seed, path_index, level);
        dt *= 0.5;
    }
    return dw;
}

inline Path simulate_with_increments(const SimConfig& cfg, RowMatrix increments) {
    cfg.validate();
    if (increments.rows() != static_cast<Eigen::Index>(cfg.n_steps) || increments.cols() != cfg.dim())
        throw Error(ErrorKind::ConfigInvalid, "increment array does not match the grid");
    const Eigen::Index d = cfg.dim();
    const Eigen::Index n = increments.rows();
    const double dt = cfg.dt();

    Path path;
    path.times.resize(n + 1);
    for (Eigen::Index k = 0; k <= n; ++k) path.times[k] = cfg.horizon * static_cast<double>(k) / static_cast<double>(n);
    path.states.resize(n + 1, d);
    path.states.row(0) = cfg.x0.values().transpose();
    path.increments = std::move(increments);

    EulerStepper stepper(cfg.spec, cfg.mollifier());
    std::vector<double> x(cfg.x0.values().data(), cfg.x0.values().data() + d);
    for (Eigen::Index k = 0; k < n; ++k) {
        stepper.step(x, row_span(path.increments, k), dt);
        std::copy(x.begin(), x.end(), path.states.data() + (k + 1) * d);
        if (!strictly_ordered(x)) {
            ++path.violations;
            if (!path.first_violation) path.first_violation = static_cast<std::size_t>(k + 1);
        }
    }
    return path;
}

inline Path simulate(const SimConfig& cfg, std::uint64_t path_index = 0) {
    cfg.validate();
    return simulate_with_increments(cfg, draw_increments(cfg.seed, path_index, cfg.n_steps, cfg.dim(), cfg.dt()));
}

/// Common-random-number pair. The configs may differ only in epsilon and in n_steps by a
/// power of two; the finer path is driven by the bridge refinement of the coarser noise.
inline std::pair<Path, Path> simulate_pair(const SimConfig& a, const SimConfig& b, std::uint64_t path_index = 0) {
    a.validate();
    b.validate();
    if (a.seed != b.seed) throw Error(ErrorKind::ConfigInvalid, "paired configs must share the seed");
    if (a.horizon != b.horizon) throw Error(ErrorKind::ConfigInvalid, "paired configs must share the horizon");
    if (a.x0.values() != b.x0.values()) throw Error(ErrorKind::ConfigInvalid, "paired configs must share x0");
    if (a.spec.alpha().matrix() != b.spec.alpha().matrix() || a.spec.sigma() != b.spec.sigma() ||
        a.spec.smooth().kind() != b.spec.smooth().kind() || a.spec.smooth().bound() != b.spec.smooth().bound())
        throw Error(ErrorKind::ConfigInvalid, "paired configs must share the drift specification");

    const bool a_coarse = a.n_steps <= b.n_steps;
    const SimConfig& coarse = a_coarse ? a : b;
    const SimConfig& fine = a_coarse ? b : a;
    std::size_t levels = 0;
    std::size_t n = coarse.n_steps;
    while (n < fine.n_steps) {
        n *= 2;
        ++levels;
    }
    if (n != fine.n_steps)
        throw Error(ErrorKind::ConfigInvalid, "paired step counts must differ by a power of two");

    const RowMatrix dw_coarse = draw_increments(coarse.seed, path_index, coarse.n_steps, coarse.dim(), coarse.dt());
    RowMatrix dw_fine = dw_coarse;
    double dt = coarse.dt();
    for (std::size_t level = 1; level <= levels; ++level) {
        dw_fine = refine_increments(dw_fine, dt, coarse.seed, path_index, level);
        dt *= 0.5;
    }
    Path pc = simulate_with_increments(coarse, dw_coarse);
    Path pf = simulate_with_increments(fine, std::move(dw_fine));
    if (a_coarse) return {std::move(pc), std::move(pf)};
    return {std::move(pf), std::move(pc)};
}

/// Outcome of a storage-free run.
struct StreamSummary {
    std::size_t violations = 0;
    double min_gap = INFINITY;
};

/// Batch mode: integrate path `path_index` keeping only the current state in `x`.
/// `on_step(k, x_k, dW_k)` sees each state before it is advanced. Noise is drawn in the
/// same order as draw_increments, so the terminal state matches simulate() bitwise.
template <class OnStep>
StreamSummary simulate_streaming(const SimConfig& cfg, std::uint64_t path_index, std::span<double> x,
                                 OnStep&& on_step) {
    const auto d = static_cast<std::size_t>(cfg.dim());
    std::copy(cfg.x0.values().data(), cfg.x0.values().data() + d, x.begin());
    NoiseStream noise(cfg.seed, path_index);
    EulerStepper stepper(cfg.spec, cfg.mollifier());
    const double dt = cfg.dt();
    const double scale = std::sqrt(dt);
    std::vector<double> dw(d);
    StreamSummary summary;
    summary.min_gap = min_adjacent_gap(x);
    for (std::size_t k = 0; k < cfg.n_steps; ++k) {
        for (std::size_t i = 0; i < d; ++i) dw[i] = scale * noise.normal();
        on_step(k, std::span<const double>(x.data(), d), std::span<const double>(dw));
        stepper.step(x, dw, dt);
        const double gap = min_adjacent_gap(x);
        summary.min_gap = std::min(summary.min_gap, gap);
        if (!(gap > 0.0)) ++summary.violations;
    }
    return summary;
}

inline StreamSummary simulate_streaming(const SimConfig& cfg, std::uint64_t path_index, std::span<double> x) {
    return simulate_streaming(cfg, path_index, x, [](std::size_t, std::span<const double>, std::span<const double>) {});
}

struct GapStats {
    double min_gap = INFINITY;
    std::size_t argmin = 0;
    std::optional<std::size_t> first_violation;
};

/// Exact scan of stored states: minimum over time of the smallest adjacent gap.
inline GapStats min_gap_stats(const Path& path) {
    GapStats stats;
    for (Eigen::Index k = 0; k < path.states.rows(); ++k) {
        const double gap = min_adjacent_gap(row_span(path.states, k));
        if (gap < stats.min_gap) {
            stats.min_gap = gap;
            stats.argmin = static_cast<std::size_t>(k);
        }
        if (!(gap > 0.0) && !stats.first_violation) stats.first_violation = static_cast<std::size_t>(k);
    }
    return stats;
}

}  // namespace ncps
