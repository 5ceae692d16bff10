#include "ncps/sde.hpp"

#include <gtest/gtest.h>

using namespace ncps;

namespace {

SimConfig dyson_cfg(double alpha, std::vector<double> x0, double T, std::size_t n, std::uint64_t seed,
                    std::optional<double> eps = std::nullopt) {
    Vector v = Eigen::Map<Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    return SimConfig::make(DriftSpec::dyson(v.size(), alpha), ParticleState::make(v), T, n, seed, eps);
}

}  // namespace

TEST(SimConfig, Validation) {
    EXPECT_THROW(dyson_cfg(1.0, {0.0, 1.0}, 0.0, 10, 1), Error);
    EXPECT_THROW(dyson_cfg(1.0, {0.0, 1.0}, 1.0, 0, 1), Error);
    EXPECT_THROW(dyson_cfg(1.0, {0.0, 1.0}, 1.0, 10, 1, 1.5), Error);
    const auto cfg = dyson_cfg(1.0, {0.0, 1.0}, 1.0, 100, 1);
    EXPECT_NEAR(cfg.epsilon, 0.1, 1e-15);
    EXPECT_TRUE(cfg.warnings().empty());
    EXPECT_FALSE(dyson_cfg(1.0, {0.0, 0.01}, 1.0, 100, 1, 0.05).warnings().empty());
}

TEST(Simulate, PureBrownianIsCumulativeNoise) {
    const auto cfg = dyson_cfg(0.0, {0.0, 1.0, 2.0}, 1.0, 200, 42);
    const Path p = simulate(cfg, 3);
    ASSERT_TRUE(p.complete());
    EXPECT_EQ(p.states.row(0).transpose(), cfg.x0.values());
    RowMatrix want = p.states;
    for (Eigen::Index k = 1; k < want.rows(); ++k) want.row(k) = want.row(k - 1) + p.increments.row(k - 1);
    EXPECT_EQ((want - p.states).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(p.times[200], 1.0);
}

TEST(Simulate, DeterministicPerPathIndex) {
    const auto cfg = dyson_cfg(1.0, {0.0, 1.0}, 1.0, 500, 7);
    const Path a = simulate(cfg, 5), b = simulate(cfg, 5), c = simulate(cfg, 6);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.increments, b.increments);
    EXPECT_NE(a.states, c.states);
}

TEST(Simulate, StreamingMatchesStoredPath) {
    const auto cfg = dyson_cfg(1.0, {0.0, 0.5, 2.0}, 1.0, 300, 9);
    const Path p = simulate(cfg, 11);
    std::vector<double> x(3);
    std::size_t steps = 0;
    const auto summary = simulate_streaming(cfg, 11, x, [&](std::size_t k, std::span<const double> xk, std::span<const double> dw) {
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(xk[i], p.states(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
            EXPECT_EQ(dw[i], p.increments(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
        }
        ++steps;
    });
    EXPECT_EQ(steps, 300u);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(x[static_cast<std::size_t>(i)], p.states(300, i));
    EXPECT_EQ(summary.violations, p.violations);
    EXPECT_EQ(summary.min_gap, min_gap_stats(p).min_gap);
}

TEST(Simulate, IncrementStatistics) {
    const double dt = 1e-2;
    const RowMatrix dw = draw_increments(1, 0, 100000, 2, dt);
    const double mean = dw.mean();
    const double var = (dw.array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 4.0 * std::sqrt(dt / 2e5));
    EXPECT_NEAR(var / dt, 1.0, 0.02);
    const double cov = (dw.col(0).array() * dw.col(1).array()).mean() / dt;
    EXPECT_NEAR(cov, 0.0, 0.02);
}

TEST(Simulate, BridgeRefinementPreservesCoarseIncrements) {
    const RowMatrix coarse = draw_increments(3, 0, 50, 2, 0.02);
    const RowMatrix fine = refine_increments(coarse, 0.02, 3, 0, 1);
    ASSERT_EQ(fine.rows(), 100);
    for (Eigen::Index k = 0; k < 50; ++k)
        for (Eigen::Index i = 0; i < 2; ++i) EXPECT_NEAR(fine(2 * k, i) + fine(2 * k + 1, i), coarse(k, i), 1e-15);
    const RowMatrix many = refine_increments(draw_increments(4, 0, 100000, 1, 0.02), 0.02, 4, 0, 1);
    EXPECT_NEAR(many.array().square().mean() / 0.01, 1.0, 0.02);
}

TEST(SimulatePair, IdenticalConfigsGiveBitwiseEqualPaths) {
    const auto cfg = dyson_cfg(1.0, {0.0, 1.0}, 1.0, 400, 2);
    const auto [a, b] = simulate_pair(cfg, cfg, 3);
    EXPECT_EQ(a.states, b.states);
}

TEST(SimulatePair, EpsilonHalvedAgreesOnSeparatedPaths) {
    const auto a = dyson_cfg(1.0, {0.0, 2.0, 4.0}, 0.5, 500, 5, 0.02);
    const auto b = dyson_cfg(1.0, {0.0, 2.0, 4.0}, 0.5, 500, 5, 0.01);
    int compared = 0;
    for (std::uint64_t p = 0; p < 20; ++p) {
        const auto [pa, pb] = simulate_pair(a, b, p);
        if (min_gap_stats(pa).min_gap <= 0.02) continue;
        ++compared;
        EXPECT_LE((pa.states - pb.states).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_GT(compared, 15);
}

TEST(SimulatePair, RejectsMismatchedConfigs) {
    const auto a = dyson_cfg(1.0, {0.0, 1.0}, 1.0, 100, 5, 0.05);
    EXPECT_THROW(simulate_pair(a, dyson_cfg(1.0, {0.0, 1.0}, 1.0, 100, 6, 0.05)), Error);
    EXPECT_THROW(simulate_pair(a, dyson_cfg(1.0, {0.0, 1.0}, 1.0, 300, 5, 0.05)), Error);
    EXPECT_THROW(simulate_pair(a, dyson_cfg(2.0, {0.0, 1.0}, 1.0, 100, 5, 0.05)), Error);
    const auto [c, f] = simulate_pair(a, dyson_cfg(1.0, {0.0, 1.0}, 1.0, 400, 5, 0.05));
    EXPECT_EQ(c.n_steps(), 100u);
    EXPECT_EQ(f.n_steps(), 400u);
    // The fine path's noise sums back to the coarse increments.
    for (Eigen::Index k = 0; k < 100; ++k)
        EXPECT_NEAR(f.increments.middleRows(4 * k, 4).colwise().sum()(0), c.increments(k, 0), 1e-14);
}

TEST(SimulatePair, StrongErrorShrinksUnderRefinement) {
    // Reference: 2^5 refinement of the coarsest grid.
    const std::size_t base = 64;
    const auto cfg = [&](std::size_t n) { return dyson_cfg(1.0, {0.0, 1.0}, 0.5, n, 17, 0.2); };
    const std::size_t n_paths = 200;
    double err[3] = {0, 0, 0};
    for (std::uint64_t p = 0; p < n_paths; ++p) {
        const auto ref = simulate_pair(cfg(base), cfg(base * 32), p).second;
        for (int lvl = 0; lvl < 3; ++lvl) {
            const auto path = simulate_pair(cfg(base), cfg(base << lvl), p).second;
            err[lvl] += (path.states.row(path.states.rows() - 1) - ref.states.row(ref.states.rows() - 1)).squaredNorm();
        }
    }
    EXPECT_LE(std::sqrt(err[1] / err[0]), 0.75);
    EXPECT_LE(std::sqrt(err[2] / err[1]), 0.75);
}

TEST(MinGapStats, ReportsCrossing) {
    // alpha = 0 and close start: Brownian particles cross quickly.
    const auto cfg = dyson_cfg(0.0, {0.0, 0.01}, 1.0, 1000, 1);
    int crossed = 0;
    for (std::uint64_t p = 0; p < 10; ++p) {
        const Path path = simulate(cfg, p);
        const auto stats = min_gap_stats(path);
        if (stats.first_violation) {
            ++crossed;
            EXPECT_LE(stats.min_gap, 0.0);
            EXPECT_EQ(*stats.first_violation, *path.first_violation);
        }
    }
    EXPECT_GE(crossed, 8);
}

TEST(MinGapStats, FarApartStaysApart) {
    const auto cfg = dyson_cfg(1.0, {0.0, 10.0}, 0.01, 100, 1);
    for (std::uint64_t p = 0; p < 200; ++p) EXPECT_GE(min_gap_stats(simulate(cfg, p)).min_gap, 9.0);
}
