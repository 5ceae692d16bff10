#include "ncps/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ncps;

namespace {

DriftSpec plain(Eigen::Index d, double a) { return DriftSpec::dyson(d, a); }

Matrix fd_jacobian(const DriftSpec& spec, const Vector& x, double h = 1e-6) {
    const Eigen::Index d = x.size();
    Matrix j(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        Vector xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        j.col(c) = (drift_full(ParticleState::make(xp), spec) - drift_full(ParticleState::make(xm), spec)) / (2 * h);
    }
    return j;
}

}  // namespace

TEST(ParticleState, RejectsUnorderedAndSmall) {
    EXPECT_NO_THROW(ParticleState::make({0.0, 1.0}));
    try {
        ParticleState::make({1.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotOrdered);
    }
    try {
        ParticleState::make({0.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotOrdered);
    }
    try {
        ParticleState::make({1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
    }
}

TEST(AlphaMatrix, Validation) {
    Matrix bad(2, 2);
    bad << 0, 1, 2, 0;
    EXPECT_THROW(AlphaMatrix::from_matrix(bad), Error);
    bad << 0, -1, -1, 0;
    EXPECT_THROW(AlphaMatrix::from_matrix(bad), Error);
    bad << 1, 1, 1, 0;
    EXPECT_THROW(AlphaMatrix::from_matrix(bad), Error);
    const auto a = AlphaMatrix::constant(4, 0.5);
    EXPECT_DOUBLE_EQ(a.pair_sum(), 3.0);
    EXPECT_EQ(a(2, 2), 0.0);
}

TEST(DriftSingular, ReferenceValues) {
    const auto a = AlphaMatrix::constant(2, 1.0);
    Vector v = drift_singular(ParticleState::make({0.0, 1.0}), a);
    EXPECT_DOUBLE_EQ(v[0], -1.0);
    EXPECT_DOUBLE_EQ(v[1], 1.0);
    v = drift_singular(ParticleState::make({-0.5, 0.5}), a);
    EXPECT_DOUBLE_EQ(v[0], -1.0);
    EXPECT_DOUBLE_EQ(v[1], 1.0);
    v = drift_singular(ParticleState::make({0.0, 1.0, 3.0}), AlphaMatrix::constant(3, 1.0));
    EXPECT_NEAR(v[0], -4.0 / 3.0, 1e-15);
    EXPECT_NEAR(v[1], 0.5, 1e-15);
    EXPECT_NEAR(v[2], 5.0 / 6.0, 1e-15);
    EXPECT_NEAR(v.sum(), 0.0, 1e-15);
}

TEST(DriftFull, SmoothParts) {
    const auto x = ParticleState::make({0.0, 1.0});
    const auto a = AlphaMatrix::constant(2, 1.0);
    Vector v = drift_full(x, DriftSpec::dyson(2, 1.0, SmoothDrift::hyperbolic_correction(a)));
    const double coth1 = std::cosh(1.0) / std::sinh(1.0);
    EXPECT_NEAR(v[0], -coth1, 1e-14);
    EXPECT_NEAR(v[1], coth1, 1e-14);
    EXPECT_NEAR(coth1, 1.3130, 1e-4);
    v = drift_full(x, plain(2, 1.0));
    EXPECT_DOUBLE_EQ(v[0], -1.0);
    EXPECT_DOUBLE_EQ(v[1], 1.0);
    Vector mu(2);
    mu << 0.0, 1.0;
    v = drift_full(x, DriftSpec::dyson(2, 1.0, SmoothDrift::linear_mu(mu)));
    EXPECT_DOUBLE_EQ(v[0], -1.0);
    EXPECT_DOUBLE_EQ(v[1], 2.0);
}

TEST(DriftFull, HyperbolicEqualsCothSum) {
    std::mt19937_64 rng(3);
    Matrix am(3, 3);
    am << 0, 0.7, 1.3, 0.7, 0, 2.0, 1.3, 2.0, 0;
    const auto alpha = AlphaMatrix::from_matrix(am);
    const auto spec = DriftSpec::make(alpha, SmoothDrift::hyperbolic_correction(alpha), Matrix::Identity(3, 3));
    for (int rep = 0; rep < 200; ++rep) {
        const Vector x = oracle::ordered_state(rng, 3, 1e-3, 3.0);
        const Vector v = drift_full(ParticleState::make(x), spec);
        for (Eigen::Index i = 0; i < 3; ++i) {
            double want = 0.0;
            for (Eigen::Index k = 0; k < 3; ++k)
                if (k != i) want += am(i, k) / std::tanh(x[i] - x[k]);
            EXPECT_NEAR(v[i], want, 1e-9 * (1.0 + std::abs(want)));
        }
    }
}

TEST(DriftJacobian, ReferenceValues) {
    const Matrix j = drift_jacobian(ParticleState::make({0.0, 1.0}), plain(2, 1.0));
    Matrix want(2, 2);
    want << -1, 1, 1, -1;
    EXPECT_TRUE(j.isApprox(want, 1e-15));
    const auto ev = oracle::jacobi_eigenvalues(j);
    EXPECT_NEAR(ev[0], -2.0, 1e-12);
    EXPECT_NEAR(ev[1], 0.0, 1e-12);
    EXPECT_TRUE(drift_jacobian(ParticleState::make({-2.0, 5.0}), plain(2, 0.0)).isZero(0.0));
}

TEST(DriftJacobian, MatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    Vector mu(4);
    mu << -0.5, 0.1, 0.3, 1.2;
    Matrix am = Matrix::Constant(4, 4, 0.8);
    am.diagonal().setZero();
    am(0, 3) = am(3, 0) = 2.5;
    const auto alpha = AlphaMatrix::from_matrix(am);
    const DriftSpec specs[] = {DriftSpec::dyson(4, 1.0), DriftSpec::dyson(4, 0.6, SmoothDrift::linear_mu(mu)),
                               DriftSpec::make(alpha, SmoothDrift::hyperbolic_correction(alpha), Matrix::Identity(4, 4))};
    for (const auto& spec : specs) {
        for (int rep = 0; rep < 100; ++rep) {
            const Vector x = oracle::ordered_state(rng, 4, 0.5, 1.5);
            const Matrix j = drift_jacobian(ParticleState::make(x), spec);
            const Matrix fd = fd_jacobian(spec, x);
            EXPECT_LT((j - fd).cwiseAbs().maxCoeff(), 1e-6);
            EXPECT_LT((j - j.transpose()).cwiseAbs().maxCoeff(), 1e-14);
        }
    }
}

TEST(QuadraticForm, ReferenceValues) {
    const auto a2 = AlphaMatrix::constant(2, 1.0);
    const auto a3 = AlphaMatrix::constant(3, 1.0);
    Vector y(2);
    y << 0, 1;
    EXPECT_DOUBLE_EQ(quadratic_form_a(ParticleState::make({0.0, 1.0}), y, a2), -1.0);
    Vector y3(3);
    y3 << 1, 0, 0;
    EXPECT_NEAR(quadratic_form_a(ParticleState::make({0.0, 1.0, 3.0}), y3, a3), -10.0 / 9.0, 1e-15);
    EXPECT_DOUBLE_EQ(quadratic_form_a(ParticleState::make({0.0, 1.0, 3.0}), Vector::Constant(3, 4.2), a3), 0.0);
}

TEST(QuadraticForm, NonPositiveAndMatchesJacobian) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    for (Eigen::Index d : {2, 3, 5}) {
        Matrix am(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index k = 0; k <= i; ++k) am(i, k) = am(k, i) = (i == k) ? 0.0 : 2.0 * std::abs(n01(rng));
        const auto alpha = AlphaMatrix::from_matrix(am);
        for (int rep = 0; rep < 1000; ++rep) {
            const Vector x = oracle::ordered_state(rng, d, 1e-3, 2.0);
            Vector y(d);
            for (auto& v : y) v = n01(rng);
            const auto state = ParticleState::make(x);
            const double q = quadratic_form_a(state, y, alpha);
            EXPECT_LE(q, 0.0);
            const double via_jac = y.dot(singular_jacobian(state, alpha) * y);
            EXPECT_NEAR(q, via_jac, 1e-10 * (1.0 + std::abs(q)));
        }
    }
}

TEST(WeightedDriftSum, IdentityHolds) {
    EXPECT_NEAR(weighted_drift_sum(ParticleState::make({0.0, 1.0}), AlphaMatrix::constant(2, 1.0)), 1.0, 1e-15);
    EXPECT_NEAR(weighted_drift_sum(ParticleState::make({0.0, 1.0, 3.0}), AlphaMatrix::constant(3, 1.0)), 3.0, 1e-14);
    EXPECT_EQ(weighted_drift_sum(ParticleState::make({0.0, 1.0, 3.0}), AlphaMatrix::constant(3, 0.0)), 0.0);
    std::mt19937_64 rng(7);
    for (Eigen::Index d : {2, 3, 5}) {
        const auto alpha = AlphaMatrix::constant(d, 1.7);
        for (int rep = 0; rep < 1000; ++rep) {
            const Vector x = oracle::ordered_state(rng, d, 1e-2, 1.0);
            EXPECT_NEAR(weighted_drift_sum(ParticleState::make(x), alpha), alpha.pair_sum(), 1e-9);
        }
    }
}

TEST(SecondDerivative, ReferenceAndFiniteDifferences) {
    const auto a2 = AlphaMatrix::constant(2, 1.0);
    Vector y(2);
    y << 0, 1;
    Vector v = second_derivative_contraction(ParticleState::make({0.0, 1.0}), y, y, a2);
    EXPECT_DOUBLE_EQ(v[0], -2.0);
    EXPECT_DOUBLE_EQ(v[1], 2.0);
    EXPECT_TRUE(second_derivative_contraction(ParticleState::make({0.0, 1.0}), Vector::Constant(2, 3.0),
                                              Vector::Constant(2, 3.0), a2)
                    .isZero(0.0));

    std::mt19937_64 rng(13);
    std::normal_distribution<double> n01;
    const auto a4 = AlphaMatrix::constant(4, 1.3);
    const auto spec = DriftSpec::dyson(4, 1.3);
    const double h = 1e-5;
    for (int rep = 0; rep < 100; ++rep) {
        const Vector x = oracle::ordered_state(rng, 4, 0.5, 1.5);
        Vector yy(4), zz(4);
        for (auto& e : yy) e = n01(rng);
        for (auto& e : zz) e = n01(rng);
        const Matrix jp = drift_jacobian(ParticleState::make(x + h * zz), spec);
        const Matrix jm = drift_jacobian(ParticleState::make(x - h * zz), spec);
        const Vector fd = (jp - jm) * yy / (2 * h);
        const Vector got = second_derivative_contraction(ParticleState::make(x), yy, zz, a4);
        EXPECT_LT((fd - got).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(SmoothDrift, CustomBoundIsSpotChecked) {
    auto value = [](std::span<const double> x, std::span<double> out) {
        out[0] = 2.0 * x[0];
        out[1] = 0.0;
    };
    auto jac = [](std::span<const double>, Matrix& out) { out(0, 0) = 2.0; };
    EXPECT_NO_THROW(SmoothDrift::custom(2, value, jac, 2.0));
    try {
        SmoothDrift::custom(2, value, jac, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
    }
}

TEST(DriftSpec, SigmaInverseAndGrowth) {
    Matrix s(2, 2);
    s << 1, 0, 0.6, 0.8;
    const auto spec = DriftSpec::make(AlphaMatrix::constant(2, 1.0), SmoothDrift::zero(), s);
    ASSERT_TRUE(spec.sigma_inv().has_value());
    EXPECT_LT((s * *spec.sigma_inv() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_FALSE(spec.sigma_is_identity());
    EXPECT_TRUE(spec.growth_holds(2000, 3));

    Matrix sing(2, 2);
    sing << 1, 1, 1, 1;
    const auto degenerate = DriftSpec::make(AlphaMatrix::constant(2, 1.0), SmoothDrift::zero(), sing);
    EXPECT_FALSE(degenerate.sigma_inv().has_value());

    Vector mu(3);
    mu << -1.0, 0.0, 2.0;
    const auto lin = DriftSpec::dyson(3, 1.0, SmoothDrift::linear_mu(mu));
    EXPECT_TRUE(lin.growth_holds(2000, 5));
    EXPECT_NEAR(lin.derivative_bound(), std::sqrt(5.0), 1e-15);
    EXPECT_TRUE(lin.smooth().monotone());

    EXPECT_THROW(DriftSpec::make(AlphaMatrix::constant(2, 1.0), SmoothDrift::zero(), s, 0.5), Error);
}
