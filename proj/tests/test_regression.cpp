#include <gtest/gtest.h>

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <vector>

#include "gcm/nofreelunch.hpp"
#include "gcm/regression.hpp"
#include "gcm/rng.hpp"
#include "oracles.hpp"

using namespace gcm;

namespace {

Matrix column(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

Vector vec(std::initializer_list<double> v) { return column(v).col(0); }

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

using oracle::dense_krr;
using oracle::grid_lambda;

void expect_reconstructs(const RegressionFit& fit, const Vector& target) {
    ASSERT_EQ(fit.predictions.size(), target.size());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        EXPECT_EQ(target(i) - fit.predictions(i), fit.residuals(i));
        const double scale = std::max({std::fabs(fit.predictions(i)), std::fabs(fit.residuals(i)), std::fabs(target(i))});
        const double ulp = std::nextafter(scale, INFINITY) - scale;
        EXPECT_LE(std::fabs(fit.predictions(i) + fit.residuals(i) - target(i)), ulp);
    }
}

}  // namespace

TEST(Gram, GaussianDiagonalIsOneOverN) {
    Rng rng(1, Stream::user);
    const Matrix k = gram_matrix(random_matrix(rng, 4, 2), KernelSpec{});
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(k(i, i), 0.25);
}

TEST(Gram, GaussianOffDiagonal) {
    const Matrix k = gram_matrix(column({0.0, 1.0}), KernelSpec{});
    EXPECT_NEAR(k(0, 1), 0.30327, 1e-5);
    EXPECT_DOUBLE_EQ(k(0, 1), std::exp(-0.5) / 2.0);
    EXPECT_EQ(k(0, 1), k(1, 0));
}

TEST(Gram, SobolevOnUnitInterval) {
    const Matrix k = gram_matrix(column({0.2, 0.7}), KernelSpec{KernelFamily::sobolev_first_order});
    EXPECT_DOUBLE_EQ(k(0, 1), 0.6);
    EXPECT_DOUBLE_EQ(k(1, 1), 1.7 / 2.0);
}

TEST(Gram, SobolevRescalesDataOutsideUnitInterval) {
    const Matrix k = gram_matrix(column({-3.0, 1.0, 5.0}), KernelSpec{KernelFamily::sobolev_first_order});
    // Rescaled points 0, 0.5, 1.
    EXPECT_DOUBLE_EQ(k(0, 2), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(k(1, 2), 1.5 / 3.0);
    EXPECT_DOUBLE_EQ(k(2, 2), 2.0 / 3.0);
}

TEST(Gram, RejectsBadInput) {
    EXPECT_THROW(gram_matrix(random_matrix(*std::make_unique<Rng>(2, Stream::user), 3, 2),
                             KernelSpec{KernelFamily::sobolev_first_order}),
                 InvalidInput);
    Matrix bad = column({0.0, std::nan("")});
    EXPECT_THROW(gram_matrix(bad, KernelSpec{}), InvalidInput);
    EXPECT_THROW((KernelSpec{KernelFamily::gaussian, 0.0}.validate()), InvalidInput);
}

TEST(Gram, PositiveSemidefinite) {
    Rng rng(3, Stream::user);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.uniform_int(60));
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_int(3));
        const KernelSpec spec{d == 1 && trial % 2 ? KernelFamily::sobolev_first_order : KernelFamily::gaussian,
                              0.3 + 2 * rng.uniform()};
        const Matrix k = gram_matrix(random_matrix(rng, n, d), spec);
        EXPECT_EQ(k, k.transpose());
        const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(k).eigenvalues();
        EXPECT_GE(ev.minCoeff(), -1e-8 * ev.maxCoeff());
    }
}

TEST(SelectLambda, SingleUnitEigenvalue) {
    const std::vector<double> mu{1.0};
    const double expected = std::cbrt(2.0) - 1.0;
    EXPECT_NEAR(select_lambda(mu, 1), expected, 1e-6);
    EXPECT_NEAR(expected, 0.259921, 1e-6);
    EXPECT_NEAR(grid_lambda(mu, 1), expected, 1e-6);
}

TEST(SelectLambda, TwoUnitEigenvaluesMatchSingleCase) {
    const std::vector<double> mu{1.0, 1.0};
    EXPECT_NEAR(select_lambda(mu, 2), std::cbrt(2.0) - 1.0, 1e-6);
}

TEST(SelectLambda, ZeroSpectrumReturnsFloor) {
    const std::vector<double> mu(5, 0.0);
    EXPECT_EQ(select_lambda(mu, 5), kLambdaFloor);
}

TEST(SelectLambda, MatchesGridOracleOnRandomSpectra) {
    Rng rng(4, Stream::user);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 3 + rng.uniform_int(18);
        std::vector<double> mu(n);
        const double top = trial % 5 == 0 ? 1.0 + 2.0 * rng.uniform() : rng.uniform();
        const double decay = 0.2 + 0.75 * rng.uniform();
        for (std::size_t i = 0; i < n; ++i) mu[i] = top * std::pow(decay, static_cast<double>(i));
        if (trial % 7 == 0) mu.back() = 0.0;
        EXPECT_NEAR(select_lambda(mu, n), grid_lambda(mu, n), 1e-4) << "trial " << trial;
    }
}

TEST(Krr, ScalarRepresenter) {
    const double lambda = 0.3;
    const RegressionFit fit = fit_krr(column({0.4}), vec({2.0}), KernelSpec{}, lambda);
    EXPECT_NEAR(fit.predictions(0), 2.0 / 1.3, 1e-15);
    EXPECT_EQ(fit.lambda_used, lambda);
}

TEST(Krr, MatchesDenseSolveOracle) {
    Rng rng(5, Stream::user);
    const Matrix z = random_matrix(rng, 5, 1);
    const Vector target = random_matrix(rng, 5, 1).col(0);
    const RegressionFit fit = fit_krr(z, target, KernelSpec{}, 0.1);
    const Vector oracle = dense_krr(z, target, 1.0, 0.1);
    EXPECT_LE((fit.predictions - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Krr, MatchesDenseSolveOracleAtModerateSize) {
    Rng rng(15, Stream::user);
    const Matrix z = random_matrix(rng, 300, 2);
    const Vector target = random_matrix(rng, 300, 1).col(0);
    const KrrSolver solver(z, KernelSpec{});
    const Vector oracle = dense_krr(z, target, 1.0, solver.lambda());
    EXPECT_LE((solver.fit(target).predictions - oracle).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Krr, InterpolatesAsLambdaVanishes) {
    // Well separated points keep K far from singular.
    const Matrix z = column({-3.0, -1.5, 0.0, 1.5, 3.0});
    const Vector target = vec({1.0, -2.0, 0.5, 3.0, -1.0});
    const RegressionFit fit = fit_krr(z, target, KernelSpec{}, 1e-12);
    EXPECT_LE((fit.predictions - target).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Krr, OutOfSampleMatchesRepresenter) {
    Rng rng(6, Stream::user);
    const Matrix z = random_matrix(rng, 12, 2);
    const Vector target = random_matrix(rng, 12, 1).col(0);
    const Matrix z_eval = random_matrix(rng, 4, 2);
    const double lambda = 0.05;
    const KernelSpec spec{KernelFamily::gaussian, 1.3};
    const RegressionFit fit = KrrSolver(z, spec, lambda).predict(target, z_eval, Vector::Zero(4));

    const double n = 12.0;
    Matrix raw(12, 12), cross(4, 12);
    auto k = [&](auto a, auto b) { return std::exp(-(a - b).squaredNorm() / (2 * 1.3 * 1.3)); };
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) raw(i, j) = k(z.row(i), z.row(j));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 12; ++j) cross(i, j) = k(z_eval.row(i), z.row(j));
    const Vector alpha = (raw + n * lambda * Matrix::Identity(12, 12)).partialPivLu().solve(target);
    EXPECT_LE((fit.predictions - cross * alpha).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_FALSE(fit.in_sample);

    // On the training points the expansion reproduces the in-sample fit.
    const RegressionFit again = KrrSolver(z, spec, lambda).predict(target, z, target);
    EXPECT_LE((again.predictions - KrrSolver(z, spec, lambda).fit(target).predictions).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(Krr, AutoLambdaUsesSpectralRule) {
    Rng rng(7, Stream::user);
    const Matrix z = random_matrix(rng, 30, 1);
    const KrrSolver solver(z, KernelSpec{});
    const Vector& mu = solver.eigenvalues();
    for (Eigen::Index i = 1; i < mu.size(); ++i) EXPECT_LE(mu(i), mu(i - 1));
    const std::vector<double> spectrum(mu.data(), mu.data() + mu.size());
    EXPECT_EQ(solver.lambda(), select_lambda(spectrum, 30));
    const RegressionFit fit = solver.fit(random_matrix(rng, 30, 1).col(0));
    ASSERT_TRUE(fit.lambda_used.has_value());
    EXPECT_EQ(*fit.lambda_used, solver.lambda());
}

TEST(Krr, ErrorPerformanceImprovesWithSampleSize) {
    // In-sample MSPE against f_2 on the f_a model, averaged over replicates.
    auto mean_mspe = [](std::size_t n) {
        double total = 0.0;
        const int reps = 4;
        for (int r = 0; r < reps; ++r) {
            Rng rng(8, Stream::model, substream_of(n, static_cast<std::uint64_t>(r)));
            Matrix z(static_cast<Eigen::Index>(n), 1);
            Vector truth(static_cast<Eigen::Index>(n)), target(static_cast<Eigen::Index>(n));
            for (Eigen::Index i = 0; i < z.rows(); ++i) {
                z(i, 0) = rng.normal();
                truth(i) = f_a(z(i, 0), 2.0);
                target(i) = truth(i) + rng.normal();
            }
            total += (fit_krr(z, target, KernelSpec{}).predictions - truth).squaredNorm() / static_cast<double>(n);
        }
        return total / reps;
    };
    const double e100 = mean_mspe(100), e400 = mean_mspe(400), e1600 = mean_mspe(1600);
    EXPECT_LE(e400, 2.0 * e100);
    EXPECT_LE(e1600, 2.0 * e400);
    EXPECT_LT(e1600, e100);
}

TEST(Linear, HandExamples) {
    RegressionFit fit = fit_linear(column({0.0, 1.0}), vec({0.0, 1.0}));
    EXPECT_NEAR(fit.predictions(0), 0.0, 1e-12);
    EXPECT_NEAR(fit.predictions(1), 1.0, 1e-12);
    EXPECT_NEAR(fit.residuals.cwiseAbs().maxCoeff(), 0.0, 1e-12);

    fit = fit_linear(column({0.0, 1.0, 2.0}), vec({1.0, 1.0, 1.0}));
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(fit.predictions(i), 1.0, 1e-12);

    fit = fit_linear(column({0.0, 1.0, 2.0}), vec({0.0, 1.0, 4.0}));
    EXPECT_NEAR(fit.predictions(0), -1.0 / 3.0, 1e-12);
    EXPECT_NEAR(fit.predictions(1), 5.0 / 3.0, 1e-12);
    EXPECT_NEAR(fit.predictions(2), 11.0 / 3.0, 1e-12);
    const Vector beta = LinearSolver(column({0.0, 1.0, 2.0})).coefficients(vec({0.0, 1.0, 4.0}));
    EXPECT_NEAR(beta(0), -1.0 / 3.0, 1e-12);
    EXPECT_NEAR(beta(1), 2.0, 1e-12);
}

TEST(Linear, RankDeficientDesignStillFits) {
    Matrix z(4, 2);
    z << 0, 0, 1, 2, 2, 4, 3, 6;  // second column = 2 x first
    const Vector target = vec({1.0, 3.0, 5.0, 7.0});
    const RegressionFit fit = fit_linear(z, target);
    EXPECT_TRUE(fit.predictions.allFinite());
    EXPECT_LE((fit.predictions - target).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Knn, HandExamples) {
    RegressionFit fit = fit_knn(column({0.0, 5.0}), vec({3.0, 8.0}), 1);
    EXPECT_EQ(fit.predictions(0), 8.0);
    EXPECT_EQ(fit.predictions(1), 3.0);

    fit = fit_knn(column({0.0, 1.0, 2.0, 10.0}), vec({0.0, 1.0, 2.0, 3.0}), 2);
    EXPECT_DOUBLE_EQ(fit.predictions(3), 1.5);

    fit = fit_knn(column({0.0, 1.0, 2.0, 10.0}), vec({4.0, 4.0, 4.0, 4.0}), 3);
    for (Eigen::Index i = 0; i < 4; ++i) {
        EXPECT_EQ(fit.predictions(i), 4.0);
        EXPECT_EQ(fit.residuals(i), 0.0);
    }
}

TEST(Knn, TiesGoToLowerRowIndex) {
    // Rows 0 and 2 are both at distance 1 from row 1.
    const RegressionFit fit = fit_knn(column({0.0, 1.0, 2.0}), vec({10.0, 0.0, 20.0}), 1);
    EXPECT_EQ(fit.predictions(1), 10.0);
}

TEST(Knn, RejectsBadK) {
    EXPECT_THROW(fit_knn(column({0.0, 1.0, 2.0}), vec({1.0, 2.0, 3.0}), 0), InvalidInput);
    EXPECT_THROW(fit_knn(column({0.0, 1.0, 2.0}), vec({1.0, 2.0, 3.0}), 3), InvalidInput);
}

TEST(Backends, ResidualsAreTargetMinusPredictions) {
    Rng rng(9, Stream::user);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix z = random_matrix(rng, 40, 2);
        Matrix targets = random_matrix(rng, 40, 2);
        targets.col(1) *= 1e6;
        for (const Backend& b : {Backend::linear(), Backend::krr(), Backend::knn(), Backend::krr({}, 0.01)}) {
            const auto fits = fit_columns(b, z, targets);
            ASSERT_EQ(fits.size(), 2u);
            for (std::size_t c = 0; c < 2; ++c) expect_reconstructs(fits[c], targets.col(static_cast<Eigen::Index>(c)));
        }
    }
}

TEST(Backends, SharedDecompositionMatchesSeparateFits) {
    Rng rng(10, Stream::user);
    const Matrix z = random_matrix(rng, 25, 1);
    const Matrix targets = random_matrix(rng, 25, 3);
    const auto fits = fit_columns(Backend::krr(), z, targets);
    for (Eigen::Index c = 0; c < 3; ++c)
        EXPECT_EQ(fits[static_cast<std::size_t>(c)].predictions, fit_krr(z, targets.col(c), KernelSpec{}).predictions);
}
