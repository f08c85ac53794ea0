#pragma once

// Univariate generalised covariance measure: statistic, two-sided normal
// test, the product-of-standard-deviations baseline, and the interval for
// the expected conditional covariance.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"
#include "gcm/normal.hpp"
#include "gcm/regression.hpp"
#include "gcm/rng.hpp"

namespace gcm {

struct GcmResult {
    double statistic_T = 0.0;
    double tau_N = 0.0;
    double tau_D = 0.0;
    double p_value = 1.0;
    bool reject = false;
    double alpha = 0.05;
    Eigen::Index n = 0;
    std::pair<std::string, std::string> backend_tags;
};

struct GcmStatistic {
    double T = 0.0;
    double tau_N = 0.0;
    double tau_D = 0.0;
};

struct CondCovEstimate {
    double rho_hat = 0.0;
    double sigma_hat = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double alpha = 0.05;
    bool split_used = false;
    Eigen::Index n_eval = 0;
};

/// In-sample MSPEs against the true conditional means (simulation only).
struct Diagnostics {
    double A_f = 0.0;
    double A_g = 0.0;
    double product_check = 0.0;  // n · A_f · A_g
};

/// R_i = (x_i - f̂(z_i)) (y_i - ĝ(z_i))
inline Vector residual_products(const RegressionFit& fit_x, const RegressionFit& fit_y) {
    detail::require(fit_x.residuals.size() == fit_y.residuals.size(),
                    "residual_products: residual vectors differ in length");
    return fit_x.residuals.cwiseProduct(fit_y.residuals);
}

namespace detail {

/// mean(v²) - mean(v)², the 1/n convention, clamped at zero.
inline double plain_variance(const Vector& v) {
    const double n = static_cast<double>(v.size());
    const double mean = v.sum() / n;
    return std::max(0.0, v.squaredNorm() / n - mean * mean);
}

}  // namespace detail

/// T = √n · mean(R) / sqrt(mean(R²) - mean(R)²).
inline GcmStatistic gcm_statistic(const Vector& R) {
    detail::require(R.size() >= 2, "gcm_statistic: need n >= 2");
    detail::require(R.allFinite(), "gcm_statistic: non-finite residual product");
    const double n = static_cast<double>(R.size());
    const double mean = R.sum() / n;
    const double mean_sq = R.squaredNorm() / n;
    GcmStatistic s;
    s.tau_N = std::sqrt(n) * mean;
    s.tau_D = std::sqrt(std::max(0.0, mean_sq - mean * mean));
    if (s.tau_D < 1e-12 * (1.0 + mean_sq))
        throw DegenerateStatistic("gcm_statistic: residual products have zero variance");
    s.T = s.tau_N / s.tau_D;
    return s;
}

namespace detail {

inline void check_alpha(double alpha) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
}

// A constant column leaves nothing to correlate. Backends that cannot
// reproduce constants (KRR) would otherwise return a tiny nonzero
// residual and an arbitrary statistic.
inline void require_varying(const Matrix& block, char name) {
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
        const auto col = block.col(c);
        if ((col.array() == col(0)).all())
            throw DegenerateStatistic(std::string("column ") + name + std::to_string(c + 1) + " is constant");
    }
}

inline std::pair<RegressionFit, RegressionFit> fit_pair(const DataSet& data, const Backend& bx,
                                                        const Backend& by) {
    require(data.dx() == 1 && data.dy() == 1, "univariate GCM needs d_X = d_Y = 1");
    require_varying(data.x(), 'x');
    require_varying(data.y(), 'y');
    if (bx == by) {
        Matrix both(data.n(), 2);
        both.col(0) = data.x().col(0);
        both.col(1) = data.y().col(0);
        auto fits = fit_columns(bx, data.z(), both);
        return {std::move(fits[0]), std::move(fits[1])};
    }
    return {std::move(fit_columns(bx, data.z(), data.x())[0]), std::move(fit_columns(by, data.z(), data.y())[0])};
}

inline GcmResult finish(const GcmStatistic& s, double alpha, Eigen::Index n, const RegressionFit& fx,
                        const RegressionFit& fy) {
    GcmResult r;
    r.statistic_T = s.T;
    r.tau_N = s.tau_N;
    r.tau_D = s.tau_D;
    r.p_value = two_sided_p(s.T);
    r.reject = r.p_value <= alpha;
    r.alpha = alpha;
    r.n = n;
    r.backend_tags = {fx.backend_tag, fy.backend_tag};
    return r;
}

}  // namespace detail

/// Both regressions on Z, then reject when 2(1 - Φ(|T|)) <= alpha.
inline GcmResult gcm_test(const DataSet& data, const Backend& backend_x, const Backend& backend_y,
                          double alpha = 0.05) {
    detail::check_alpha(alpha);
    const auto [fx, fy] = detail::fit_pair(data, backend_x, backend_y);
    return detail::finish(gcm_statistic(residual_products(fx, fy)), alpha, data.n(), fx, fy);
}

/// Residual-correlation baseline: the GCM numerator over the product of
/// the residual standard deviations. Not valid under heteroskedastic
/// nulls; kept to exhibit that failure.
inline GcmResult naive_resid_corr_test(const DataSet& data, const Backend& backend_x, const Backend& backend_y,
                                       double alpha = 0.05) {
    detail::check_alpha(alpha);
    const auto [fx, fy] = detail::fit_pair(data, backend_x, backend_y);
    const Vector R = residual_products(fx, fy);
    const double n = static_cast<double>(R.size());
    GcmStatistic s;
    s.tau_N = std::sqrt(n) * R.sum() / n;
    s.tau_D = std::sqrt(detail::plain_variance(fx.residuals)) * std::sqrt(detail::plain_variance(fy.residuals));
    const double scale = 1.0 + std::sqrt(fx.residuals.squaredNorm() / n * fy.residuals.squaredNorm() / n);
    if (s.tau_D < 1e-12 * scale) throw DegenerateStatistic("naive_resid_corr_test: a residual vector is constant");
    s.T = s.tau_N / s.tau_D;
    return detail::finish(s, alpha, data.n(), fx, fy);
}

/// Point estimate and (1 - alpha) interval for E cov(X, Y | Z).
///
/// With `split`, the regressions are trained on a random half of the rows
/// (seeded from `seed` on the test stream) and the residual products are
/// formed on the other half. Without it, everything is in-sample.
inline CondCovEstimate expected_cond_cov_ci(const DataSet& data, const Backend& backend_x,
                                            const Backend& backend_y, double alpha, bool split,
                                            std::uint64_t seed = 0) {
    detail::check_alpha(alpha);
    detail::require(data.dx() == 1 && data.dy() == 1, "expected_cond_cov_ci needs d_X = d_Y = 1");
    detail::require_varying(data.x(), 'x');
    detail::require_varying(data.y(), 'y');

    Vector R;
    if (split) {
        if (data.n() < 4) throw DegenerateStatistic("expected_cond_cov_ci: need n >= 4 to split the sample");
        std::vector<Eigen::Index> order(static_cast<std::size_t>(data.n()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng(seed, Stream::test);
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
        const auto half = static_cast<std::ptrdiff_t>(order.size() / 2);
        const DataSet train = data.rows({order.begin(), order.begin() + half});
        const DataSet eval = data.rows({order.begin() + half, order.end()});
        const auto fx =
            fit_columns_out_of_sample(backend_x, train.z(), train.x(), eval.z(), eval.x()).front();
        const auto fy =
            fit_columns_out_of_sample(backend_y, train.z(), train.y(), eval.z(), eval.y()).front();
        R = residual_products(fx, fy);
    } else {
        const auto [fx, fy] = detail::fit_pair(data, backend_x, backend_y);
        R = residual_products(fx, fy);
    }

    const GcmStatistic s = gcm_statistic(R);
    const double root_n = std::sqrt(static_cast<double>(R.size()));
    CondCovEstimate est;
    est.rho_hat = s.tau_N / root_n;
    est.sigma_hat = s.tau_D;
    const double half_width = normal_quantile(1.0 - alpha / 2.0) * s.tau_D / root_n;
    est.ci_lower = est.rho_hat - half_width;
    est.ci_upper = est.rho_hat + half_width;
    est.alpha = alpha;
    est.split_used = split;
    est.n_eval = R.size();
    return est;
}

/// (1/n) Σ (truth_i - prediction_i)²
inline double mspe(const Vector& truth, const Vector& predictions) {
    detail::require(truth.size() == predictions.size() && truth.size() > 0, "mspe: length mismatch");
    return (truth - predictions).squaredNorm() / static_cast<double>(truth.size());
}

}  // namespace gcm
