#pragma once

// Conditional-mean estimators producing the residuals fed to the GCM:
// ordinary least squares, kernel ridge regression with the spectral
// lambda rule, and leave-one-out k-nearest neighbours.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"

namespace gcm {

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

enum class KernelFamily { gaussian, sobolev_first_order };

struct KernelSpec {
    KernelFamily family = KernelFamily::gaussian;
    double bandwidth = 1.0;  // gaussian only

    void validate() const {
        detail::require(std::isfinite(bandwidth) && bandwidth > 0.0,
                        "KernelSpec: bandwidth must be positive and finite");
    }

    std::string tag() const {
        if (family == KernelFamily::sobolev_first_order) return "sobolev";
        std::ostringstream s;
        s << "gaussian,sigma=" << bandwidth;
        return s.str();
    }

    friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// Affine map putting scalar Sobolev inputs on [0, 1]. Data already inside
/// [0, 1] is left untouched.
struct UnitRescale {
    double offset = 0.0;
    double scale = 1.0;

    static UnitRescale fit(const Matrix& z) {
        const double lo = z.minCoeff();
        const double hi = z.maxCoeff();
        if (lo >= 0.0 && hi <= 1.0) return {};
        if (hi == lo) return {lo, 1.0};
        return {lo, 1.0 / (hi - lo)};
    }
    double operator()(double v) const { return (v - offset) * scale; }
};

namespace detail {

inline void check_kernel_input(const Matrix& z, const KernelSpec& kernel) {
    kernel.validate();
    require(z.rows() >= 1, "gram_matrix: need at least one row");
    require(z.allFinite(), "gram_matrix: non-finite input");
    require(kernel.family != KernelFamily::sobolev_first_order || z.cols() == 1,
            "gram_matrix: the first-order Sobolev kernel supports d_Z = 1 only");
}

/// Unnormalised kernel matrix k(a_i, b_j).
inline Matrix cross_kernel(const Matrix& a, const Matrix& b, const KernelSpec& kernel,
                           const UnitRescale& rescale) {
    Matrix out(a.rows(), b.rows());
    if (kernel.family == KernelFamily::gaussian) {
        const double inv = 1.0 / (2.0 * kernel.bandwidth * kernel.bandwidth);
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                const double d2 = (a.row(i) - b.row(j)).squaredNorm();
                out(i, j) = std::exp(-d2 * inv);
            }
        }
    } else {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double t = rescale(b(j, 0));
            for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, j) = 1.0 + std::min(rescale(a(i, 0)), t);
        }
    }
    return out;
}

}  // namespace detail

/// K with K_ij = k(z_i, z_j) / n.
inline Matrix gram_matrix(const Matrix& z, const KernelSpec& kernel) {
    detail::check_kernel_input(z, kernel);
    const auto rescale = kernel.family == KernelFamily::sobolev_first_order ? UnitRescale::fit(z)
                                                                             : UnitRescale{};
    Matrix k = detail::cross_kernel(z, z, kernel, rescale);
    k /= static_cast<double>(z.rows());
    return k;
}

// ---------------------------------------------------------------------------
// Tuning rule
// ---------------------------------------------------------------------------

inline constexpr double kLambdaFloor = 1e-10;

/// (1/n) Σ μ_i² / (μ_i + λ)² + λ
inline double lambda_objective(std::span<const double> eigenvalues, std::size_t n, double lambda) {
    double sum = 0.0;
    for (double mu : eigenvalues) {
        if (mu <= 0.0) continue;
        const double ratio = mu / (mu + lambda);
        sum += ratio * ratio;
    }
    return sum / static_cast<double>(n) + lambda;
}

/// Minimiser of lambda_objective over [1e-10, max(1, μ_1)]: log-spaced scan
/// to bracket the minimum, then golden-section refinement. The objective is
/// convex in λ, so the bracket contains the global minimiser.
inline double select_lambda(std::span<const double> eigenvalues, std::size_t n) {
    detail::require(n >= 1, "select_lambda: n must be positive");
    double top = 0.0;
    for (double mu : eigenvalues) {
        detail::require(std::isfinite(mu) && mu >= 0.0,
                        "select_lambda: eigenvalues must be finite and nonnegative");
        top = std::max(top, mu);
    }
    if (top == 0.0) return kLambdaFloor;

    const double cap = std::max(1.0, top);
    auto f = [&](double lambda) { return lambda_objective(eigenvalues, n, lambda); };

    constexpr int kGrid = 241;
    const double log_lo = std::log(kLambdaFloor);
    const double log_hi = std::log(cap);
    auto grid_at = [&](int i) {
        if (i <= 0) return kLambdaFloor;
        if (i >= kGrid - 1) return cap;
        return std::exp(log_lo + (log_hi - log_lo) * i / (kGrid - 1));
    };
    int best = 0;
    double best_value = f(grid_at(0));
    for (int i = 1; i < kGrid; ++i) {
        const double v = f(grid_at(i));
        if (v < best_value) {
            best_value = v;
            best = i;
        }
    }

    double lo = grid_at(best - 1);
    double hi = grid_at(best + 1);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = f(c), fd = f(d);
    for (int iter = 0; iter < 200 && (hi - lo) > 1e-14 * (1.0 + lo); ++iter) {
        if (fc <= fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    double lambda = 0.5 * (lo + hi);
    for (double candidate : {kLambdaFloor, cap}) {
        if (f(candidate) < f(lambda)) lambda = candidate;
    }
    return lambda;
}

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

struct RegressionFit {
    Vector predictions;
    Vector residuals;
    std::string backend_tag;
    std::optional<double> lambda_used;
    bool in_sample = true;
};

namespace detail {

inline RegressionFit make_fit(const Vector& target, Vector predictions, std::string tag,
                              std::optional<double> lambda, bool in_sample) {
    RegressionFit fit;
    fit.residuals = target - predictions;
    fit.predictions = std::move(predictions);
    fit.backend_tag = std::move(tag);
    fit.lambda_used = lambda;
    fit.in_sample = in_sample;
    return fit;
}

inline void check_target(const Matrix& z, const Vector& target, const char* who) {
    require(target.size() == z.rows(), std::string(who) + ": target length must equal the row count of z");
    require(target.allFinite() && z.allFinite(), std::string(who) + ": non-finite input");
}

}  // namespace detail

struct KernelDiag {
    std::vector<double> eigenvalues;  // nonincreasing, clipped at 0
    double lambda_hat = 0.0;
    double objective_at_min = 0.0;
};

/// Kernel ridge regression through the eigendecomposition of the Gram
/// matrix. The decomposition is computed once and shared by every target
/// regressed on the same z.
class KrrSolver {
public:
    KrrSolver(const Matrix& z, KernelSpec kernel, std::optional<double> lambda = std::nullopt)
        : z_(z), kernel_(kernel) {
        detail::check_kernel_input(z, kernel_);
        detail::require(z.rows() >= 1, "fit_krr: need at least one row");
        if (lambda) {
            detail::require(std::isfinite(*lambda) && *lambda > 0.0, "fit_krr: lambda must be positive");
        }
        rescale_ = kernel_.family == KernelFamily::sobolev_first_order ? UnitRescale::fit(z) : UnitRescale{};
        Matrix k = detail::cross_kernel(z, z, kernel_, rescale_);
        k /= static_cast<double>(z.rows());

        const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-10) throw NumericalFailure("fit_krr: Gram matrix is not symmetric");
        k = 0.5 * (k + k.transpose()).eval();

        Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
        if (eig.info() != Eigen::Success) throw NumericalFailure("fit_krr: eigendecomposition failed");
        // Eigen returns ascending order; store nonincreasing.
        const Eigen::Index n = z.rows();
        vectors_ = eig.eigenvectors().rowwise().reverse();
        values_ = eig.eigenvalues().reverse().cwiseMax(0.0);

        std::span<const double> spectrum(values_.data(), static_cast<std::size_t>(n));
        lambda_ = lambda ? *lambda : select_lambda(spectrum, static_cast<std::size_t>(n));
        shrink_ = values_.array() / (values_.array() + lambda_);
    }

    double lambda() const { return lambda_; }
    const Vector& eigenvalues() const { return values_; }

    KernelDiag diagnostics() const {
        KernelDiag diag;
        diag.eigenvalues.assign(values_.data(), values_.data() + values_.size());
        diag.lambda_hat = lambda_;
        diag.objective_at_min = lambda_objective(diag.eigenvalues, diag.eigenvalues.size(), lambda_);
        return diag;
    }

    /// In-sample predictions K (K + λI)^{-1} target.
    RegressionFit fit(const Vector& target) const {
        detail::check_target(z_, target, "fit_krr");
        Vector coords = vectors_.transpose() * target;
        coords.array() *= shrink_.array();
        return detail::make_fit(target, vectors_ * coords, tag(), lambda_, true);
    }

    /// Predictions at new points from the representer expansion
    /// Σ α_i k(·, z_i), α = (nK + nλI)^{-1} target.
    RegressionFit predict(const Vector& target, const Matrix& z_eval, const Vector& target_eval) const {
        detail::check_target(z_, target, "fit_krr");
        detail::require(z_eval.cols() == z_.cols(), "fit_krr: evaluation points have the wrong dimension");
        detail::check_target(z_eval, target_eval, "fit_krr");
        const double n = static_cast<double>(z_.rows());
        Vector coords = vectors_.transpose() * target;
        coords.array() /= n * (values_.array() + lambda_);
        const Vector alpha = vectors_ * coords;
        Vector pred = detail::cross_kernel(z_eval, z_, kernel_, rescale_) * alpha;
        return detail::make_fit(target_eval, std::move(pred), tag(), lambda_, false);
    }

    std::string tag() const { return "krr(" + kernel_.tag() + ")"; }

private:
    Matrix z_;
    KernelSpec kernel_;
    UnitRescale rescale_;
    Matrix vectors_;
    Vector values_;
    Vector shrink_;
    double lambda_ = 0.0;
};

/// Spectrum of K, λ̂ and the objective at λ̂.
inline KernelDiag kernel_diagnostics(const Matrix& z, const KernelSpec& kernel) {
    return KrrSolver(z, kernel).diagnostics();
}

/// lambda = nullopt selects λ̂ from the spectrum.
inline RegressionFit fit_krr(const Matrix& z, const Vector& target, const KernelSpec& kernel,
                             std::optional<double> lambda = std::nullopt) {
    return KrrSolver(z, kernel, lambda).fit(target);
}

/// OLS with intercept via the normal equations.
class LinearSolver {
public:
    explicit LinearSolver(const Matrix& z) : z_(z) {
        detail::require(z.allFinite(), "fit_linear: non-finite input");
        detail::require(z.rows() >= z.cols() + 1, "fit_linear: need n >= d_Z + 1");
        const Matrix design = with_intercept(z);
        Matrix gram = design.transpose() * design;
        ldlt_.compute(gram);
        const Vector d = ldlt_.vectorD().cwiseAbs();
        const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
        if (ldlt_.info() != Eigen::Success || d.minCoeff() <= 1e-12 * scale) {
            gram.diagonal().array() += 1e-12 * scale;
            ldlt_.compute(gram);
        }
    }

    Vector coefficients(const Vector& target) const {
        detail::check_target(z_, target, "fit_linear");
        return ldlt_.solve(with_intercept(z_).transpose() * target);
    }

    RegressionFit fit(const Vector& target) const {
        return detail::make_fit(target, with_intercept(z_) * coefficients(target), "linear", std::nullopt,
                                true);
    }

    RegressionFit predict(const Vector& target, const Matrix& z_eval, const Vector& target_eval) const {
        detail::require(z_eval.cols() == z_.cols(), "fit_linear: evaluation points have the wrong dimension");
        detail::check_target(z_eval, target_eval, "fit_linear");
        return detail::make_fit(target_eval, with_intercept(z_eval) * coefficients(target), "linear",
                                std::nullopt, false);
    }

private:
    static Matrix with_intercept(const Matrix& z) {
        Matrix design(z.rows(), z.cols() + 1);
        design.col(0).setOnes();
        design.rightCols(z.cols()) = z;
        return design;
    }

    Matrix z_;
    Eigen::LDLT<Matrix> ldlt_;
};

inline RegressionFit fit_linear(const Matrix& z, const Vector& target) {
    return LinearSolver(z).fit(target);
}

/// Default neighbour count round(√n), kept inside [1, n-1].
inline std::size_t default_knn_k(Eigen::Index n) {
    const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    return std::clamp<std::size_t>(k, 1, static_cast<std::size_t>(std::max<Eigen::Index>(1, n - 1)));
}

namespace detail {

/// Indices of the k rows of `pool` closest to `point`, skipping `exclude`;
/// equal distances resolve to the lower row index.
inline std::vector<Eigen::Index> nearest_rows(const Matrix& pool, const Eigen::RowVectorXd& point,
                                              std::size_t k, Eigen::Index exclude) {
    std::vector<std::pair<double, Eigen::Index>> cand;
    cand.reserve(static_cast<std::size_t>(pool.rows()));
    for (Eigen::Index j = 0; j < pool.rows(); ++j) {
        if (j == exclude) continue;
        cand.emplace_back((pool.row(j) - point).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    std::vector<Eigen::Index> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = cand[i].second;
    return out;
}

}  // namespace detail

/// Leave-one-out k-NN: the prediction at z_i averages the targets of the k
/// nearest other rows.
inline RegressionFit fit_knn(const Matrix& z, const Vector& target, std::size_t k) {
    detail::check_target(z, target, "fit_knn");
    detail::require(k >= 1 && k + 1 <= static_cast<std::size_t>(z.rows()), "fit_knn: k must lie in [1, n-1]");
    Vector pred(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double sum = 0.0;
        for (auto j : detail::nearest_rows(z, z.row(i), k, i)) sum += target(j);
        pred(i) = sum / static_cast<double>(k);
    }
    return detail::make_fit(target, std::move(pred), "knn(k=" + std::to_string(k) + ")", std::nullopt, true);
}

inline RegressionFit predict_knn(const Matrix& z, const Vector& target, std::size_t k, const Matrix& z_eval,
                                 const Vector& target_eval) {
    detail::check_target(z, target, "fit_knn");
    detail::check_target(z_eval, target_eval, "fit_knn");
    detail::require(z_eval.cols() == z.cols(), "fit_knn: evaluation points have the wrong dimension");
    detail::require(k >= 1 && k <= static_cast<std::size_t>(z.rows()), "fit_knn: k must lie in [1, n]");
    Vector pred(z_eval.rows());
    for (Eigen::Index i = 0; i < z_eval.rows(); ++i) {
        double sum = 0.0;
        for (auto j : detail::nearest_rows(z, z_eval.row(i), k, -1)) sum += target(j);
        pred(i) = sum / static_cast<double>(k);
    }
    return detail::make_fit(target_eval, std::move(pred), "knn(k=" + std::to_string(k) + ")", std::nullopt,
                            false);
}

// ---------------------------------------------------------------------------
// Backend selection
// ---------------------------------------------------------------------------

enum class BackendKind { linear, krr, knn };

struct Backend {
    BackendKind kind = BackendKind::krr;
    KernelSpec kernel{};
    std::optional<double> lambda;  // krr: nullopt = λ̂ rule
    std::size_t k = 0;             // knn: 0 = round(√n)

    static Backend linear() { return {BackendKind::linear, {}, std::nullopt, 0}; }
    static Backend krr(KernelSpec kernel = {}, std::optional<double> lambda = std::nullopt) {
        return {BackendKind::krr, kernel, lambda, 0};
    }
    static Backend knn(std::size_t k = 0) { return {BackendKind::knn, {}, std::nullopt, k}; }

    std::string tag() const {
        switch (kind) {
            case BackendKind::linear: return "linear";
            case BackendKind::knn: return k == 0 ? "knn(k=auto)" : "knn(k=" + std::to_string(k) + ")";
            case BackendKind::krr: break;
        }
        std::ostringstream s;
        s << "krr(" << kernel.tag() << ",lambda=";
        if (lambda) s << *lambda; else s << "auto";
        s << ")";
        return s.str();
    }

    friend bool operator==(const Backend&, const Backend&) = default;
};

/// Regresses every column of `targets` on z in-sample. Kernel backends
/// decompose the Gram matrix once for all columns.
inline std::vector<RegressionFit> fit_columns(const Backend& backend, const Matrix& z, const Matrix& targets) {
    detail::require(targets.rows() == z.rows(), "fit_columns: row mismatch");
    std::vector<RegressionFit> fits;
    fits.reserve(static_cast<std::size_t>(targets.cols()));
    switch (backend.kind) {
        case BackendKind::linear: {
            const LinearSolver solver(z);
            for (Eigen::Index j = 0; j < targets.cols(); ++j) fits.push_back(solver.fit(targets.col(j)));
            break;
        }
        case BackendKind::krr: {
            const KrrSolver solver(z, backend.kernel, backend.lambda);
            for (Eigen::Index j = 0; j < targets.cols(); ++j) fits.push_back(solver.fit(targets.col(j)));
            break;
        }
        case BackendKind::knn: {
            const std::size_t k = backend.k ? backend.k : default_knn_k(z.rows());
            for (Eigen::Index j = 0; j < targets.cols(); ++j) fits.push_back(fit_knn(z, targets.col(j), k));
            break;
        }
    }
    return fits;
}

/// Trains on (z_train, targets_train) and returns out-of-sample fits on the
/// evaluation rows, one per column.
inline std::vector<RegressionFit> fit_columns_out_of_sample(const Backend& backend, const Matrix& z_train,
                                                            const Matrix& targets_train, const Matrix& z_eval,
                                                            const Matrix& targets_eval) {
    detail::require(targets_train.rows() == z_train.rows() && targets_eval.rows() == z_eval.rows() &&
                        targets_train.cols() == targets_eval.cols(),
                    "fit_columns_out_of_sample: shape mismatch");
    std::vector<RegressionFit> fits;
    switch (backend.kind) {
        case BackendKind::linear: {
            const LinearSolver solver(z_train);
            for (Eigen::Index j = 0; j < targets_train.cols(); ++j)
                fits.push_back(solver.predict(targets_train.col(j), z_eval, targets_eval.col(j)));
            break;
        }
        case BackendKind::krr: {
            const KrrSolver solver(z_train, backend.kernel, backend.lambda);
            for (Eigen::Index j = 0; j < targets_train.cols(); ++j)
                fits.push_back(solver.predict(targets_train.col(j), z_eval, targets_eval.col(j)));
            break;
        }
        case BackendKind::knn: {
            const std::size_t k =
                backend.k ? std::min<std::size_t>(backend.k, static_cast<std::size_t>(z_train.rows()))
                          : default_knn_k(z_train.rows() + 1);
            for (Eigen::Index j = 0; j < targets_train.cols(); ++j)
                fits.push_back(predict_knn(z_train, targets_train.col(j), k, z_eval, targets_eval.col(j)));
            break;
        }
    }
    return fits;
}

}  // namespace gcm
