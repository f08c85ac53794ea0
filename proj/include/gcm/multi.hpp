#pragma once

// Multivariate GCM: pairwise statistics T_jk, the max statistic S_n,
// calibration by the quantiles of the max-abs of a Gaussian vector with the
// estimated correlation of the residual products, and data-independent
// feature lifts.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"
#include "gcm/regression.hpp"
#include "gcm/rng.hpp"
#include "gcm/univariate.hpp"

namespace gcm {

inline constexpr std::size_t kDefaultDraws = 5000;

struct GcmMatrix {
    Matrix t_matrix;             // d_X × d_Y
    std::vector<Vector> r_store;  // index j * d_Y + k
};

struct MultiGcmResult {
    Matrix t_matrix;
    double s_n = 0.0;
    Matrix sigma_hat;
    double g_quantile = 0.0;
    double p_value = 1.0;
    std::size_t draws = 0;
    bool reject = false;
    double alpha = 0.05;
    Eigen::Index n = 0;
};

/// One regression per X column and per Y column; T_jk from the residuals of
/// X_j and Y_k.
inline GcmMatrix gcm_matrix(const DataSet& data, const Backend& backend_x, const Backend& backend_y) {
    detail::require_varying(data.x(), 'x');
    detail::require_varying(data.y(), 'y');
    std::vector<RegressionFit> fx, fy;
    if (backend_x == backend_y) {
        Matrix both(data.n(), data.dx() + data.dy());
        both << data.x(), data.y();
        auto fits = fit_columns(backend_x, data.z(), both);
        fx.assign(fits.begin(), fits.begin() + data.dx());
        fy.assign(fits.begin() + data.dx(), fits.end());
    } else {
        fx = fit_columns(backend_x, data.z(), data.x());
        fy = fit_columns(backend_y, data.z(), data.y());
    }

    GcmMatrix out;
    out.t_matrix.resize(data.dx(), data.dy());
    out.r_store.reserve(static_cast<std::size_t>(data.dx() * data.dy()));
    for (Eigen::Index j = 0; j < data.dx(); ++j) {
        for (Eigen::Index k = 0; k < data.dy(); ++k) {
            Vector R = residual_products(fx[static_cast<std::size_t>(j)], fy[static_cast<std::size_t>(k)]);
            try {
                out.t_matrix(j, k) = gcm_statistic(R).T;
            } catch (const DegenerateStatistic&) {
                throw DegenerateStatistic("gcm_matrix: residual products of pair (x" + std::to_string(j + 1) +
                                          ", y" + std::to_string(k + 1) + ") have zero variance");
            }
            out.r_store.push_back(std::move(R));
        }
    }
    return out;
}

/// Sample correlation of the residual-product vectors (1/n convention).
inline Matrix residual_correlation(const std::vector<Vector>& r_store) {
    detail::require(!r_store.empty(), "residual_correlation: no residual products");
    const auto p = static_cast<Eigen::Index>(r_store.size());
    const Eigen::Index n = r_store.front().size();
    Matrix centred(n, p);
    for (Eigen::Index a = 0; a < p; ++a) {
        const Vector& R = r_store[static_cast<std::size_t>(a)];
        detail::require(R.size() == n, "residual_correlation: vectors differ in length");
        centred.col(a) = R.array() - R.mean();
    }
    const double nn = static_cast<double>(n);
    Matrix cov = centred.transpose() * centred / nn;
    Vector sd = cov.diagonal().cwiseSqrt();
    for (Eigen::Index a = 0; a < p; ++a) {
        const Vector& R = r_store[static_cast<std::size_t>(a)];
        if (sd(a) < 1e-12 * (1.0 + std::sqrt(R.squaredNorm() / nn)))
            throw DegenerateStatistic("residual_correlation: residual-product vector " + std::to_string(a + 1) +
                                      " has zero variance");
    }
    Matrix corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
    corr = (0.5 * (corr + corr.transpose())).cwiseMax(-1.0).cwiseMin(1.0);
    corr.diagonal().setOnes();
    return corr;
}

/// Symmetric square root of the PSD repair of `sigma`: eigenvalues clipped
/// at zero, then 1e-8 added.
inline Matrix psd_sqrt(const Matrix& sigma) {
    detail::require(sigma.rows() == sigma.cols() && sigma.rows() >= 1, "psd_sqrt: matrix must be square");
    detail::require(sigma.allFinite(), "psd_sqrt: non-finite entry");
    detail::require((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-8, "psd_sqrt: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sigma + sigma.transpose()));
    if (eig.info() != Eigen::Success) throw NumericalFailure("psd_sqrt: eigendecomposition failed");
    const Vector root = (eig.eigenvalues().array().max(0.0) + 1e-8).sqrt().matrix();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/// The repaired matrix itself, S Sᵀ.
inline Matrix repair_psd(const Matrix& sigma) {
    const Matrix root = psd_sqrt(sigma);
    return root * root;
}

/// B draws of max_a |g_a| with g ~ N(0, repair(sigma)), sorted ascending.
inline std::vector<double> mc_max_draws(const Matrix& sigma, std::size_t B, std::uint64_t seed) {
    detail::require(B >= 1000, "mc_quantile: need B >= 1000 draws");
    const Matrix root = psd_sqrt(sigma);
    const Eigen::Index p = root.rows();
    Rng rng(seed, Stream::mc);
    std::vector<double> draws(B);
    Vector xi(p);
    for (auto& d : draws) {
        for (Eigen::Index a = 0; a < p; ++a) xi(a) = rng.normal();
        d = (root * xi).cwiseAbs().maxCoeff();
    }
    std::sort(draws.begin(), draws.end());
    return draws;
}

namespace detail {

/// Inverse empirical CDF of sorted draws.
inline double empirical_quantile(const std::vector<double>& sorted, double level) {
    const auto B = static_cast<double>(sorted.size());
    auto idx = static_cast<std::size_t>(std::ceil(level * B));
    idx = std::clamp<std::size_t>(idx, 1, sorted.size());
    return sorted[idx - 1];
}

}  // namespace detail

/// Ĝ(level): Monte-Carlo level-quantile of the max-abs Gaussian.
inline double mc_quantile(const Matrix& sigma, double level, std::size_t B, std::uint64_t seed) {
    detail::require(level > 0.0 && level < 1.0, "mc_quantile: level must lie in (0, 1)");
    return detail::empirical_quantile(mc_max_draws(sigma, B, seed), level);
}

// ---------------------------------------------------------------------------
// Feature lifts
// ---------------------------------------------------------------------------

enum class LiftOp { identity, square, abs };

/// One output column: an elementwise op applied to a column of the block
/// itself ('x' or 'y') or of Z.
struct ColumnRecipe {
    bool from_z = false;
    Eigen::Index column = 0;  // zero-based
    LiftOp op = LiftOp::identity;

    /// "x1", "x2^2", "abs(y1)", "z1" (one-based column numbers).
    static ColumnRecipe parse(std::string text, char block) {
        ColumnRecipe r;
        auto fail = [&] { return InvalidInput("cannot parse lift column '" + text + "'"); };
        std::string body = text;
        if (body.size() > 5 && body.rfind("abs(", 0) == 0 && body.back() == ')') {
            r.op = LiftOp::abs;
            body = body.substr(4, body.size() - 5);
        } else if (body.size() > 2 && body.compare(body.size() - 2, 2, "^2") == 0) {
            r.op = LiftOp::square;
            body.resize(body.size() - 2);
        }
        if (body.size() < 2) throw fail();
        if (body[0] == 'z') r.from_z = true;
        else if (body[0] != block) throw fail();
        try {
            std::size_t used = 0;
            const long col = std::stol(body.substr(1), &used);
            if (used != body.size() - 1 || col < 1) throw fail();
            r.column = col - 1;
        } catch (const std::logic_error&) {
            throw fail();
        }
        return r;
    }
};

enum class BuiltinLift { raw, square, abs };

struct BlockMap {
    BuiltinLift builtin = BuiltinLift::raw;
    std::vector<ColumnRecipe> recipes;  // when non-empty, replaces the builtin

    Matrix apply(const Matrix& self, const Matrix& z) const {
        if (recipes.empty()) {
            if (builtin == BuiltinLift::raw) return self;
            Matrix out(self.rows(), 2 * self.cols());
            out.leftCols(self.cols()) = self;
            if (builtin == BuiltinLift::square) out.rightCols(self.cols()) = self.array().square().matrix();
            else out.rightCols(self.cols()) = self.cwiseAbs();
            return out;
        }
        Matrix out(self.rows(), static_cast<Eigen::Index>(recipes.size()));
        for (std::size_t c = 0; c < recipes.size(); ++c) {
            const auto& r = recipes[c];
            const Matrix& src = r.from_z ? z : self;
            detail::require(r.column < src.cols(), "feature lift: column index out of range");
            const auto col = src.col(r.column).array();
            const auto j = static_cast<Eigen::Index>(c);
            switch (r.op) {
                case LiftOp::identity: out.col(j) = col.matrix(); break;
                case LiftOp::square: out.col(j) = col.square().matrix(); break;
                case LiftOp::abs: out.col(j) = col.abs().matrix(); break;
            }
        }
        return out;
    }
};

/// Fixed maps (X, Z) -> X̃ and (Y, Z) -> Ỹ.
struct FeatureLift {
    BlockMap map_x;
    BlockMap map_y;

    static FeatureLift builtin(BuiltinLift kind) { return {{kind, {}}, {kind, {}}}; }

    static FeatureLift named(const std::string& name) {
        if (name == "raw") return builtin(BuiltinLift::raw);
        if (name == "square") return builtin(BuiltinLift::square);
        if (name == "abs") return builtin(BuiltinLift::abs);
        throw InvalidInput("unknown lift '" + name + "' (expected raw, square or abs)");
    }
};

inline DataSet feature_lift_apply(const DataSet& data, const FeatureLift& lift) {
    Matrix x = lift.map_x.apply(data.x(), data.z());
    Matrix y = lift.map_y.apply(data.y(), data.z());
    detail::require(x.allFinite() && y.allFinite(), "feature lift produced non-finite values");
    return DataSet(std::move(x), std::move(y), data.z());
}

/// Max-statistic test: reject when S_n exceeds Ĝ(1 - alpha).
inline MultiGcmResult multi_gcm_test(const DataSet& input, const Backend& backend_x, const Backend& backend_y,
                                     double alpha = 0.05, std::size_t B = kDefaultDraws, std::uint64_t seed = 0,
                                     const std::optional<FeatureLift>& lift = std::nullopt) {
    detail::check_alpha(alpha);
    const DataSet data = lift ? feature_lift_apply(input, *lift) : input;
    GcmMatrix pairs = gcm_matrix(data, backend_x, backend_y);

    MultiGcmResult r;
    r.s_n = pairs.t_matrix.cwiseAbs().maxCoeff();
    r.sigma_hat = residual_correlation(pairs.r_store);
    r.t_matrix = std::move(pairs.t_matrix);
    const auto draws = mc_max_draws(r.sigma_hat, B, seed);
    r.g_quantile = detail::empirical_quantile(draws, 1.0 - alpha);
    const auto exceed = static_cast<double>(draws.end() - std::lower_bound(draws.begin(), draws.end(), r.s_n));
    r.p_value = (1.0 + exceed) / (static_cast<double>(B) + 1.0);
    r.draws = B;
    r.reject = r.s_n > r.g_quantile;
    r.alpha = alpha;
    r.n = data.n();
    return r;
}

}  // namespace gcm
