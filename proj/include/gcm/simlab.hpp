#pragma once

// Simulation harness: the level/power models, a reproducible rejection-rate
// engine and MSPE diagnostics against the known conditional means.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"
#include "gcm/multi.hpp"
#include "gcm/nofreelunch.hpp"
#include "gcm/parallel.hpp"
#include "gcm/regression.hpp"
#include "gcm/rng.hpp"
#include "gcm/univariate.hpp"

namespace gcm {

enum class ModelName { a, b, c, d, e, example1, nfl };

inline std::string to_string(ModelName m) {
    switch (m) {
        case ModelName::a: return "a";
        case ModelName::b: return "b";
        case ModelName::c: return "c";
        case ModelName::d: return "d";
        case ModelName::e: return "e";
        case ModelName::example1: return "example1";
        case ModelName::nfl: return "nfl";
    }
    return "?";
}

inline ModelName parse_model(const std::string& s) {
    for (auto m : {ModelName::a, ModelName::b, ModelName::c, ModelName::d, ModelName::e, ModelName::example1,
                   ModelName::nfl}) {
        if (to_string(m) == s) return m;
    }
    throw InvalidInput("unknown model '" + s + "' (expected a, b, c, d, e, example1 or nfl)");
}

struct ModelSpec {
    ModelName name = ModelName::a;
    bool power_variant = false;
    std::optional<double> a_param;  // a, b and nfl only
    std::size_t n = 100;

    void validate() const {
        const bool takes_a = name == ModelName::a || name == ModelName::b || name == ModelName::nfl;
        detail::require(takes_a || !a_param, "ModelSpec: a_param only applies to models a, b and nfl");
        detail::require(name != ModelName::nfl || a_param, "ModelSpec: model nfl needs a_param");
        detail::require(!a_param || (std::isfinite(*a_param) && *a_param > 0.0), "ModelSpec: a must be positive");
        detail::require(n >= 2, "ModelSpec: need n >= 2");
    }

    /// Frequency of f_a for the models that use one.
    double a() const {
        if (a_param) return *a_param;
        return name == ModelName::b ? 4.0 : 2.0;
    }

    std::string label() const {
        std::string s = to_string(name);
        if (a_param) {
            std::ostringstream os;
            os << "(a=" << *a_param << ")";
            s += os.str();
        }
        return power_variant ? s + "+power" : s;
    }
};

/// One dataset from the model. Power variants add 0.2·X to the Y equation
/// (0.2·X₂ to Y₂ for model d).
inline DataSet gen_model(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    const auto n = static_cast<Eigen::Index>(spec.n);
    const double boost = spec.power_variant ? 0.2 : 0.0;
    auto f1 = [](double z) { return f_a(z, 1.0); };

    switch (spec.name) {
        case ModelName::a:
        case ModelName::b: {
            const double a = spec.a();
            Matrix x(n, 1), y(n, 1), z(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i, 0) = rng.normal();
                const double m = f_a(z(i, 0), a);
                x(i, 0) = m + 0.3 * rng.normal();
                y(i, 0) = m + 0.3 * rng.normal() + boost * x(i, 0);
            }
            return DataSet(std::move(x), std::move(y), std::move(z));
        }
        case ModelName::c: {
            Matrix x(n, 1), y(n, 1), z(n, 2);
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i, 0) = rng.normal();
                z(i, 1) = rng.normal();
                const double p = f1(z(i, 0)), q = f1(z(i, 1));
                x(i, 0) = p - q + 0.3 * rng.normal();
                y(i, 0) = p + q + 0.3 * rng.normal() + boost * x(i, 0);
            }
            return DataSet(std::move(x), std::move(y), std::move(z));
        }
        case ModelName::d: {
            Matrix x(n, 2), y(n, 2), z(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i, 0) = rng.normal();
                const double m = f1(z(i, 0));
                x(i, 0) = m + 0.3 * rng.normal();
                x(i, 1) = m + x(i, 0) + 0.3 * rng.normal();
                y(i, 0) = m + 0.3 * rng.normal();
                y(i, 1) = m + y(i, 0) + 0.3 * rng.normal() + boost * x(i, 1);
            }
            return DataSet(std::move(x), std::move(y), std::move(z));
        }
        case ModelName::e: {
            Matrix x(n, 1), y(n, 1), z(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i, 0) = rng.normal();
                const double m = f_a(z(i, 0), 2.0);
                x(i, 0) = m * rng.normal();
                y(i, 0) = m * rng.normal() + boost * x(i, 0);
            }
            return DataSet(std::move(x), std::move(y), std::move(z));
        }
        case ModelName::example1: {
            Matrix x(n, 1), y(n, 1), z(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                z(i, 0) = rng.normal();
                x(i, 0) = z(i, 0) * rng.normal();
                y(i, 0) = z(i, 0) * rng.normal() + boost * x(i, 0);
            }
            return DataSet(std::move(x), std::move(y), std::move(z));
        }
        case ModelName::nfl: {
            DataSet base = nfl_null_model(spec.a(), spec.n, rng);
            if (!spec.power_variant) return base;
            Matrix y = base.y() + boost * base.x();
            return DataSet(base.x(), std::move(y), base.z());
        }
    }
    throw InvalidInput("gen_model: unknown model");
}

/// E[X | Z] and E[Y | Z] evaluated at the rows of z.
inline std::pair<Matrix, Matrix> conditional_means(const ModelSpec& spec, const Matrix& z) {
    spec.validate();
    const Eigen::Index n = z.rows();
    const double boost = spec.power_variant ? 0.2 : 0.0;
    auto f1 = [](double v) { return f_a(v, 1.0); };
    Matrix fx, fy;
    switch (spec.name) {
        case ModelName::a:
        case ModelName::b:
        case ModelName::nfl: {
            detail::require(z.cols() == 1, "conditional_means: model expects d_Z = 1");
            fx.resize(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) fx(i, 0) = f_a(z(i, 0), spec.a());
            fy = (1.0 + boost) * fx;
            break;
        }
        case ModelName::c: {
            detail::require(z.cols() == 2, "conditional_means: model c expects d_Z = 2");
            fx.resize(n, 1);
            fy.resize(n, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double p = f1(z(i, 0)), q = f1(z(i, 1));
                fx(i, 0) = p - q;
                fy(i, 0) = p + q + boost * (p - q);
            }
            break;
        }
        case ModelName::d: {
            detail::require(z.cols() == 1, "conditional_means: model expects d_Z = 1");
            fx.resize(n, 2);
            fy.resize(n, 2);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double m = f1(z(i, 0));
                fx(i, 0) = m;
                fx(i, 1) = 2.0 * m;
                fy(i, 0) = m;
                fy(i, 1) = 2.0 * m + boost * 2.0 * m;
            }
            break;
        }
        case ModelName::e:
        case ModelName::example1:
            fx = Matrix::Zero(n, 1);
            fy = Matrix::Zero(n, 1);
            break;
    }
    return {fx, fy};
}

/// A_f, A_g and n·A_f·A_g for a univariate pair of in-sample fits.
inline Diagnostics truth_diagnostics(const ModelSpec& spec, const Matrix& z, const RegressionFit& fit_x,
                                     const RegressionFit& fit_y) {
    const auto [fx, fy] = conditional_means(spec, z);
    detail::require(fx.cols() == 1 && fy.cols() == 1, "truth_diagnostics: univariate model expected");
    Diagnostics d;
    d.A_f = mspe(fx.col(0), fit_x.predictions);
    d.A_g = mspe(fy.col(0), fit_y.predictions);
    d.product_check = static_cast<double>(z.rows()) * d.A_f * d.A_g;
    return d;
}

/// Multivariate variant: A_f = max_j A_{f,j}, A_g = max_k A_{g,k}.
inline Diagnostics truth_diagnostics(const ModelSpec& spec, const Matrix& z, const std::vector<RegressionFit>& fits_x,
                                     const std::vector<RegressionFit>& fits_y) {
    const auto [fx, fy] = conditional_means(spec, z);
    detail::require(static_cast<Eigen::Index>(fits_x.size()) == fx.cols() &&
                        static_cast<Eigen::Index>(fits_y.size()) == fy.cols(),
                    "truth_diagnostics: one fit per column expected");
    Diagnostics d;
    for (std::size_t j = 0; j < fits_x.size(); ++j)
        d.A_f = std::max(d.A_f, mspe(fx.col(static_cast<Eigen::Index>(j)), fits_x[j].predictions));
    for (std::size_t k = 0; k < fits_y.size(); ++k)
        d.A_g = std::max(d.A_g, mspe(fy.col(static_cast<Eigen::Index>(k)), fits_y[k].predictions));
    d.product_check = static_cast<double>(z.rows()) * d.A_f * d.A_g;
    return d;
}

// ---------------------------------------------------------------------------
// Rejection rates
// ---------------------------------------------------------------------------

enum class TestKind { gcm, naive };

struct TestConfig {
    TestKind kind = TestKind::gcm;
    Backend backend_x = Backend::krr();
    Backend backend_y = Backend::krr();
    std::size_t draws = kDefaultDraws;  // multivariate calibration
    std::optional<FeatureLift> lift;

    std::string tag() const {
        const std::string name = kind == TestKind::gcm ? "gcm" : "naive";
        std::string out = name + "[" + backend_x.tag();
        if (!(backend_x == backend_y)) out += "," + backend_y.tag();
        out += "]";
        if (lift) out += "+lift";
        return out;
    }
};

/// Decision of one test run. test_seed feeds any randomness inside the test.
using TestFn = std::function<bool(const DataSet&, double alpha, std::uint64_t test_seed)>;

/// Runs the configured test. Univariate data goes to gcm_test (or the naive
/// baseline); anything wider, or any lifted data, to the max-statistic test.
inline TestFn make_test(const TestConfig& config) {
    return [config](const DataSet& data, double alpha, std::uint64_t test_seed) {
        const bool univariate = data.dx() == 1 && data.dy() == 1 && !config.lift;
        if (config.kind == TestKind::naive) {
            detail::require(univariate, "naive baseline is univariate only");
            return naive_resid_corr_test(data, config.backend_x, config.backend_y, alpha).reject;
        }
        if (univariate) return gcm_test(data, config.backend_x, config.backend_y, alpha).reject;
        return multi_gcm_test(data, config.backend_x, config.backend_y, alpha, config.draws, test_seed, config.lift)
            .reject;
    };
}

/// Largest rejection count still consistent, at level 0.01, with a true
/// rate of alpha, as a fraction of reps: k/reps with k the smallest count
/// such that P(Bin(reps, alpha) > k) <= 0.01.
inline double binomial_band(std::size_t reps, double alpha, double level = 0.01) {
    detail::require(reps >= 1, "binomial_band: reps must be positive");
    detail::require(alpha > 0.0 && alpha < 1.0, "binomial_band: alpha must lie in (0, 1)");
    const double nn = static_cast<double>(reps);
    std::vector<double> pmf(reps + 1);
    for (std::size_t k = 0; k <= reps; ++k) {
        const double kk = static_cast<double>(k);
        pmf[k] = std::exp(std::lgamma(nn + 1) - std::lgamma(kk + 1) - std::lgamma(nn - kk + 1) +
                          kk * std::log(alpha) + (nn - kk) * std::log1p(-alpha));
    }
    double tail = 0.0;  // P(X > k)
    for (std::size_t k = reps; k-- > 0;) {
        tail += pmf[k + 1];
        if (tail > level) return static_cast<double>(k + 1) / nn;
    }
    return 0.0;
}

struct RejectionReport {
    ModelSpec model;
    std::string test_tag;
    std::vector<std::size_t> n_values;
    std::size_t reps = 0;
    double alpha = 0.05;
    std::vector<double> rates;
    std::vector<double> mc_stderr;
    std::vector<std::size_t> errors;  // errored runs per n (counted as non-rejections)
    double band = 0.0;
    std::vector<bool> band_pass;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

/// Rejection rate of `test` on `reps` datasets per sample size. Dataset
/// (cell c, rep r) is drawn from the model stream at substream (c, r); the
/// test seed comes from the test stream at the same address, so the report
/// is identical under any scheduling.
inline RejectionReport rejection_rate(const ModelSpec& spec, const std::string& test_tag, const TestFn& test,
                                      const std::vector<std::size_t>& n_values, std::size_t reps, double alpha,
                                      std::uint64_t seed) {
    detail::require(reps >= 1, "rejection_rate: reps must be positive");
    detail::require(!n_values.empty(), "rejection_rate: empty n grid");
    detail::check_alpha(alpha);
    for (auto n : n_values) {
        ModelSpec probe = spec;
        probe.n = n;
        probe.validate();
    }

    const std::size_t cells = n_values.size();
    std::vector<signed char> outcome(cells * reps, 0);
    std::vector<std::string> messages(cells * reps);
    parallel_for(cells * reps, [&](std::size_t task) {
        const std::size_t c = task / reps;
        const std::size_t r = task % reps;
        ModelSpec model = spec;
        model.n = n_values[c];
        Rng data_rng(seed, Stream::model, substream_of(c, r));
        const std::uint64_t test_seed = Rng(seed, Stream::test, substream_of(c, r))();
        try {
            const DataSet data = gen_model(model, data_rng);
            outcome[task] = test(data, alpha, test_seed) ? 1 : 0;
        } catch (const std::exception& ex) {
            outcome[task] = -1;
            messages[task] = ex.what();
        }
    });

    RejectionReport rep;
    rep.model = spec;
    rep.test_tag = test_tag;
    rep.n_values = n_values;
    rep.reps = reps;
    rep.alpha = alpha;
    rep.seed = seed;
    rep.band = binomial_band(reps, alpha);
    for (std::size_t c = 0; c < cells; ++c) {
        std::size_t rejections = 0, errors = 0;
        std::string first_error;
        for (std::size_t r = 0; r < reps; ++r) {
            const auto o = outcome[c * reps + r];
            if (o == 1) ++rejections;
            if (o < 0) {
                if (errors++ == 0) first_error = messages[c * reps + r];
            }
        }
        const double rate = static_cast<double>(rejections) / static_cast<double>(reps);
        rep.rates.push_back(rate);
        rep.mc_stderr.push_back(std::sqrt(rate * (1.0 - rate) / static_cast<double>(reps)));
        rep.errors.push_back(errors);
        rep.band_pass.push_back(rate <= rep.band);
        if (errors > 0) {
            rep.warnings.push_back("n=" + std::to_string(n_values[c]) + ": " + std::to_string(errors) +
                                   " run(s) failed and were counted as non-rejections (first: " + first_error + ")");
        }
    }
    return rep;
}

inline RejectionReport rejection_rate(const ModelSpec& spec, const TestConfig& config,
                                      const std::vector<std::size_t>& n_values, std::size_t reps, double alpha,
                                      std::uint64_t seed) {
    return rejection_rate(spec, config.tag(), make_test(config), n_values, reps, alpha, seed);
}

}  // namespace gcm
