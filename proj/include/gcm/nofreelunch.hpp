#pragma once

// Hard nulls for conditional-independence tests.
//
// The f_a family gives smooth nulls whose conditional means become
// unlearnable as a grows. The hiding sampler turns any distribution of
// (X, Y, Z) into a nearby one satisfying X ⟂ Y | Z: X is discretised, its
// binary digits are written into the low-order digits of Z, and fine
// uniform noise restores a density. X is then a (wild) function of Z plus
// independent noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "gcm/dataset.hpp"
#include "gcm/error.hpp"
#include "gcm/rng.hpp"

namespace gcm {

/// exp(-z²/2) sin(a z)
inline double f_a(double z, double a) { return std::exp(-0.5 * z * z) * std::sin(a * z); }

struct RkhsNormSq {
    double value = 0.0;      // +inf once a² > 700
    double log_value = 0.0;  // always finite
};

/// ‖f_a‖²_H = √(8π) (exp(a²) + exp(-a²)) for the Gaussian kernel with σ = 1.
inline RkhsNormSq rkhs_norm_sq(double a, double sigma = 1.0) {
    detail::require(sigma == 1.0, "rkhs_norm_sq: closed form is available for bandwidth 1 only");
    detail::require(std::isfinite(a), "rkhs_norm_sq: a must be finite");
    const double a2 = a * a;
    RkhsNormSq out;
    out.log_value = 0.5 * std::log(8.0 * std::numbers::pi) + a2 + std::log1p(std::exp(-2.0 * a2));
    out.value = a2 > 700.0 ? std::numeric_limits<double>::infinity()
                           : std::sqrt(8.0 * std::numbers::pi) * (std::exp(a2) + std::exp(-a2));
    return out;
}

// ---------------------------------------------------------------------------
// Digit embedding
// ---------------------------------------------------------------------------

/// Concatenates the t-bit digits 2^r·n_j into one integer:
/// 2^r Σ_j 2^{tj} n_{j+1}.
inline std::uint64_t embed_digits(std::span<const double> n_vec, int r, int t) {
    detail::require(!n_vec.empty(), "embed_digits: empty input");
    detail::require(r >= 0 && t >= 1 && static_cast<int>(n_vec.size()) * t <= 62,
                    "embed_digits: digit layout exceeds 62 bits");
    const double scale = std::ldexp(1.0, r);
    const std::uint64_t digit_max = (std::uint64_t{1} << t) - 1;
    std::uint64_t code = 0;
    for (std::size_t j = 0; j < n_vec.size(); ++j) {
        const double scaled = n_vec[j] * scale;
        detail::require(scaled == std::floor(scaled), "embed_digits: component is not on the 2^-r grid");
        detail::require(scaled >= 0.0 && scaled <= static_cast<double>(digit_max),
                        "embed_digits: component outside the digit range");
        code |= static_cast<std::uint64_t>(scaled) << (static_cast<std::uint64_t>(t) * j);
    }
    return code;
}

/// Inverse of embed_digits: n_j = (⌊code / 2^{t j}⌋ mod 2^t) / 2^r.
inline std::vector<double> extract_digits(std::uint64_t code, int d, int r, int t) {
    detail::require(d >= 1 && t >= 1 && d * t <= 62, "extract_digits: digit layout exceeds 62 bits");
    const std::uint64_t mask = (std::uint64_t{1} << t) - 1;
    std::vector<double> out(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(j)] = std::ldexp(static_cast<double>((code >> (t * j)) & mask), -r);
    return out;
}

/// Derived grid parameters for the hiding construction.
struct HidingSpec {
    double epsilon = 0.1;
    double delta = 0.05;
    std::size_t n_target = 100;
    double m2 = 4.0;  // clip bound
    int d = 1;        // number of hidden coordinates
    int r = 0;        // grid 2^-r
    int t = 0;        // digit width
    double offset = 0.0;          // shift making hidden coordinates nonnegative
    std::uint64_t perm_seed = 0;  // 0 = identity embedding

    std::uint64_t K() const { return std::uint64_t{1} << (d * t); }
    double grid() const { return std::ldexp(1.0, -r); }
    /// Spacing of the embedded grid 2^-r K^-2.
    double fine_grid() const { return std::ldexp(1.0, -r - 2 * d * t); }

    /// r: smallest with 2^-r < min(ε/3, 1/n). t: smallest with
    /// 2^t > 2^r·max(1, 2·offset), so shifted values fit in t bits.
    static HidingSpec derive(double epsilon, double delta, std::size_t n_target, double m2, int d = 1,
                             std::uint64_t perm_seed = 0) {
        detail::require(epsilon > 0.0 && std::isfinite(epsilon), "HidingSpec: epsilon must be positive");
        detail::require(delta > 0.0 && delta < 1.0, "HidingSpec: delta must lie in (0, 1)");
        detail::require(n_target >= 1, "HidingSpec: n_target must be positive");
        detail::require(m2 > 0.0 && std::isfinite(m2), "HidingSpec: clip bound must be positive");
        detail::require(d >= 1, "HidingSpec: d must be positive");
        HidingSpec s;
        s.epsilon = epsilon;
        s.delta = delta;
        s.n_target = n_target;
        s.m2 = m2;
        s.d = d;
        s.perm_seed = perm_seed;
        const double target = std::min(epsilon / 3.0, 1.0 / static_cast<double>(n_target));
        while (std::ldexp(1.0, -s.r) >= target) ++s.r;
        s.offset = std::ldexp(std::ceil(std::ldexp(m2, s.r)), -s.r);
        const double span = std::ldexp(std::max(1.0, 2.0 * s.offset), s.r);
        while (std::ldexp(1.0, s.t) <= span) ++s.t;
        s.check_precision();
        return s;
    }

    /// Fine-grid coordinates of values up to the clip bound must stay exact
    /// in a double.
    void check_precision() const {
        detail::require(d * t <= 26, "HidingSpec: embedding base K = 2^(d t) too large");
        const double units = std::ldexp(std::max(1.0, m2 + offset + 1.0), r + 2 * d * t);
        detail::require(units < std::ldexp(1.0, 52),
                        "HidingSpec: grid too fine for double precision (reduce epsilon, n_target or M2)");
    }
};

/// The m-th embedding: N̊_m = ((N̊ + E) mod K) + K·π_m(E), with π_m a
/// permutation of {0, ..., K-1} drawn from perm_seed (identity for 0).
class DigitEmbedding {
public:
    explicit DigitEmbedding(const HidingSpec& spec) : K_(spec.K()) {
        if (spec.perm_seed == 0) return;
        perm_.resize(K_);
        std::iota(perm_.begin(), perm_.end(), std::uint64_t{0});
        Rng rng(spec.perm_seed, Stream::hide, ~std::uint64_t{0});
        for (std::uint64_t i = K_ - 1; i > 0; --i) std::swap(perm_[i], perm_[rng.uniform_int(i + 1)]);
        inverse_.resize(K_);
        for (std::uint64_t i = 0; i < K_; ++i) inverse_[perm_[i]] = i;
    }

    std::uint64_t K() const { return K_; }

    std::uint64_t mix(std::uint64_t code, std::uint64_t e) const {
        detail::require(code < K_ && e < K_, "DigitEmbedding: code or offset out of range");
        return (code + e) % K_ + K_ * pi(e);
    }

    /// (code, e) from a mixed value.
    std::pair<std::uint64_t, std::uint64_t> unmix(std::uint64_t mixed) const {
        detail::require(mixed < K_ * K_, "DigitEmbedding: mixed value out of range");
        const std::uint64_t e = pi_inverse(mixed / K_);
        return {(mixed % K_ + K_ - e) % K_, e};
    }

private:
    std::uint64_t pi(std::uint64_t e) const { return perm_.empty() ? e : perm_[e]; }
    std::uint64_t pi_inverse(std::uint64_t v) const { return inverse_.empty() ? v : inverse_[v]; }

    std::uint64_t K_;
    std::vector<std::uint64_t> perm_, inverse_;
};

/// w + 2^-r K^-2 · mixed
inline double hide_code(double w_last, std::uint64_t mixed, int r, std::uint64_t K) {
    detail::require(mixed < K * K, "hide_code: embedded value must be below K^2");
    return w_last + std::ldexp(static_cast<double>(mixed), -r) / (static_cast<double>(K) * static_cast<double>(K));
}

/// Inverse of hide_code for values on the fine grid: (w_last, mixed).
inline std::pair<double, std::uint64_t> recover_code(double w_hidden, int r, std::uint64_t K) {
    const double w_last = std::ldexp(std::floor(std::ldexp(w_hidden, r)), -r);
    const double units = std::ldexp(w_hidden - w_last, r) * static_cast<double>(K) * static_cast<double>(K);
    const double rounded = std::round(units);
    if (std::fabs(units - rounded) > 0.25)
        throw InvalidInput("recover: value is off the embedding grid");
    detail::require(rounded < static_cast<double>(K) * static_cast<double>(K), "recover: value is off the embedding grid");
    return {w_last, static_cast<std::uint64_t>(rounded)};
}

struct Recovered {
    double w_last = 0.0;
    std::vector<double> n_vec;  // grid values, offset removed
    std::uint64_t e = 0;
};

/// Embeds the grid vector n_vec (entries in [-offset, offset]) into w_last
/// using embedding offset e.
inline double hide(double w_last, std::span<const double> n_vec, std::uint64_t e, const HidingSpec& spec,
                   const DigitEmbedding& embedding) {
    detail::require(static_cast<int>(n_vec.size()) == spec.d, "hide: n_vec must have d entries");
    detail::require(std::ldexp(w_last, spec.r) == std::floor(std::ldexp(w_last, spec.r)),
                    "hide: w_last is not on the 2^-r grid");
    std::vector<double> shifted(n_vec.begin(), n_vec.end());
    for (auto& v : shifted) v += spec.offset;
    const std::uint64_t code = embed_digits(shifted, spec.r, spec.t);
    return hide_code(w_last, embedding.mix(code, e), spec.r, spec.K());
}

/// Draws the embedding offset e uniformly from {0, ..., K-1}.
inline double hide(double w_last, std::span<const double> n_vec, const HidingSpec& spec,
                   const DigitEmbedding& embedding, Rng& rng) {
    return hide(w_last, n_vec, rng.uniform_int(spec.K()), spec, embedding);
}

inline Recovered recover(double w_hidden, const HidingSpec& spec, const DigitEmbedding& embedding) {
    const auto [w_last, mixed] = recover_code(w_hidden, spec.r, spec.K());
    const auto [code, e] = embedding.unmix(mixed);
    Recovered out;
    out.w_last = w_last;
    out.n_vec = extract_digits(code, spec.d, spec.r, spec.t);
    for (auto& v : out.n_vec) v -= spec.offset;
    out.e = e;
    return out;
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

using Triple = std::array<double, 3>;  // (x, y, z)
using TripleSampler = std::function<Triple(Rng&)>;

struct HiddenSample {
    Triple v_tilde{};
    Triple v_orig{};
    double x_ring = 0.0;
    bool recovered_ok = false;
    bool clipped = false;

    double linf_distance() const {
        double m = 0.0;
        for (std::size_t i = 0; i < 3; ++i) m = std::max(m, std::fabs(v_tilde[i] - v_orig[i]));
        return m;
    }
};

/// Empirical (1 - δ/(2n)) quantile of ‖V‖∞ over `draws` pilot draws.
inline double pilot_clip_bound(const TripleSampler& q_sampler, double delta, std::size_t n, Rng& rng,
                               std::size_t draws = 10000) {
    detail::require(draws >= 1 && n >= 1 && delta > 0.0 && delta < 1.0, "pilot_clip_bound: bad arguments");
    std::vector<double> norms(draws);
    for (auto& v : norms) {
        const Triple t = q_sampler(rng);
        v = std::max({std::fabs(t[0]), std::fabs(t[1]), std::fabs(t[2])});
    }
    std::sort(norms.begin(), norms.end());
    const double level = 1.0 - delta / (2.0 * static_cast<double>(n));
    auto idx = static_cast<std::size_t>(std::ceil(level * static_cast<double>(draws)));
    idx = std::clamp<std::size_t>(idx, 1, draws);
    return norms[idx - 1];
}

/// n draws from the hidden null built out of q_sampler (scalar X, Y, Z).
inline std::vector<HiddenSample> sample_hidden_null(const TripleSampler& q_sampler, const HidingSpec& spec,
                                                    std::size_t n, Rng& rng) {
    detail::require(spec.d == 1, "sample_hidden_null: scalar X only (d = 1)");
    spec.check_precision();
    const DigitEmbedding embedding(spec);
    const double grid = spec.grid();
    const double fine = spec.fine_grid();
    auto to_grid = [&](double v) { return std::ldexp(std::floor(std::ldexp(v, spec.r)), -spec.r); };

    std::vector<HiddenSample> out(n);
    for (auto& s : out) {
        const Triple v = q_sampler(rng);
        for (double c : v)
            if (!std::isfinite(c)) throw InvalidInput("sample_hidden_null: sampler produced a non-finite value");
        s.v_orig = v;
        Triple clipped_v;
        for (std::size_t i = 0; i < 3; ++i) {
            clipped_v[i] = std::clamp(v[i], -spec.m2, spec.m2);
            s.clipped = s.clipped || clipped_v[i] != v[i];
        }
        const double x_ring = to_grid(clipped_v[0]);
        const double y_ring = to_grid(clipped_v[1]);
        const double z_grid = to_grid(clipped_v[2]);
        const std::array<double, 1> hidden{x_ring};
        const std::uint64_t e = rng.uniform_int(spec.K());
        const double z_ring = hide(z_grid, hidden, e, spec, embedding);

        // Noise below the embedded digits; keep z̃ inside its fine cell.
        const double cell = std::floor(z_ring / fine);
        double z_tilde = (cell + rng.uniform()) * fine;
        if (std::floor(z_tilde / fine) != cell) z_tilde = std::nextafter((cell + 1.0) * fine, -HUGE_VAL);

        s.x_ring = x_ring;
        s.v_tilde = {x_ring + grid * rng.uniform(), y_ring + grid * rng.uniform(), z_tilde};

        const double truncated = std::floor(z_tilde / fine) * fine;
        try {
            const Recovered rec = recover(truncated, spec, embedding);
            s.recovered_ok = rec.n_vec[0] == x_ring && rec.e == e && rec.w_last == z_grid;
        } catch (const InvalidInput&) {
            s.recovered_ok = false;
        }
    }
    return out;
}

inline DataSet hidden_to_dataset(const std::vector<HiddenSample>& samples) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    Matrix x(n, 1), y(n, 1), z(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = samples[static_cast<std::size_t>(i)].v_tilde;
        x(i, 0) = v[0];
        y(i, 0) = v[1];
        z(i, 0) = v[2];
    }
    return DataSet(std::move(x), std::move(y), std::move(z));
}

/// Alternative with strong X-Y dependence and Z independent of both:
/// X ~ N(0,1), Y = X + noise_sd·N(0,1), Z ~ N(0,1).
inline TripleSampler dependent_alternative(double noise_sd = 0.1) {
    return [noise_sd](Rng& rng) {
        const double x = rng.normal();
        const double y = x + noise_sd * rng.normal();
        const double z = rng.normal();
        return Triple{x, y, z};
    };
}

/// Z = N_Z, X = f_a(Z) + N_X, Y = f_a(Z) + N_Y with standard normal noise.
inline DataSet nfl_null_model(double a, std::size_t n, Rng& rng) {
    detail::require(a > 0.0, "nfl_null_model: a must be positive");
    detail::require(n >= 2, "nfl_null_model: need n >= 2");
    const auto rows = static_cast<Eigen::Index>(n);
    Matrix x(rows, 1), y(rows, 1), z(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) {
        z(i, 0) = rng.normal();
        const double mean = f_a(z(i, 0), a);
        x(i, 0) = mean + rng.normal();
        y(i, 0) = mean + rng.normal();
    }
    return DataSet(std::move(x), std::move(y), std::move(z));
}

}  // namespace gcm
