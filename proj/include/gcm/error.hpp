#pragma once

#include <stdexcept>
#include <string>

namespace gcm {

/// Bad shapes, out-of-range parameters, non-finite data.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The residual products have (numerically) zero variance, or a sample is
/// too small for the requested procedure.
class DegenerateStatistic : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear-algebra failure (eigensolver did not converge, asymmetric Gram).
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace gcm
