#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gridstore {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid graph: disconnected, self-loops, parallel edges, bad weights.
class TopologyError : public Error {
public:
    using Error::Error;
};

/// Out-of-range or inconsistent scalar parameters.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Failure of a numerical kernel (eigen-solver, non-PD covariance, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Injections that do not add up to zero.
class BalanceError : public Error {
public:
    using Error::Error;
};

/// Vector or matrix with the wrong dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Iterative solver ran out of iterations.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double residual)
        : NumericError(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Linear system too ill-conditioned to trust.
class ConditioningError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Quadrature refinement did not settle.
class QuadratureError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Empty or otherwise unusable trace handed to an estimator.
class EstimationError : public Error {
public:
    using Error::Error;
};

/// Monte Carlo horizon too short to resolve the expected event rate.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Malformed text input (topology files, controller dumps, CSV, config).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration; carries every problem found, each
/// prefixed with its line number.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s;
        for (const auto& p : v) s += (s.empty() ? "" : "\n") + p;
        return s;
    }
    std::vector<std::string> problems_;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace gridstore
