#pragma once

#include <cmath>
#include <numbers>

namespace gridstore {

/// Standard normal density.
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal upper tail Q(x) = P{N(0,1) > x}.
inline double normal_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double normal_cdf(double x) { return normal_tail(-x); }

/// E[(X - c)_+] for X ~ N(mean, sd²).
inline double normal_partial_expectation(double mean, double sd, double c) {
    if (sd <= 0.0) return std::max(mean - c, 0.0);
    const double x = (c - mean) / sd;
    return sd * (normal_pdf(x) - x * normal_tail(x));
}

}  // namespace gridstore
