#pragma once

// Periodic midpoint/trapezoid rules on [-π, π]^d.
//
// Nodes sit at cell centres, so θ = 0 is never sampled (the zero Fourier mode
// is excluded) and the rule stays spectrally accurate for smooth periodic
// integrands. An optional periodic change of variables θ = u - c·sin(u)
// clusters nodes around θ = 0 for integrands that peak there.

#include "gridstore/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace gridstore::quadrature {

/// Nodes and weights of the one-dimensional rule; weights sum to one.
struct PeriodicRule {
    std::vector<double> theta;
    std::vector<double> weight;
};

/// `clustering` in [0, 1): 0 gives the plain midpoint rule, values close to 1
/// pack nodes around θ = 0 with local density 1/(1 - clustering).
inline PeriodicRule periodic_rule(std::size_t points, double clustering = 0.0) {
    PeriodicRule rule;
    rule.theta.resize(points);
    rule.weight.resize(points);
    const double h = 2.0 * std::numbers::pi / static_cast<double>(points);
    for (std::size_t j = 0; j < points; ++j) {
        const double u = -std::numbers::pi + h * (static_cast<double>(j) + 0.5);
        rule.theta[j] = u - clustering * std::sin(u);
        rule.weight[j] = (1.0 - clustering * std::cos(u)) / static_cast<double>(points);
    }
    return rule;
}

/// Pairwise sum for a fixed, order-independent reduction.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 32) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

/// Clustering factor suited to an integrand whose features near θ = 0 have
/// width ~ `scale`.
inline double clustering_for_scale(double scale) {
    if (!(scale > 0.0) || scale >= 0.25) return 0.0;
    return 1.0 - 4.0 * scale;
}

/// Normalised average (2π)^-d ∫ f over [-π, π]^d of a vector-valued integrand
/// with `Width` components, for d = 1 or 2 and `points` nodes per axis.
template <std::size_t Width, class F>
std::array<double, Width> average(int dimension, std::size_t points, double clustering, F&& integrand) {
    const PeriodicRule rule = periodic_rule(points, clustering);
    std::array<double, Width> result{};
    if (dimension == 1) {
        std::array<std::vector<double>, Width> terms;
        for (auto& t : terms) t.resize(points);
        for (std::size_t j = 0; j < points; ++j) {
            const double a = 2.0 - 2.0 * std::cos(rule.theta[j]);
            const auto v = integrand(a);
            for (std::size_t c = 0; c < Width; ++c) terms[c][j] = rule.weight[j] * v[c];
        }
        for (std::size_t c = 0; c < Width; ++c) result[c] = pairwise_sum(terms[c].data(), points);
        return result;
    }
    if (dimension != 2) throw ParameterError("quadrature dimension must be 1 or 2");
    std::vector<double> axis(points);
    for (std::size_t j = 0; j < points; ++j) axis[j] = 2.0 - 2.0 * std::cos(rule.theta[j]);
    std::array<std::vector<double>, Width> rows;
    for (auto& r : rows) r.resize(points);
    std::array<std::vector<double>, Width> row_terms;
    for (auto& t : row_terms) t.resize(points);
    for (std::size_t i = 0; i < points; ++i) {
        for (std::size_t j = 0; j < points; ++j) {
            const auto v = integrand(axis[i] + axis[j]);
            for (std::size_t c = 0; c < Width; ++c) row_terms[c][j] = rule.weight[j] * v[c];
        }
        for (std::size_t c = 0; c < Width; ++c) rows[c][i] = rule.weight[i] * pairwise_sum(row_terms[c].data(), points);
    }
    for (std::size_t c = 0; c < Width; ++c) result[c] = pairwise_sum(rows[c].data(), points);
    return result;
}

/// Repeats `average` with doubled resolution until every component changes
/// by less than `rel_tol` (relative), or throws QuadratureError once
/// `max_points` is exceeded.
template <std::size_t Width, class F>
std::array<double, Width> refine(int dimension, std::size_t start_points, std::size_t max_points, double clustering,
                                 double rel_tol, F&& integrand) {
    std::size_t n = start_points;
    auto previous = average<Width>(dimension, n, clustering, integrand);
    while (true) {
        n *= 2;
        if (n > max_points) {
            throw QuadratureError("quadrature did not settle below relative change " + std::to_string(rel_tol) +
                                  " within " + std::to_string(max_points) + " points per axis");
        }
        auto current = average<Width>(dimension, n, clustering, integrand);
        bool settled = true;
        for (std::size_t c = 0; c < Width; ++c) {
            const double scale = std::max(std::abs(current[c]), 1e-300);
            if (std::abs(current[c] - previous[c]) > rel_tol * scale) settled = false;
        }
        if (settled) return current;
        previous = current;
    }
}

}  // namespace gridstore::quadrature
