#pragma once

// Closed-form per-mode controllers for translation-invariant grids (rings and
// tori), their stationary variances, Parseval aggregation by quadrature, the
// asymptotic constants and the regime-dependent choice of Lagrange weights.

#include "gridstore/errors.hpp"
#include "gridstore/gaussian.hpp"
#include "gridstore/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace gridstore {

inline constexpr double kInfiniteXi = std::numeric_limits<double>::infinity();

/// One Fourier mode of a ring (dimension 1) or torus (dimension 2).
struct FourierMode {
    std::array<double, 2> theta{0.0, 0.0};
    int dimension = 1;
    double alpha_sq = 0.0;
};

inline double alpha_sq_of(int dimension, std::array<double, 2> theta) {
    return dimension == 1 ? 2.0 - 2.0 * std::cos(theta[0]) : 4.0 - 2.0 * std::cos(theta[0]) - 2.0 * std::cos(theta[1]);
}

/// Discrete modes of the periodic grid built by make_grid(dimension, side, ...),
/// ordered like the DFT (index j, or j1*side + j2 in 2-D) with θ folded into
/// [-π, π]. The zero mode is left out unless `include_zero` is set.
inline std::vector<FourierMode> grid_modes(int dimension, std::size_t side, bool include_zero = false) {
    if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
    auto angle = [side](std::size_t j) {
        double t = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(side);
        return t > std::numbers::pi ? t - 2.0 * std::numbers::pi : t;
    };
    std::vector<FourierMode> modes;
    const std::size_t count = dimension == 1 ? side : side * side;
    for (std::size_t idx = 0; idx < count; ++idx) {
        if (idx == 0 && !include_zero) continue;
        FourierMode m;
        m.dimension = dimension;
        m.theta = dimension == 1 ? std::array<double, 2>{angle(idx), 0.0}
                                 : std::array<double, 2>{angle(idx / side), angle(idx % side)};
        m.alpha_sq = alpha_sq_of(dimension, m.theta);
        if (idx == 0) m.alpha_sq = 0.0;
        modes.push_back(m);
    }
    return modes;
}

/// Per-mode linear law  Y = h·Z − k·B,  W = p·Z + q·B.
struct ModeFilter {
    double alpha_sq = 0.0;
    double beta = 0.0;
    double h = 0.0;
    double k = 1.0;
    double p = 0.0;
    double q = 0.0;
};

inline void check_weights(double gamma, double xi) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be positive and finite");
    if (!(xi > 0.0)) throw ParameterError("xi must be positive (or infinite for no storage)");
}

/// Optimal filter of one mode; `xi = kInfiniteXi` gives the no-storage limit
/// h = 0, k = 1, p = q = γ/(γ + α²).
inline ModeFilter optimal_mode_filter(double alpha_sq, double gamma, double xi) {
    check_weights(gamma, xi);
    if (!(alpha_sq >= 0.0)) throw ParameterError("alpha² must be non-negative");
    ModeFilter f;
    f.alpha_sq = alpha_sq;
    const double lowpass = gamma / (gamma + alpha_sq);
    f.beta = std::isinf(xi) ? 0.0 : lowpass / xi;
    const double root = std::sqrt(4.0 * f.beta + 1.0);
    // Rationalised forms of (r−1)/2β and (2β+1−r)/2β; no cancellation at small β.
    f.k = 2.0 / (root + 1.0);
    f.h = 4.0 * f.beta / ((root + 1.0) * (root + 1.0));
    f.p = lowpass * f.k;
    f.q = f.p;
    return f;
}

struct FilterSet {
    double gamma = 0.0;
    double xi = kInfiniteXi;
    std::vector<FourierMode> modes;
    std::vector<ModeFilter> filters;

    bool no_storage() const noexcept { return std::isinf(xi); }
    /// s = γ/ξ (zero in the no-storage limit).
    double s() const noexcept { return no_storage() ? 0.0 : gamma / xi; }
    double min_k() const {
        double m = 1.0;
        for (const auto& f : filters) m = std::min(m, f.k);
        return m;
    }
};

inline FilterSet optimal_filters(const std::vector<FourierMode>& modes, double gamma, double xi) {
    check_weights(gamma, xi);
    FilterSet set;
    set.gamma = gamma;
    set.xi = xi;
    set.modes = modes;
    set.filters.reserve(modes.size());
    for (const auto& m : modes) set.filters.push_back(optimal_mode_filter(m.alpha_sq, gamma, xi));
    return set;
}

/// Stationary per-mode variances (energy²).
struct ModeVariance {
    double sigma_B_sq = 0.0;
    double sigma_F_sq = 0.0;
    double sigma_W_sq = 0.0;
};

inline constexpr double kDivisionGuard = 1e-14;

/// Variances produced by an arbitrary filter (h, k, p, q) on a mode.
inline ModeVariance filter_variances(double alpha_sq, double h, double k, double p, double q, double sigma_sq) {
    const double d = k * (2.0 - k);  // 1 − (1−k)²
    double storage_gain = 0.0;       // h² / (1 − (1−k)²)
    if (h != 0.0) {
        if (d < kDivisionGuard) {
            throw NumericError("storage variance diverges: 1-(1-k)^2 = " + std::to_string(d));
        }
        storage_gain = h * h / d;
    }
    ModeVariance v;
    v.sigma_B_sq = storage_gain * sigma_sq;
    v.sigma_W_sq = (p * p + storage_gain * q * q) * sigma_sq;
    const double flow_energy = (1.0 - h - p) * (1.0 - h - p) + storage_gain * (k - q) * (k - q);
    if (alpha_sq > 0.0) {
        v.sigma_F_sq = flow_energy / alpha_sq * sigma_sq;
    } else if (flow_energy > 1e-24) {
        throw NumericError("zero mode carries unbalanced injection");
    }
    return v;
}

/// Closed-form variances of the optimal filter of a mode.
inline ModeVariance optimal_variances(const ModeFilter& f, double gamma, double sigma_sq) {
    const double k = f.k;
    if (k * (2.0 - k) < kDivisionGuard) throw NumericError("storage variance diverges (k = 0)");
    const double ratio = k / (2.0 - k);  // k² / (1 − (1−k)²)
    const double denom = (gamma + f.alpha_sq) * (gamma + f.alpha_sq);
    ModeVariance v;
    v.sigma_B_sq = (1.0 - k) * (1.0 - k) / (k * (2.0 - k)) * sigma_sq;
    v.sigma_F_sq = f.alpha_sq / denom * ratio * sigma_sq;
    v.sigma_W_sq = gamma * gamma / denom * ratio * sigma_sq;
    return v;
}

/// Per-mode objective  σ_W² + ξ σ_B² + γ σ_F².
inline double mode_lagrangian(const ModeVariance& v, double gamma, double xi) {
    return v.sigma_W_sq + xi * v.sigma_B_sq + gamma * v.sigma_F_sq;
}

struct ModeVariances {
    double sigma_sq = 0.0;
    double mean = 0.0;
    std::vector<ModeVariance> per_mode;
};

inline ModeVariances mode_variances(const FilterSet& filters, double sigma_sq, double mean = 0.0) {
    if (!(sigma_sq >= 0.0)) throw ParameterError("sigma² must be non-negative");
    ModeVariances out;
    out.sigma_sq = sigma_sq;
    out.mean = mean;
    out.per_mode.reserve(filters.filters.size());
    for (const auto& f : filters.filters) out.per_mode.push_back(optimal_variances(f, filters.gamma, sigma_sq));
    return out;
}

/// Per-element stationary variances of the whole grid (Parseval average).
struct AggregateVariances {
    double sigma_B_sq = 0.0;
    double sigma_F_sq = 0.0;
    double sigma_W_sq = 0.0;
};

namespace detail {

inline std::array<double, 3> optimal_variance_triple(double alpha_sq, double gamma, double xi) {
    const ModeVariance v = optimal_variances(optimal_mode_filter(alpha_sq, gamma, xi), gamma, 1.0);
    return {v.sigma_B_sq, v.sigma_F_sq, v.sigma_W_sq};
}

inline double feature_scale(double gamma) { return std::sqrt(gamma); }

}  // namespace detail

/// Fixed-resolution aggregate (no refinement); used inside parameter searches.
inline AggregateVariances aggregate_variances_at(int dimension, double gamma, double xi, double sigma_sq,
                                                 std::size_t points_per_axis) {
    check_weights(gamma, xi);
    const double clustering = quadrature::clustering_for_scale(detail::feature_scale(gamma));
    const auto r = quadrature::average<3>(dimension, points_per_axis, clustering, [&](double a) {
        return detail::optimal_variance_triple(a, gamma, xi);
    });
    return {r[0] * sigma_sq, r[1] * sigma_sq, r[2] * sigma_sq};
}

inline constexpr double kQuadratureRelTol = 1e-6;

/// Parseval aggregation over [-π, π]^d, refined by doubling until the relative
/// change drops below 1e-6. `quadrature_points` is the starting number of
/// nodes in total: a power of two ≥ 2¹⁰ in 1-D, a square with side ≥ 2⁵ in 2-D.
inline AggregateVariances aggregate_variances(int dimension, double gamma, double xi, double sigma_sq,
                                              std::size_t quadrature_points = 1024) {
    check_weights(gamma, xi);
    if (!(sigma_sq >= 0.0)) throw ParameterError("sigma² must be non-negative");
    std::size_t start = 0;
    std::size_t max_points = 0;
    if (dimension == 1) {
        if (quadrature_points < 1024 || (quadrature_points & (quadrature_points - 1)) != 0) {
            throw ParameterError("1-D quadrature needs a power of two >= 1024 points");
        }
        start = quadrature_points;
        max_points = std::size_t{1} << 24;
    } else if (dimension == 2) {
        const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(quadrature_points))));
        if (side * side != quadrature_points || side < 32 || (side & (side - 1)) != 0) {
            throw ParameterError("2-D quadrature needs N² points with N a power of two >= 32");
        }
        start = side;
        max_points = 4096;
    } else {
        throw ParameterError("grid dimension must be 1 or 2");
    }
    const double clustering = quadrature::clustering_for_scale(detail::feature_scale(gamma));
    const auto r = quadrature::refine<3>(dimension, start, max_points, clustering, kQuadratureRelTol, [&](double a) {
        return detail::optimal_variance_triple(a, gamma, xi);
    });
    return {r[0] * sigma_sq, r[1] * sigma_sq, r[2] * sigma_sq};
}

enum class Constant { Omega1, Omega2, K2, GB, GF };

/// Ω_d = (2π)^-d ∫_{ℝ^d} (1 + |u|²)^{-3/2} du, reduced to a radial integral and
/// mapped to [0, π/2] by r = tan t.
inline double omega_constant(int dimension) {
    if (dimension != 1 && dimension != 2) throw ParameterError("Omega_d is defined for d = 1, 2");
    using boost::math::quadrature::gauss_kronrod;
    const double radial = dimension == 1
                              ? gauss_kronrod<double, 61>::integrate([](double t) { return std::cos(t); }, 0.0,
                                                                      std::numbers::pi / 2, 10, 1e-14)
                              : gauss_kronrod<double, 61>::integrate([](double t) { return std::sin(t); }, 0.0,
                                                                      std::numbers::pi / 2, 10, 1e-14);
    const double sphere = dimension == 1 ? 2.0 : 2.0 * std::numbers::pi;
    return sphere * radial / std::pow(2.0 * std::numbers::pi, dimension);
}

/// K₂ = ∫_{[-π,π]²} |α(θ)|⁻¹ dθ by the midpoint rule; the integrable
/// singularity at θ = 0 falls between nodes.
inline double k2_constant(std::size_t points_per_axis = 2048) {
    const auto r = quadrature::average<1>(2, points_per_axis, 0.0,
                                          [](double a) { return std::array<double, 1>{1.0 / std::sqrt(a)}; });
    return 4.0 * std::numbers::pi * std::numbers::pi * r[0];
}

/// γ → 0 limits of the normalised 2-D storage variances at fixed s = γ/ξ:
/// the filters reduce to β = s/α², leaving integrable |α|⁻¹ singularities.
inline std::array<double, 2> storage_limit_constants(double s, std::size_t points_per_axis = 2048) {
    if (!(s > 0.0)) throw ParameterError("G_B, G_F need s > 0");
    const auto r = quadrature::average<2>(2, points_per_axis, 0.0, [s](double a) {
        const double beta = s / a;
        const double k = 2.0 / (std::sqrt(4.0 * beta + 1.0) + 1.0);
        return std::array<double, 2>{(1.0 - k) * (1.0 - k) / (k * (2.0 - k)), k / (a * (2.0 - k))};
    });
    return {r[0], r[1]};
}

inline double compute_constant(Constant which, double s = 1.0, std::size_t points_per_axis = 2048) {
    switch (which) {
        case Constant::Omega1: return omega_constant(1);
        case Constant::Omega2: return omega_constant(2);
        case Constant::K2: return k2_constant(points_per_axis);
        case Constant::GB: return storage_limit_constants(s, points_per_axis)[0];
        case Constant::GF: return storage_limit_constants(s, points_per_axis)[1];
    }
    throw ParameterError("unknown constant");
}

/// Analytic upper bounds on the outage costs (energy per slot per element).
struct CostBound {
    double eps_F = 0.0;
    double eps_W = 0.0;
    double eps_tot = 0.0;
    double kappa = 1.0;
};

/// Gaussian bounds for κ = 1:
///   ε_F ≤ 2σ_F Q(C/σ_F),  ε_W ≤ σ_B Q(S/2σ_B) + σ_W Q(μ/σ_W).
/// Sub-Gaussian bounds for κ > 1 carry a √(2π) prefactor and √κ-deflated
/// arguments. A zero standard deviation contributes nothing.
inline CostBound cost_upper_bound(const AggregateVariances& v, double capacity, double storage, double mu,
                                  double kappa = 1.0) {
    if (!(v.sigma_B_sq >= 0.0) || !(v.sigma_F_sq >= 0.0) || !(v.sigma_W_sq >= 0.0)) {
        throw ParameterError("variances must be non-negative");
    }
    if (!(kappa >= 1.0)) throw ParameterError("kappa must be >= 1");
    const bool gaussian = kappa == 1.0;
    const double prefactor = gaussian ? 1.0 : std::sqrt(2.0 * std::numbers::pi);
    const double deflate = std::sqrt(kappa);
    auto term = [&](double sd, double threshold) {
        if (sd <= 0.0) return 0.0;
        return prefactor * sd * normal_tail(threshold / (deflate * sd));
    };
    CostBound b;
    b.kappa = kappa;
    b.eps_F = 2.0 * term(std::sqrt(v.sigma_F_sq), capacity);
    b.eps_W = term(std::sqrt(v.sigma_B_sq), storage / 2.0) + term(std::sqrt(v.sigma_W_sq), mu);
    b.eps_tot = b.eps_F + b.eps_W;
    return b;
}

enum class Regime {
    NoStorage1D,
    NoStorage2D,
    Storage1DTinyMu,
    Storage1DModerateMu,
    Storage2D,
};

inline std::string regime_name(Regime r) {
    switch (r) {
        case Regime::NoStorage1D: return "1d-no-storage";
        case Regime::NoStorage2D: return "2d-no-storage";
        case Regime::Storage1DTinyMu: return "1d-storage-tiny-mu";
        case Regime::Storage1DModerateMu: return "1d-storage-moderate-mu";
        case Regime::Storage2D: return "2d-storage";
    }
    return "unknown";
}

/// Lagrange weights chosen for a parameter point, with the constants that
/// enter the asymptotic variance formulas.
struct RegimeSelection {
    int dimension = 1;
    Regime regime = Regime::NoStorage1D;
    /// "formula" when the closed-form prescription applied, "search" when the
    /// weights came from minimising the analytic cost bound.
    std::string method = "formula";
    double gamma = 0.0;
    double s = 0.0;
    double xi = kInfiniteXi;
    double omega1 = 0.0;
    double omega2 = 0.0;
    double k2 = 0.0;
    double g_b = 0.0;
    double g_f = 0.0;

    std::string tag() const { return regime_name(regime) + "/" + method; }
};

namespace detail {

inline std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t count) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double e = lo_exp + (hi_exp - lo_exp) * static_cast<double>(i) / static_cast<double>(count - 1);
        v[i] = std::pow(10.0, e);
    }
    return v;
}

inline constexpr std::size_t kSearchPoints1D = 4096;
inline constexpr std::size_t kSearchPoints2D = 128;

inline double search_points(int dimension) {
    return static_cast<double>(dimension == 1 ? kSearchPoints1D : kSearchPoints2D);
}

// Minimises the analytic bound over γ on a log grid, then once more on a
// finer grid around the incumbent.
inline double search_gamma(int dimension, double xi_over_gamma_inv, bool no_storage, double C, double S, double mu,
                           double sigma_sq) {
    auto cost = [&](double gamma) {
        const double xi = no_storage ? kInfiniteXi : gamma / xi_over_gamma_inv;
        const auto v = aggregate_variances_at(dimension, gamma, xi, sigma_sq,
                                              static_cast<std::size_t>(search_points(dimension)));
        return cost_upper_bound(v, C, S, mu).eps_tot;
    };
    double best_gamma = 1.0;
    double best = std::numeric_limits<double>::infinity();
    for (double g : logspace(-8.0, 2.0, 41)) {
        const double c = cost(g);
        if (c < best) {
            best = c;
            best_gamma = g;
        }
    }
    const double centre = std::log10(best_gamma);
    for (double g : logspace(centre - 0.25, centre + 0.25, 21)) {
        const double c = cost(g);
        if (c < best) {
            best = c;
            best_gamma = g;
        }
    }
    return best_gamma;
}

}  // namespace detail

/// Picks (γ, s) for a grid of the given dimension:
///  - no storage, 1-D: γ = μ²/C²;
///  - no storage, 2-D: γ = (μ²/C²) log(C²/(eμ²));
///  - storage, 1-D: s = S²/4C², and γ = exp(−√(2πCS/σ²)) when
///    μ < exp(−√(CS/σ²)), otherwise γ = μ² log(C/μ)/(πΩ₁C²);
///  - storage, 2-D: (s, γ) minimising the analytic cost bound on a log grid.
/// Whenever a prescription is undefined (for instance μ = 0 without storage)
/// γ is found by minimising the analytic cost bound instead.
inline RegimeSelection select_regime(int dimension, double C, double S, double mu, double sigma_sq) {
    if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
    if (!(C > 0.0)) throw ParameterError("capacity C must be positive");
    if (!(S >= 0.0)) throw ParameterError("storage S must be non-negative");
    if (!(sigma_sq > 0.0)) throw ParameterError("sigma² must be positive");
    if (!(mu >= 0.0)) throw ParameterError("mu must be non-negative");

    RegimeSelection sel;
    sel.dimension = dimension;
    sel.omega1 = omega_constant(1);
    sel.omega2 = omega_constant(2);

    if (S == 0.0) {
        sel.regime = dimension == 1 ? Regime::NoStorage1D : Regime::NoStorage2D;
        sel.xi = kInfiniteXi;
        sel.s = 0.0;
        double gamma = 0.0;
        if (mu > 0.0) {
            const double r = mu * mu / (C * C);
            gamma = dimension == 1 ? r : r * std::log(1.0 / (std::numbers::e * r));
        }
        if (gamma > 0.0 && std::isfinite(gamma)) {
            sel.gamma = gamma;
        } else {
            sel.method = "search";
            sel.gamma = detail::search_gamma(dimension, 1.0, true, C, S, mu, sigma_sq);
        }
        return sel;
    }

    if (dimension == 1) {
        sel.s = S * S / (4.0 * C * C);
        const double threshold = std::exp(-std::sqrt(C * S / sigma_sq));
        double gamma = 0.0;
        if (mu < threshold) {
            sel.regime = Regime::Storage1DTinyMu;
            gamma = std::exp(-std::sqrt(2.0 * std::numbers::pi * C * S / sigma_sq));
        } else {
            sel.regime = Regime::Storage1DModerateMu;
            gamma = mu * mu * std::log(C / mu) / (std::numbers::pi * sel.omega1 * C * C);
        }
        if (gamma > 0.0 && std::isfinite(gamma)) {
            sel.gamma = gamma;
        } else {
            sel.method = "search";
            sel.gamma = detail::search_gamma(1, sel.s, false, C, S, mu, sigma_sq);
        }
        sel.xi = sel.gamma / sel.s;
        return sel;
    }

    // 2-D with storage: no closed-form prescription, search over (s, γ).
    sel.regime = Regime::Storage2D;
    sel.method = "search";
    auto cost = [&](double s, double gamma, std::size_t points) {
        const auto v = aggregate_variances_at(2, gamma, gamma / s, sigma_sq, points);
        return cost_upper_bound(v, C, S, mu).eps_tot;
    };
    double best = std::numeric_limits<double>::infinity();
    double best_s = 1.0;
    double best_gamma = 1.0;
    const auto axis = detail::logspace(-8.0, 2.0, 41);
    for (double s : axis) {
        for (double g : axis) {
            const double c = cost(s, g, detail::kSearchPoints2D);
            if (c < best) {
                best = c;
                best_s = s;
                best_gamma = g;
            }
        }
    }
    best = cost(best_s, best_gamma, 2 * detail::kSearchPoints2D);
    const double cs = std::log10(best_s);
    const double cg = std::log10(best_gamma);
    for (double s : detail::logspace(cs - 0.25, cs + 0.25, 11)) {
        for (double g : detail::logspace(cg - 0.25, cg + 0.25, 11)) {
            const double c = cost(s, g, 2 * detail::kSearchPoints2D);
            if (c < best) {
                best = c;
                best_s = s;
                best_gamma = g;
            }
        }
    }
    sel.s = best_s;
    sel.gamma = best_gamma;
    sel.xi = best_gamma / best_s;
    sel.k2 = k2_constant(1024);
    const auto g = storage_limit_constants(best_s, 1024);
    sel.g_b = g[0];
    sel.g_f = g[1];
    return sel;
}

}  // namespace gridstore
