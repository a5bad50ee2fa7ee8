#pragma once

// Cutset lower bounds on the outage cost, the oriented-path statistic G(l)
// behind the 2-D conjecture, and numerical probes of the sub-Gaussian tail
// lemmas.

#include "gridstore/errors.hpp"
#include "gridstore/gaussian.hpp"
#include "gridstore/network.hpp"
#include "gridstore/simulation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace gridstore {

// ---------------------------------------------------------------------------
// Cutset bounds
// ---------------------------------------------------------------------------

/// Region of the (space-time) grid with its total boundary capacity.
struct CutRegion {
    std::size_t nodes = 1;
    double boundary_capacity = 0.0;
    double mu = 0.0;
    double sigma_sq = 1.0;
    /// Spatial extent ℓ and temporal extent T; nodes = ℓ·T (ℓ counts grid
    /// nodes, so a 2-D single node has ℓ = 1).
    std::size_t length = 1;
    std::size_t duration = 1;

    void validate() const {
        if (nodes < 1) throw ParameterError("cut region needs at least one node");
        if (!(boundary_capacity >= 0.0)) throw ParameterError("boundary capacity must be >= 0");
        if (!(sigma_sq >= 0.0)) throw ParameterError("sigma² must be >= 0");
        if (nodes != length * duration) throw ParameterError("region size must equal length × duration");
    }

    /// ℓ consecutive nodes of a ring during one slot: two cut edges.
    static CutRegion segment(std::size_t length, double C, double mu, double sigma_sq) {
        return {length, 2.0 * C, mu, sigma_sq, length, 1};
    }

    /// ℓ×T rectangle of the 1-D space-time grid: 2T space-edges of capacity
    /// C and 2ℓ time-edges of capacity S/2.
    static CutRegion space_time(std::size_t length, std::size_t duration, double C, double S, double mu,
                                double sigma_sq) {
        const double l = static_cast<double>(length);
        const double t = static_cast<double>(duration);
        return {length * duration, 2.0 * (l * S / 2.0 + t * C), mu, sigma_sq, length, duration};
    }

    /// One torus node over T slots: 4T space-edges of capacity C and two
    /// time-edges of capacity S/2.
    static CutRegion torus_node(std::size_t duration, double C, double S, double mu, double sigma_sq) {
        return {duration, 4.0 * C * static_cast<double>(duration) + S, mu, sigma_sq, 1, duration};
    }
};

/// E[(D − c)₊]/n with D ~ N(−nμ, nσ²) the net demand of the region.
inline double cutset_lower_bound(const CutRegion& region) {
    region.validate();
    const double n = static_cast<double>(region.nodes);
    return normal_partial_expectation(-n * region.mu, std::sqrt(n * region.sigma_sq), region.boundary_capacity) / n;
}

/// P{D > c} for the region's net demand.
inline double cutset_event_probability(const CutRegion& region) {
    region.validate();
    const double n = static_cast<double>(region.nodes);
    const double sd = std::sqrt(n * region.sigma_sq);
    const double gap = region.boundary_capacity + n * region.mu;
    if (sd == 0.0) return gap < 0.0 ? 1.0 : 0.0;
    return normal_tail(gap / sd);
}

struct BoundReport {
    int dimension = 1;
    std::string regime;
    CutRegion region;
    /// Real-valued region extents before rounding.
    double prescribed_length = 1.0;
    double prescribed_duration = 1.0;
    /// Bound at the rounded prescribed region.
    double prescribed_value = 0.0;
    /// Largest bound over the scanned regions; a lower bound on
    /// ε_W + multiplier·ε_F, hence on multiplier·ε_tot.
    double value = 0.0;
    double event_probability = 0.0;
    /// 2 on the ring (each segment or rectangle has cut edges on two sides
    /// per slot), 4 on the torus (four edges per node, two edges per node).
    double multiplier = 2.0;

    double eps_tot_lower() const { return value / multiplier; }
};

namespace detail {

inline std::vector<std::size_t> rounding_scan(double x) {
    const auto lo = static_cast<long>(std::floor(x)) - 1;
    const auto hi = static_cast<long>(std::ceil(x)) + 1;
    std::vector<std::size_t> v;
    for (long i = std::max(1L, lo); i <= std::max(1L, hi); ++i) v.push_back(static_cast<std::size_t>(i));
    return v;
}

inline std::size_t round_extent(double x) { return static_cast<std::size_t>(std::max(1.0, std::round(x))); }

}  // namespace detail

inline constexpr double kMaxRegionExtent = 1e7;

/// Cutset bound over the region the lower-bound argument prescribes for the
/// regime, improved by scanning integer extents ±1 around it:
///  - ring without storage: segment of ℓ = min(C/μ, C²/σ²) nodes;
///  - ring with storage: ℓ×T space-time rectangle, ℓ = max(C/S, 1), T = ℓS/C;
///  - torus: one node over T = max(1, S/C) slots (T = 1 without storage).
inline BoundReport regime_lower_bound(int dimension, double C, double S, double mu, double sigma) {
    if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
    if (!(C > 0.0)) throw ParameterError("capacity C must be positive");
    if (!(S >= 0.0)) throw ParameterError("storage S must be non-negative");
    if (!(mu >= 0.0)) throw ParameterError("mu must be non-negative");
    if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
    const double var = sigma * sigma;

    BoundReport r;
    r.dimension = dimension;
    std::vector<CutRegion> candidates;
    CutRegion prescribed;
    if (dimension == 1 && S == 0.0) {
        r.regime = "1d-no-storage";
        const double l = mu > 0.0 ? std::min(C / mu, C * C / var) : C * C / var;
        r.prescribed_length = std::min(l, kMaxRegionExtent);
        prescribed = CutRegion::segment(detail::round_extent(r.prescribed_length), C, mu, var);
        for (auto len : detail::rounding_scan(r.prescribed_length)) {
            candidates.push_back(CutRegion::segment(len, C, mu, var));
        }
    } else if (dimension == 1) {
        r.regime = "1d-storage";
        const double l = std::max(C / S, 1.0);
        r.prescribed_length = std::min(l, kMaxRegionExtent);
        r.prescribed_duration = std::min(l * S / C, kMaxRegionExtent);
        prescribed = CutRegion::space_time(detail::round_extent(r.prescribed_length),
                                           detail::round_extent(r.prescribed_duration), C, S, mu, var);
        for (auto len : detail::rounding_scan(r.prescribed_length)) {
            for (auto dur : detail::rounding_scan(r.prescribed_duration)) {
                candidates.push_back(CutRegion::space_time(len, dur, C, S, mu, var));
            }
        }
    } else {
        r.regime = S == 0.0 ? "2d-no-storage" : "2d-storage";
        r.multiplier = 4.0;
        r.prescribed_duration = std::min(std::max(1.0, S / C), kMaxRegionExtent);
        prescribed = CutRegion::torus_node(detail::round_extent(r.prescribed_duration), C, S, mu, var);
        for (auto dur : detail::rounding_scan(r.prescribed_duration)) {
            candidates.push_back(CutRegion::torus_node(dur, C, S, mu, var));
        }
    }
    r.prescribed_value = cutset_lower_bound(prescribed);
    r.region = prescribed;
    r.value = r.prescribed_value;
    for (const auto& c : candidates) {
        const double v = cutset_lower_bound(c);
        if (v > r.value) {
            r.value = v;
            r.region = c;
        }
    }
    r.event_probability = cutset_event_probability(r.region);
    return r;
}

// ---------------------------------------------------------------------------
// Oriented paths
// ---------------------------------------------------------------------------

/// Maximum of Σ_{v∈A} X_v over the sets A = {(i, j) : i < h(j)} cut off below
/// a nondecreasing column-height profile 0 ≤ h(0) ≤ … ≤ h(l−1) ≤ l. Row 0 of
/// X is the bottom row, column j is the j-th column. O(l²).
inline double oriented_path_max(const Matrix& X) {
    const Index l = X.rows();
    if (l < 1 || X.cols() != l) throw ShapeError("oriented-path instance must be a non-empty square");
    // best[h] = best sum over columns 0..j with the profile ending at height ≤ h.
    std::vector<double> best(static_cast<std::size_t>(l + 1), 0.0);
    std::vector<double> col(static_cast<std::size_t>(l + 1));
    for (Index j = 0; j < l; ++j) {
        col[0] = 0.0;
        for (Index i = 0; i < l; ++i) col[static_cast<std::size_t>(i + 1)] = col[static_cast<std::size_t>(i)] + X(i, j);
        double running = -std::numeric_limits<double>::infinity();
        for (std::size_t h = 0; h <= static_cast<std::size_t>(l); ++h) {
            running = std::max(running, best[h]);
            best[h] = running + col[h];
        }
    }
    return std::max(0.0, *std::max_element(best.begin(), best.end()));
}

/// Exhaustive enumeration of all nondecreasing profiles; exponential in l.
inline double oriented_path_brute_force(const Matrix& X) {
    const Index l = X.rows();
    if (l < 1 || X.cols() != l) throw ShapeError("oriented-path instance must be a non-empty square");
    if (l > 10) throw ParameterError("brute force limited to l <= 10");
    std::vector<Index> h(static_cast<std::size_t>(l), 0);
    double best = -std::numeric_limits<double>::infinity();
    for (;;) {
        double s = 0.0;
        for (Index j = 0; j < l; ++j) {
            for (Index i = 0; i < h[static_cast<std::size_t>(j)]; ++i) s += X(i, j);
        }
        best = std::max(best, s);
        // Next nondecreasing profile in lexicographic order from the right.
        Index j = l - 1;
        while (j >= 0 && h[static_cast<std::size_t>(j)] == l) --j;
        if (j < 0) break;
        const Index v = h[static_cast<std::size_t>(j)] + 1;
        for (Index k = j; k < l; ++k) h[static_cast<std::size_t>(k)] = v;
    }
    return best;
}

/// Standard normal l×l instance for stream (seed, l, sample).
inline Matrix oriented_path_instance(std::size_t l, std::uint64_t seed, std::uint64_t sample) {
    if (l < 1) throw ParameterError("side l must be >= 1");
    Engine engine(derive_seed(seed, l, sample));
    std::normal_distribution<double> d;
    Matrix X(static_cast<Index>(l), static_cast<Index>(l));
    for (Index j = 0; j < X.cols(); ++j) {
        for (Index i = 0; i < X.rows(); ++i) X(i, j) = d(engine);
    }
    return X;
}

inline double oriented_path_G(std::size_t l, const RngState& state) {
    return oriented_path_max(oriented_path_instance(l, state.seed, state.slot));
}

struct ConjecturePoint {
    std::size_t l = 0;
    /// Sample mean of G(l)/l and its standard error.
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;
};

inline std::vector<ConjecturePoint> conjecture_curve(const std::vector<std::size_t>& l_values, std::size_t samples,
                                                     std::uint64_t seed) {
    if (samples < 100) throw ParameterError("conjecture curve needs at least 100 samples per l");
    if (l_values.empty()) throw ParameterError("no side lengths given");
    std::vector<ConjecturePoint> out;
    for (std::size_t l : l_values) {
        double sum = 0.0;
        double sum_sq = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double g = oriented_path_G(l, {seed, 0, s}) / static_cast<double>(l);
            sum += g;
            sum_sq += g * g;
        }
        const double n = static_cast<double>(samples);
        const double mean = sum / n;
        const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
        out.push_back({l, mean, std::sqrt(var / n), samples});
    }
    return out;
}

/// Pearson correlation of the curve's means with log l.
inline double log_correlation(const std::vector<ConjecturePoint>& curve) {
    if (curve.size() < 2) throw ParameterError("correlation needs at least two points");
    const double n = static_cast<double>(curve.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : curve) {
        mx += std::log(static_cast<double>(p.l));
        my += p.mean;
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& p : curve) {
        const double dx = std::log(static_cast<double>(p.l)) - mx;
        const double dy = p.mean - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Tail lemmas
// ---------------------------------------------------------------------------

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Wilson score interval for a binomial proportion at z standard errors.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96) {
    if (trials == 0) throw ParameterError("Wilson interval needs at least one trial");
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct TailLemmaRow {
    std::size_t n = 0;
    /// P{Σ X_i ≥ γn}: exact for Gaussian summands, a Monte Carlo estimate
    /// otherwise.
    double tail = 0.0;
    Interval interval;
    double bound = 0.0;
    /// Gaussian: bound ≤ tail. Monte Carlo: bound ≤ interval.hi.
    bool pass = false;
    /// Whether the Monte Carlo interval excludes the bound; always true for
    /// exact tails.
    bool conclusive = true;
};

/// Compares (1/4) exp(−nγ²/(κ₂σ²)) with the tail of a sum of n i.i.d.
/// centred copies of `model`.
inline std::vector<TailLemmaRow> tail_lemma_check(const std::vector<std::size_t>& n_values, double gamma_over_sigma,
                                                  double kappa2, const GenerationModel& model,
                                                  std::size_t mc_samples = 20000, std::uint64_t seed = 1) {
    if (!(gamma_over_sigma >= 0.0 && gamma_over_sigma <= 1.0)) throw ParameterError("gamma/sigma must lie in [0, 1]");
    if (!(kappa2 > 0.0)) throw ParameterError("kappa2 must be positive");
    model.validate();
    if (!(model.variance > 0.0)) throw ParameterError("tail lemma needs a positive variance");
    const double sigma = model.sigma();
    std::vector<TailLemmaRow> rows;
    for (std::size_t n : n_values) {
        if (n < 1) throw ParameterError("n must be >= 1");
        const double nn = static_cast<double>(n);
        TailLemmaRow row;
        row.n = n;
        row.bound = 0.25 * std::exp(-nn * gamma_over_sigma * gamma_over_sigma / kappa2);
        if (model.family == Family::Gaussian) {
            row.tail = normal_tail(gamma_over_sigma * std::sqrt(nn));
            row.interval = {row.tail, row.tail};
            row.pass = row.bound <= row.tail;
        } else {
            if (mc_samples < 1) throw ParameterError("Monte Carlo check needs samples");
            const double threshold = gamma_over_sigma * sigma * nn;
            std::size_t hits = 0;
            for (std::size_t s = 0; s < mc_samples; ++s) {
                const Vector x = sample_generation(model, n, {seed, n, s});
                if (x.sum() - nn * model.mean >= threshold) ++hits;
            }
            row.tail = static_cast<double>(hits) / static_cast<double>(mc_samples);
            row.interval = wilson_interval(hits, mc_samples);
            row.pass = row.bound <= row.interval.hi;
            row.conclusive = row.bound < row.interval.lo || row.bound > row.interval.hi;
        }
        rows.push_back(row);
    }
    return rows;
}

struct MgfRow {
    double lambda = 0.0;
    /// log of the sample mean of e^{λ(X − EX)}, lowered by three standard
    /// errors of that mean.
    double empirical = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct MarkovTailRow {
    double a = 0.0;
    double frequency = 0.0;
    Interval interval;
    double bound = 0.0;
    bool pass = false;
};

struct CombinationCheck {
    double tail_param = 0.0;
    std::vector<MgfRow> mgf;
    std::vector<MarkovTailRow> tail;
    bool pass = false;
};

/// Draws a₁X₁ + a₂X₂ and checks the MGF bound with parameter a₁²s₁² + a₂²s₂²
/// on the λ grid, and P{X ≥ a + EX} ≤ exp(−a²/2s²) for a ∈ {1, 2, 3}·s.
inline CombinationCheck subgaussian_combination_check(const GenerationModel& first, const GenerationModel& second,
                                                      double a1, double a2, const std::vector<double>& lambda_grid,
                                                      std::size_t samples, std::uint64_t seed = 1) {
    first.validate();
    second.validate();
    if (samples < 2) throw ParameterError("combination check needs at least two samples");
    CombinationCheck out;
    out.tail_param = a1 * a1 * first.tail_param + a2 * a2 * second.tail_param;
    const double mean = a1 * first.mean + a2 * second.mean;
    const Vector x1 = sample_generation(first, samples, {seed, 0, 0});
    const Vector x2 = sample_generation(second, samples, {seed, 1, 0});
    const Vector x = (a1 * x1 + a2 * x2).array() - mean;
    const double n = static_cast<double>(samples);
    out.pass = true;
    for (double lambda : lambda_grid) {
        const Vector e = (lambda * x.array()).exp().matrix();
        const double m = e.mean();
        const double sd = std::sqrt((e.array() - m).square().sum() / (n - 1.0));
        MgfRow row;
        row.lambda = lambda;
        row.empirical = std::log(std::max(m - 3.0 * sd / std::sqrt(n), std::numeric_limits<double>::min()));
        row.bound = 0.5 * lambda * lambda * out.tail_param;
        row.pass = row.empirical <= row.bound;
        out.pass = out.pass && row.pass;
        out.mgf.push_back(row);
    }
    const double s = std::sqrt(out.tail_param);
    if (s > 0.0) {
        for (double k : {1.0, 2.0, 3.0}) {
            MarkovTailRow row;
            row.a = k * s;
            const auto hits = static_cast<std::size_t>((x.array() >= row.a).count());
            row.frequency = static_cast<double>(hits) / n;
            row.interval = wilson_interval(hits, samples, 3.0);
            row.bound = std::exp(-0.5 * k * k);
            row.pass = row.interval.lo <= row.bound;
            out.pass = out.pass && row.pass;
            out.tail.push_back(row);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Space-time mapping
// ---------------------------------------------------------------------------

struct SpaceTimeReport {
    /// Per-space-edge, per-slot line violation of the mapped flows.
    double eps_F_hat = 0.0;
    double eps_W = 0.0;
    /// Time-edges whose flow 𝔅(t+1) − S/2 exceeds S/2 in magnitude.
    long time_edge_violations = 0;
    double max_time_edge_excess = 0.0;
    /// Largest residual of Z − 𝒲 − 𝒴 against the net outflow over
    /// space- and time-edges.
    double max_balance_residual = 0.0;
    long slots = 0;
};

/// Maps the recorded first replica of a ring simulation onto the space-time
/// grid: space-edges carry ℱ(t), the time-edge from (v, t) to (v, t+1)
/// carries 𝔅_v(t+1) − S_v/2.
inline SpaceTimeReport space_time_mapping(const NetworkTopology& topology, const Trace& trace, long burn_in) {
    const std::size_t horizon = trace.F.size();
    if (horizon == 0 || trace.level.size() != horizon || trace.actual_Y.size() != horizon ||
        trace.actual_W.size() != horizon || trace.Z.size() != horizon) {
        throw EstimationError("trace is empty or inconsistent");
    }
    if (burn_in < 0 || static_cast<std::size_t>(burn_in) >= horizon) throw ParameterError("burn-in outside the trace");
    const Vector C = topology.capacities();
    const Vector S = topology.storage_vector();
    const Vector half_S = 0.5 * S;
    const Index n = S.size();
    const Index m = C.size();
    const auto& edges = topology.edges();

    SpaceTimeReport r;
    double f_sum = 0.0;
    double w_sum = 0.0;
    Vector outflow(n);
    for (std::size_t t = 0; t < horizon; ++t) {
        const Vector& level_next = t + 1 < horizon ? trace.level[t + 1] : Vector(trace.level[t] + trace.actual_Y[t]);
        const Vector up = level_next - half_S;
        const Vector down = trace.level[t] - half_S;
        for (Index i = 0; i < n; ++i) {
            const double excess = std::abs(up[i]) - half_S[i];
            r.max_time_edge_excess = std::max(r.max_time_edge_excess, excess);
            if (excess > kPhysicsTolerance * std::max(1.0, S[i])) ++r.time_edge_violations;
        }
        outflow = up - down;
        for (Index e = 0; e < m; ++e) {
            const auto& edge = edges[static_cast<std::size_t>(e)];
            outflow[static_cast<Index>(edge.from)] += trace.F[t][e];
            outflow[static_cast<Index>(edge.to)] -= trace.F[t][e];
        }
        const Vector residual = trace.Z[t] - trace.actual_W[t] - outflow;
        r.max_balance_residual = std::max(r.max_balance_residual, residual.cwiseAbs().maxCoeff());
        if (static_cast<long>(t) >= burn_in) {
            f_sum += line_violation(trace.F[t], C);
            w_sum += fast_generation_shortfall(trace.actual_W[t]);
        }
    }
    const double window = static_cast<double>(static_cast<long>(horizon) - burn_in);
    r.slots = static_cast<long>(horizon) - burn_in;
    r.eps_F_hat = f_sum / (window * static_cast<double>(m));
    r.eps_W = w_sum / (window * static_cast<double>(n));
    return r;
}

}  // namespace gridstore
