#pragma once

// Time-domain Monte Carlo of the surrogate controller on the real system:
// random net generation drives the virtual (unconstrained) processes, the
// virtual-to-actual map clips storage into [0, S] and hands the difference to
// fast generation, and the outage costs ε_F, ε_W are estimated from the
// actual processes.

#include "gridstore/errors.hpp"
#include "gridstore/gaussian.hpp"
#include "gridstore/network.hpp"
#include "gridstore/riccati.hpp"
#include "gridstore/spectral.hpp"

#if defined(GRIDSTORE_USE_FFTW) && !defined(EIGEN_FFTW_DEFAULT)
#define EIGEN_FFTW_DEFAULT
#endif

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gridstore {

// ---------------------------------------------------------------------------
// Net generation
// ---------------------------------------------------------------------------

enum class Family { Gaussian, BoundedUniform, TwoPoint, Custom };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::Gaussian: return "gaussian";
        case Family::BoundedUniform: return "uniform";
        case Family::TwoPoint: return "two-point";
        case Family::Custom: return "custom";
    }
    return "unknown";
}

using Engine = std::mt19937_64;

/// I.i.d. law of Z_i(t), with its sub-Gaussian tail parameter s².
struct GenerationModel {
    Family family = Family::Gaussian;
    double mean = 0.0;
    double variance = 1.0;
    double tail_param = 1.0;
    /// Upper end of the admissible class, κ = s²/σ² < kappa_bound.
    double kappa_bound = 16.0;
    /// Draws one sample of Z for Family::Custom; its law must have the
    /// declared mean and variance.
    std::function<double(Engine&)> sampler;

    static GenerationModel gaussian(double mean, double variance) {
        GenerationModel g;
        g.family = Family::Gaussian;
        g.mean = mean;
        g.variance = variance;
        g.tail_param = variance;
        g.validate();
        return g;
    }

    /// Uniform on [a, b]: σ² = (b−a)²/12, s² = (b−a)²/4.
    static GenerationModel bounded_uniform(double a, double b) {
        if (!(b > a)) throw ParameterError("uniform family needs a < b");
        GenerationModel g;
        g.family = Family::BoundedUniform;
        g.mean = 0.5 * (a + b);
        g.variance = (b - a) * (b - a) / 12.0;
        g.tail_param = (b - a) * (b - a) / 4.0;
        g.validate();
        return g;
    }

    /// mean ± σ with probability 1/2 each; s² = σ².
    static GenerationModel two_point(double mean, double variance) {
        GenerationModel g;
        g.family = Family::TwoPoint;
        g.mean = mean;
        g.variance = variance;
        g.tail_param = variance;
        g.validate();
        return g;
    }

    static GenerationModel custom(double mean, double variance, double tail_param,
                                  std::function<double(Engine&)> sampler) {
        GenerationModel g;
        g.family = Family::Custom;
        g.mean = mean;
        g.variance = variance;
        g.tail_param = tail_param;
        g.sampler = std::move(sampler);
        g.validate();
        return g;
    }

    double sigma() const { return std::sqrt(variance); }

    /// κ = s²/σ², taken as 1 for a deterministic model.
    double kappa() const { return variance > 0.0 ? tail_param / variance : 1.0; }

    void validate() const {
        if (!std::isfinite(mean)) throw ParameterError("generation mean must be finite");
        if (!(variance >= 0.0) || !std::isfinite(variance)) throw ParameterError("generation variance must be >= 0");
        if (!(tail_param >= 0.0)) throw ParameterError("tail parameter must be >= 0");
        const double k = kappa();
        if (!(k >= 1.0 - 1e-12)) throw ParameterError("tail parameter below the variance (kappa < 1)");
        if (!(k < kappa_bound)) throw ParameterError("kappa = " + std::to_string(k) + " outside the admissible class");
        if (family == Family::Custom && !sampler) throw ParameterError("custom family needs a sampler");
    }
};

/// Seed for the (replica, slot) stream, derived from the master seed by a
/// splitmix64-style mix so that any replica or slot can be generated alone.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replica, std::uint64_t slot) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ replica) ^ slot);
}

/// Position in the counter-based random stream.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
    std::uint64_t slot = 0;
};

/// `count` i.i.d. draws for one (replica, slot); element i is the i-th draw
/// of that stream.
inline Vector sample_generation(const GenerationModel& model, std::size_t count, const RngState& state) {
    model.validate();
    Vector out(static_cast<Index>(count));
    Engine engine(derive_seed(state.seed, state.replica, state.slot));
    const double sd = model.sigma();
    if (sd == 0.0 && model.family != Family::Custom) {
        out.setConstant(model.mean);
        return out;
    }
    switch (model.family) {
        case Family::Gaussian: {
            std::normal_distribution<double> d(model.mean, sd);
            for (auto& v : out) v = d(engine);
            break;
        }
        case Family::BoundedUniform: {
            const double half = std::sqrt(3.0) * sd;
            std::uniform_real_distribution<double> d(model.mean - half, model.mean + half);
            for (auto& v : out) v = d(engine);
            break;
        }
        case Family::TwoPoint: {
            std::bernoulli_distribution d(0.5);
            for (auto& v : out) v = d(engine) ? model.mean + sd : model.mean - sd;
            break;
        }
        case Family::Custom:
            for (auto& v : out) v = model.sampler(engine);
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

/// Linear feedback law plus the DC flow solve, applied once per slot.
class Controller {
public:
    virtual ~Controller() = default;

    virtual Index nodes() const = 0;
    virtual Index edges() const = 0;

    /// Storage transfer Y and fast generation W for net generation z and
    /// virtual storage deviation b.
    virtual void act(const Vector& z, const Vector& b, Vector& Y, Vector& W) const = 0;

    /// Line flows −∇Δ⁻¹ x for a balanced injection x.
    virtual void flows(const Vector& injection, Vector& F) const = 0;

    /// act() followed by flows() of the resulting injection z − Y − W.
    virtual void step(const Vector& z, const Vector& b, Vector& Y, Vector& W, Vector& F) const {
        act(z, b, Y, W);
        flows(z - Y - W, F);
    }

    /// Smallest per-mode storage mixing rate.
    virtual double min_storage_rate() const = 0;

    /// Stationary per-element variances of virtual B, F (per edge) and W for
    /// driving variance σ².
    virtual AggregateVariances predicted_variances(double sigma_sq) const = 0;
};

/// Dense node-by-node gains from the Riccati solution of an arbitrary network.
class DenseController final : public Controller {
public:
    DenseController(LinearController law, FlowOperators ops)
        : law_(std::move(law)), ops_(std::move(ops)), flow_map_(ops_.flow_map()) {
        if (law_.H.rows() != ops_.nodes()) throw ShapeError("controller does not match the network");
    }

    Index nodes() const override { return ops_.nodes(); }
    Index edges() const override { return ops_.edges(); }

    void act(const Vector& z, const Vector& b, Vector& Y, Vector& W) const override {
        const Vector dev = z - law_.mean_z;
        Y.noalias() = law_.Y_bar + law_.H * dev - law_.K * b;
        W.noalias() = law_.W_bar + law_.P * dev + law_.Q * b;
    }

    void flows(const Vector& injection, Vector& F) const override { F.noalias() = flow_map_ * injection; }

    double min_storage_rate() const override {
        const Matrix transition = Matrix::Identity(nodes(), nodes()) - law_.K;
        Eigen::EigenSolver<Matrix> es(transition, false);
        return 1.0 - es.eigenvalues().cwiseAbs().maxCoeff();
    }

    AggregateVariances predicted_variances(double sigma_sq) const override {
        const Index n = nodes();
        const Matrix transition = Matrix::Identity(n, n) - law_.K;
        // Smith doubling for Σ_B = T Σ_B Tᵀ + σ² H Hᵀ.
        Matrix a = transition;
        Matrix cov = sigma_sq * law_.H * law_.H.transpose();
        for (int i = 0; i < 60; ++i) {
            const Matrix next = cov + a * cov * a.transpose();
            a = (a * a).eval();
            const bool done = (next - cov).cwiseAbs().maxCoeff() <= 1e-15 * std::max(1.0, next.cwiseAbs().maxCoeff());
            cov = next;
            if (done) break;
        }
        const Matrix I = Matrix::Identity(n, n);
        const Matrix cov_w = sigma_sq * law_.P * law_.P.transpose() + law_.Q * cov * law_.Q.transpose();
        const Matrix gz = I - law_.H - law_.P;
        const Matrix gb = law_.K - law_.Q;
        const Matrix cov_x = sigma_sq * gz * gz.transpose() + gb * cov * gb.transpose();
        const Matrix cov_f = flow_map_ * cov_x * flow_map_.transpose();
        return {cov.diagonal().mean(), cov_f.diagonal().mean(), cov_w.diagonal().mean()};
    }

    const LinearController& law() const noexcept { return law_; }

private:
    LinearController law_;
    FlowOperators ops_;
    Matrix flow_map_;
};

/// Closed-form per-mode filters on a ring or torus built by make_grid, applied
/// with FFTs. The zero mode is included, with its filter taken at α² = 0.
/// Holds scratch buffers, so each thread needs its own instance.
class SpectralController final : public Controller {
public:
    SpectralController(int dimension, std::size_t side, double gamma, double xi, double mean_z)
        : dimension_(dimension), side_(side), mean_z_(mean_z),
          filters_(optimal_filters(grid_modes(dimension, side, true), gamma, xi)) {
        if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
        if (side < 3) throw ParameterError("grid side must be at least 3");
        const std::size_t n = node_count();
        h_.resize(n);
        k_.resize(n);
        p_.resize(n);
        q_.resize(n);
        inv_alpha_sq_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& f = filters_.filters[j];
            h_[j] = f.h;
            k_[j] = f.k;
            p_[j] = f.p;
            q_[j] = f.q;
            inv_alpha_sq_[j] = j == 0 ? 0.0 : 1.0 / filters_.modes[j].alpha_sq;
        }
        line_.resize(side);
        spectrum_.resize(side);
        work_a_.resize(n);
        work_b_.resize(n);
        phase_.resize(n);
    }

    Index nodes() const override { return static_cast<Index>(node_count()); }
    Index edges() const override { return static_cast<Index>(dimension_ == 1 ? side_ : 2 * side_ * side_); }

    const FilterSet& filters() const noexcept { return filters_; }

    void act(const Vector& z, const Vector& b, Vector& Y, Vector& W) const override { apply(z, b, Y, W, nullptr); }

    void flows(const Vector& injection, Vector& F) const override {
        const std::size_t n = node_count();
        for (std::size_t i = 0; i < n; ++i) work_a_[i] = {injection[static_cast<Index>(i)], 0.0};
        transform(work_a_, true);
        for (std::size_t j = 0; j < n; ++j) work_a_[j] *= inv_alpha_sq_[j];
        transform(work_a_, false);
        edge_differences(work_a_, F);
    }

    void step(const Vector& z, const Vector& b, Vector& Y, Vector& W, Vector& F) const override {
        apply(z, b, Y, W, &F);
    }

    double min_storage_rate() const override {
        double m = 1.0;
        for (double k : k_) m = std::min(m, k);
        return m;
    }

    AggregateVariances predicted_variances(double sigma_sq) const override {
        double b = 0.0, f = 0.0, w = 0.0;
        for (std::size_t j = 0; j < node_count(); ++j) {
            const auto v = filter_variances(filters_.modes[j].alpha_sq, h_[j], k_[j], p_[j], q_[j], sigma_sq);
            b += v.sigma_B_sq;
            f += v.sigma_F_sq;
            w += v.sigma_W_sq;
        }
        const double n = static_cast<double>(node_count());
        return {b / n, f / static_cast<double>(edges()), w / n};
    }

private:
    std::size_t node_count() const noexcept { return dimension_ == 1 ? side_ : side_ * side_; }

    // Inputs and outputs are real with even symbols, so one complex transform
    // carries (z, b) in and one carries (Y, W) out; phases take a third.
    void apply(const Vector& z, const Vector& b, Vector& Y, Vector& W, Vector* F) const {
        const std::size_t n = node_count();
        for (std::size_t i = 0; i < n; ++i) {
            work_a_[i] = {z[static_cast<Index>(i)] - mean_z_, b[static_cast<Index>(i)]};
        }
        transform(work_a_, true);
        const std::complex<double> half_i(0.0, 0.5);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t c = conj_index(j);
            const std::complex<double> zj = 0.5 * (work_a_[j] + std::conj(work_a_[c]));
            const std::complex<double> bj = -half_i * (work_a_[j] - std::conj(work_a_[c]));
            const std::complex<double> yj = h_[j] * zj - k_[j] * bj;
            const std::complex<double> wj = p_[j] * zj + q_[j] * bj;
            work_b_[j] = yj + std::complex<double>(0.0, 1.0) * wj;
            phase_[j] = (zj - yj - wj) * inv_alpha_sq_[j];
        }
        transform(work_b_, false);
        Y.resize(static_cast<Index>(n));
        W.resize(static_cast<Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            Y[static_cast<Index>(i)] = work_b_[i].real();
            W[static_cast<Index>(i)] = mean_z_ + work_b_[i].imag();
        }
        if (F) {
            transform(phase_, false);
            edge_differences(phase_, *F);
        }
    }

    // F_e = φ_from − φ_to over the edges of make_grid, in its edge order.
    void edge_differences(const std::vector<std::complex<double>>& phi, Vector& F) const {
        F.resize(edges());
        if (dimension_ == 1) {
            for (std::size_t i = 0; i + 1 < side_; ++i) {
                F[static_cast<Index>(i)] = phi[i].real() - phi[i + 1].real();
            }
            F[static_cast<Index>(side_ - 1)] = phi[0].real() - phi[side_ - 1].real();
            return;
        }
        Index e = 0;
        auto at = [&](std::size_t r, std::size_t c) { return phi[r * side_ + c].real(); };
        for (std::size_t r = 0; r < side_; ++r) {
            for (std::size_t c = 0; c < side_; ++c) {
                const std::size_t cr = (c + 1) % side_;
                const std::size_t rd = (r + 1) % side_;
                F[e++] = cr > c ? at(r, c) - at(r, cr) : at(r, cr) - at(r, c);
                F[e++] = rd > r ? at(r, c) - at(rd, c) : at(rd, c) - at(r, c);
            }
        }
    }

    std::size_t conj_index(std::size_t j) const noexcept {
        if (dimension_ == 1) return (side_ - j) % side_;
        const std::size_t r = j / side_;
        const std::size_t c = j % side_;
        return ((side_ - r) % side_) * side_ + (side_ - c) % side_;
    }

    void transform(std::vector<std::complex<double>>& data, bool forward) const {
        if (dimension_ == 1) {
            line_.assign(data.begin(), data.end());
            if (forward) {
                fft_.fwd(spectrum_, line_);
            } else {
                fft_.inv(spectrum_, line_);
            }
            std::copy(spectrum_.begin(), spectrum_.end(), data.begin());
            return;
        }
        for (std::size_t r = 0; r < side_; ++r) {
            std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * side_), side_, line_.begin());
            forward ? fft_.fwd(spectrum_, line_) : fft_.inv(spectrum_, line_);
            std::copy(spectrum_.begin(), spectrum_.end(), data.begin() + static_cast<std::ptrdiff_t>(r * side_));
        }
        for (std::size_t c = 0; c < side_; ++c) {
            for (std::size_t r = 0; r < side_; ++r) line_[r] = data[r * side_ + c];
            forward ? fft_.fwd(spectrum_, line_) : fft_.inv(spectrum_, line_);
            for (std::size_t r = 0; r < side_; ++r) data[r * side_ + c] = spectrum_[r];
        }
    }

    int dimension_;
    std::size_t side_;
    double mean_z_;
    FilterSet filters_;
    std::vector<double> h_, k_, p_, q_, inv_alpha_sq_;
    mutable Eigen::FFT<double> fft_;
    mutable std::vector<std::complex<double>> line_, spectrum_, work_a_, work_b_, phase_;
};

// ---------------------------------------------------------------------------
// One slot
// ---------------------------------------------------------------------------

/// Virtual signals produced in one slot.
struct VirtualStep {
    Vector Y;
    Vector W;
    Vector F;
    Vector B_next;
};

/// U from the controller, B(t+1) = B(t) + Y(t), F = −∇Δ⁻¹(Z − Y − W).
inline VirtualStep step_virtual(const Controller& controller, const Vector& B, const Vector& z) {
    if (B.size() != controller.nodes() || z.size() != controller.nodes()) {
        throw ShapeError("state and generation must have one entry per node");
    }
    VirtualStep s;
    controller.step(z, B, s.Y, s.W, s.F);
    s.B_next = B + s.Y;
    return s;
}

/// Actual storage levels and controls derived from the virtual ones.
struct ActualStep {
    Vector level;       ///< 𝔅(t)
    Vector level_next;  ///< 𝔅(t+1)
    Vector Y;           ///< 𝒴(t)
    Vector W;           ///< 𝒲(t)
};

/// 𝔅 = [B + S/2] clipped to [0, S];  𝒴 = 𝔅(t+1) − 𝔅(t);  𝒲 = W + Y − 𝒴.
inline ActualStep virtual_to_actual(const Vector& B_t, const Vector& B_next, const Vector& Y_t, const Vector& W_t,
                                    const Vector& S) {
    const Index n = S.size();
    if (B_t.size() != n || B_next.size() != n || Y_t.size() != n || W_t.size() != n) {
        throw ShapeError("virtual signals must have one entry per node");
    }
    ActualStep a;
    a.level = (B_t + 0.5 * S).cwiseMax(Vector::Zero(n)).cwiseMin(S);
    a.level_next = (B_next + 0.5 * S).cwiseMax(Vector::Zero(n)).cwiseMin(S);
    a.Y = a.level_next - a.level;
    a.W = W_t + Y_t - a.Y;
    return a;
}

// ---------------------------------------------------------------------------
// Cost estimation
// ---------------------------------------------------------------------------

/// Σ_e (F_e − C_e)₊ + (−C_e − F_e)₊ over one slot, in edge order.
inline double line_violation(const Vector& F, const Vector& C) {
    double s = 0.0;
    for (Index e = 0; e < F.size(); ++e) {
        s += std::max(F[e] - C[e], 0.0) + std::max(-C[e] - F[e], 0.0);
    }
    return s;
}

/// Σ_i (𝒲_i)₋ over one slot, in node order: only consumption is charged.
inline double fast_generation_shortfall(const Vector& W) {
    double s = 0.0;
    for (Index i = 0; i < W.size(); ++i) s += std::max(-W[i], 0.0);
    return s;
}

struct CostEstimate {
    double eps_F = 0.0;
    double eps_W = 0.0;
    double eps_tot = 0.0;
};

/// Time averages of the line-limit violation per edge and of the
/// fast-generation consumption per node over a burn-in-free trace.
inline CostEstimate estimate_costs(const std::vector<Vector>& flows, const std::vector<Vector>& fast_generation,
                                   const Vector& capacity) {
    if (flows.empty() || fast_generation.empty()) throw EstimationError("empty trace");
    if (flows.size() != fast_generation.size()) throw EstimationError("flow and generation traces differ in length");
    double f_sum = 0.0;
    double w_sum = 0.0;
    for (std::size_t t = 0; t < flows.size(); ++t) {
        if (flows[t].size() != capacity.size()) throw ShapeError("flow trace does not match the capacities");
        f_sum += line_violation(flows[t], capacity);
        w_sum += fast_generation_shortfall(fast_generation[t]);
    }
    const double slots = static_cast<double>(flows.size());
    CostEstimate c;
    c.eps_F = f_sum / (slots * static_cast<double>(capacity.size()));
    c.eps_W = w_sum / (slots * static_cast<double>(fast_generation.front().size()));
    c.eps_tot = c.eps_F + c.eps_W;
    return c;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class StorageInit {
    /// Virtual deviation 0: actual storage starts half full.
    HalfFull,
    /// Virtual deviation −S/2: actual storage starts empty.
    Empty,
};

struct SimConfig {
    long horizon = 10000;
    /// Negative selects default_burn_in().
    long burn_in = -1;
    int replicas = 8;
    std::uint64_t seed = 1;
    bool record_traces = false;
    /// Run even when the horizon cannot resolve the expected violation rate.
    bool force = false;
    StorageInit init = StorageInit::HalfFull;
};

/// max(10³, ⌈10 / k_min⌉).
inline long default_burn_in(double min_storage_rate) {
    if (!(min_storage_rate > 0.0)) throw ParameterError("storage dynamics do not mix (k_min = 0)");
    return std::max<long>(1000, static_cast<long>(std::ceil(10.0 / min_storage_rate)));
}

/// Per-slot signals of the first replica, burn-in included.
struct Trace {
    std::vector<Vector> Z, B, Y, W, F;
    std::vector<Vector> level, actual_Y, actual_W;
};

struct Estimate {
    double value = 0.0;
    /// Standard error across replicas; NaN with a single replica.
    double stderr_ = std::numeric_limits<double>::quiet_NaN();
};

struct SimulationOutcome {
    Estimate eps_F, eps_W, eps_tot;
    Estimate var_B, var_F, var_W;
    /// Fraction of post-burn-in node-slots where the clip moved the storage level.
    double clipping_frequency = 0.0;
    long burn_in = 0;
    long horizon = 0;
    int replicas = 0;
    long node_slots = 0;
    long edge_slots = 0;
    /// Over all slots and replicas, burn-in included.
    long storage_limit_violations = 0;
    long balance_violations = 0;
    double max_balance_error = 0.0;
    long pathwise_bound_violations = 0;
    long literal_bound_violations = 0;
    /// Post-burn-in virtual storage variance, second half minus first half.
    Estimate stationarity_drift;
    std::vector<double> replica_eps_F, replica_eps_W;
    AggregateVariances predicted;
    std::optional<Trace> trace;
};

namespace detail {

struct Moments {
    double sum = 0.0;
    double sum_sq = 0.0;
    double count = 0.0;
    void add(const Vector& v) {
        sum += v.sum();
        sum_sq += v.squaredNorm();
        count += static_cast<double>(v.size());
    }
    double variance() const {
        const double m = sum / count;
        return sum_sq / count - m * m;
    }
};

inline Estimate pool(const std::vector<double>& values) {
    Estimate e;
    const double r = static_cast<double>(values.size());
    double s = 0.0;
    for (double v : values) s += v;
    e.value = s / r;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - e.value) * (v - e.value);
        e.stderr_ = std::sqrt(ss / (r - 1.0) / r);
    }
    return e;
}

}  // namespace detail

inline constexpr double kPhysicsTolerance = 1e-9;
inline constexpr double kMinExpectedEvents = 10.0;

/// Expected number of post-burn-in outage events (line overloads, storage
/// clips, fast-generation shortfalls) under Gaussian marginals.
inline double expected_events(const AggregateVariances& v, const NetworkTopology& topology, double mean,
                              long slots, int replicas) {
    const Vector C = topology.capacities();
    const Vector S = topology.storage_vector();
    auto tail = [](double threshold, double var) {
        if (var <= 0.0) return threshold < 0.0 ? 1.0 : 0.0;
        return normal_tail(threshold / std::sqrt(var));
    };
    double per_slot = 0.0;
    for (Index e = 0; e < C.size(); ++e) per_slot += 2.0 * tail(C[e], v.sigma_F_sq);
    for (Index i = 0; i < S.size(); ++i) {
        per_slot += 2.0 * tail(0.5 * S[i], v.sigma_B_sq) + tail(mean, v.sigma_W_sq);
    }
    return per_slot * static_cast<double>(slots) * static_cast<double>(replicas);
}

inline SimulationOutcome run_experiment(const NetworkTopology& topology, const Controller& controller,
                                        const GenerationModel& generation, const SimConfig& config) {
    generation.validate();
    const Index n = controller.nodes();
    const Index m = controller.edges();
    if (static_cast<std::size_t>(n) != topology.node_count() || static_cast<std::size_t>(m) != topology.edge_count()) {
        throw ShapeError("controller does not match the topology");
    }
    if (config.replicas < 1) throw ParameterError("replicas must be >= 1");
    if (config.horizon < 1) throw ParameterError("horizon must be >= 1");
    const long burn_in = config.burn_in < 0 ? default_burn_in(controller.min_storage_rate()) : config.burn_in;
    if (burn_in >= config.horizon) {
        throw ParameterError("burn-in (" + std::to_string(burn_in) + ") must be shorter than the horizon (" +
                             std::to_string(config.horizon) + ")");
    }
    const long window = config.horizon - burn_in;

    SimulationOutcome out;
    out.burn_in = burn_in;
    out.horizon = config.horizon;
    out.replicas = config.replicas;
    out.predicted = controller.predicted_variances(generation.variance);
    if (generation.variance > 0.0 && !config.force) {
        const double events = expected_events(out.predicted, topology, generation.mean, window, config.replicas);
        if (events < kMinExpectedEvents) {
            throw ResolutionError("expected " + std::to_string(events) +
                                  " outage events in the measured window; fewer than 10 cannot resolve the cost "
                                  "(lengthen the horizon, add replicas, or force)");
        }
    }

    const Vector S = topology.storage_vector();
    const Vector C = topology.capacities();
    const Vector half_S = 0.5 * S;
    const Vector zero = Vector::Zero(n);
    const auto& edge_list = topology.edges();

    std::vector<double> eps_F(config.replicas), eps_W(config.replicas);
    std::vector<double> var_B(config.replicas), var_F(config.replicas), var_W(config.replicas);
    std::vector<double> drift(config.replicas);
    double clipped = 0.0;

    Vector Y, W, F, outflow;
    for (int r = 0; r < config.replicas; ++r) {
        Vector B = config.init == StorageInit::HalfFull ? zero : Vector(-half_S);
        double f_sum = 0.0;
        double w_sum = 0.0;
        detail::Moments mb, mf, mw, first_half, second_half;
        const bool tracing = config.record_traces && r == 0;
        Trace trace;
        for (long t = 0; t < config.horizon; ++t) {
            const Vector z = sample_generation(generation, static_cast<std::size_t>(n),
                                               {config.seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(t)});
            controller.step(z, B, Y, W, F);
            const Vector B_next = B + Y;
            const auto actual = virtual_to_actual(B, B_next, Y, W, S);

            for (Index i = 0; i < n; ++i) {
                if (actual.level[i] < 0.0 || actual.level[i] > S[i]) ++out.storage_limit_violations;
                if (actual.level_next[i] < 0.0 || actual.level_next[i] > S[i]) ++out.storage_limit_violations;
            }
            // ∇ᵀb⁻¹F: each flow leaves its `from` node and enters its `to` node.
            outflow.setZero(n);
            for (Index e = 0; e < m; ++e) {
                const auto& edge = edge_list[static_cast<std::size_t>(e)];
                outflow[static_cast<Index>(edge.from)] += F[e];
                outflow[static_cast<Index>(edge.to)] -= F[e];
            }
            for (Index i = 0; i < n; ++i) {
                const double lhs = z[i] - actual.Y[i] - actual.W[i];
                const double scale = std::max({1.0, std::abs(z[i]), std::abs(actual.W[i]), std::abs(W[i])});
                const double err = std::abs(lhs - outflow[i]);
                out.max_balance_error = std::max(out.max_balance_error, err / scale);
                if (err > kPhysicsTolerance * scale) ++out.balance_violations;
                const double slack = 1e-12 * std::max({1.0, std::abs(W[i]), std::abs(B[i]), std::abs(B_next[i])});
                const double corrected =
                    W[i] - std::max(B[i] - half_S[i], 0.0) - std::max(-B_next[i] - half_S[i], 0.0);
                if (actual.W[i] < corrected - slack) ++out.pathwise_bound_violations;
                const double literal = W[i] - std::max(B[i] - half_S[i], 0.0) - std::max(-B[i] - half_S[i], 0.0);
                if (actual.W[i] < literal - slack) ++out.literal_bound_violations;
            }

            if (t >= burn_in) {
                f_sum += line_violation(F, C);
                w_sum += fast_generation_shortfall(actual.W);
                mb.add(B);
                mf.add(F);
                mw.add(W);
                (t - burn_in < window / 2 ? first_half : second_half).add(B);
                for (Index i = 0; i < n; ++i) {
                    const double moved = std::abs(actual.level_next[i] - (B_next[i] + half_S[i]));
                    if (moved > kPhysicsTolerance * std::max(1.0, S[i])) clipped += 1.0;
                }
            }
            if (tracing) {
                trace.Z.push_back(z);
                trace.B.push_back(B);
                trace.Y.push_back(Y);
                trace.W.push_back(W);
                trace.F.push_back(F);
                trace.level.push_back(actual.level);
                trace.actual_Y.push_back(actual.Y);
                trace.actual_W.push_back(actual.W);
            }
            B = B_next;
        }
        const double slots = static_cast<double>(window);
        eps_F[r] = f_sum / (slots * static_cast<double>(m));
        eps_W[r] = w_sum / (slots * static_cast<double>(n));
        var_B[r] = mb.variance();
        var_F[r] = mf.variance();
        var_W[r] = mw.variance();
        drift[r] = (second_half.count > 0 && first_half.count > 0) ? second_half.variance() - first_half.variance()
                                                                   : 0.0;
        if (tracing) out.trace = std::move(trace);
    }

    out.replica_eps_F = eps_F;
    out.replica_eps_W = eps_W;
    std::vector<double> tot(config.replicas);
    for (int r = 0; r < config.replicas; ++r) tot[r] = eps_F[r] + eps_W[r];
    out.eps_F = detail::pool(eps_F);
    out.eps_W = detail::pool(eps_W);
    out.eps_tot = detail::pool(tot);
    out.var_B = detail::pool(var_B);
    out.var_F = detail::pool(var_F);
    out.var_W = detail::pool(var_W);
    out.stationarity_drift = detail::pool(drift);
    out.node_slots = static_cast<long>(n) * config.horizon * config.replicas;
    out.edge_slots = static_cast<long>(m) * config.horizon * config.replicas;
    out.clipping_frequency = clipped / (static_cast<double>(n) * static_cast<double>(window) * config.replicas);
    return out;
}

}  // namespace gridstore
