#pragma once

// Config-driven runner behind the command-line tool: each command turns a
// validated ExperimentConfig into one or more CSV artifacts.

#include "gridstore/bounds.hpp"
#include "gridstore/config.hpp"
#include "gridstore/csv.hpp"
#include "gridstore/errors.hpp"
#include "gridstore/network.hpp"
#include "gridstore/simulation.hpp"
#include "gridstore/spectral.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace gridstore {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumeric = 2;

struct RunResult {
    int exit_code = kExitOk;
    std::vector<std::filesystem::path> artifacts;
    std::string message;
};

/// Controller weights for one parameter point.
struct Design {
    std::string regime;
    std::string method;
    double gamma = 0.0;
    double xi = kInfiniteXi;
};

namespace detail {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline Design resolve_design(const ExperimentConfig& c, double C, double S, double mu) {
    if (c.explicit_control) return {"explicit", "explicit", c.gamma, c.xi};
    const auto sel = select_regime(c.dimension, C, S, mu, c.variance);
    return {regime_name(sel.regime), sel.method, sel.gamma, sel.xi};
}

inline AggregateVariances infinite_grid_variances(int dimension, double gamma, double xi, double sigma_sq) {
    return aggregate_variances(dimension, gamma, xi, sigma_sq, 1024);
}

class Artifacts {
public:
    Artifacts(std::filesystem::path dir, std::vector<std::string> header) : dir_(std::move(dir)), header_(std::move(header)) {}

    void write(const std::string& name, const Schema& schema, const std::vector<Row>& rows) {
        const auto path = dir_ / name;
        written_.push_back(path);
        write_csv(path, rows, schema, header_);
    }

    void discard() noexcept {
        for (const auto& p : written_) {
            std::error_code ec;
            std::filesystem::remove(p, ec);
            auto tmp = p;
            tmp += ".tmp";
            std::filesystem::remove(tmp, ec);
        }
        written_.clear();
    }

    const std::vector<std::filesystem::path>& written() const noexcept { return written_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> header_;
    std::vector<std::filesystem::path> written_;
};

inline Row r(std::initializer_list<Cell> cells) { return Row(cells); }

inline Schema columns(std::initializer_list<std::pair<const char*, ColumnType>> cols) {
    Schema s;
    for (const auto& [n, t] : cols) s.push_back({n, t});
    return s;
}

constexpr auto kInt = ColumnType::Integer;
constexpr auto kReal = ColumnType::Real;
constexpr auto kText = ColumnType::Text;

inline void run_design(const ExperimentConfig& c, Artifacts& out) {
    const auto d = resolve_design(c, c.capacity, c.storage, c.mean);
    const auto filters = optimal_filters(grid_modes(c.dimension, c.side, true), d.gamma, d.xi);
    std::vector<Row> modes;
    for (std::size_t j = 0; j < filters.filters.size(); ++j) {
        const auto& m = filters.modes[j];
        const auto& f = filters.filters[j];
        const auto v = filter_variances(m.alpha_sq, f.h, f.k, f.p, f.q, c.variance);
        modes.push_back(r({static_cast<long long>(j), m.theta[0], m.theta[1], m.alpha_sq, f.beta, f.h, f.k, f.p, f.q,
                           v.sigma_B_sq, v.sigma_F_sq, v.sigma_W_sq}));
    }
    out.write("design_modes.csv",
              columns({{"mode", kInt}, {"theta_1", kReal}, {"theta_2", kReal}, {"alpha_sq", kReal}, {"beta", kReal}, {"h", kReal}, {"k", kReal},
                       {"p", kReal}, {"q", kReal}, {"var_B", kReal}, {"var_F", kReal}, {"var_W", kReal}}),
              modes);

    const SpectralController controller(c.dimension, c.side, d.gamma, d.xi, c.mean);
    const auto finite = controller.predicted_variances(c.variance);
    const auto infinite = infinite_grid_variances(c.dimension, d.gamma, d.xi, c.variance);
    const double kappa = c.generation().kappa();
    const auto bound = cost_upper_bound(infinite, c.capacity, c.storage, c.mean, kappa);
    out.write("design.csv",
              columns({{"dimension", kInt}, {"side", kInt}, {"capacity", kReal}, {"storage", kReal}, {"mean", kReal}, {"variance", kReal},
                       {"regime", kText}, {"method", kText}, {"gamma", kReal}, {"xi", kReal}, {"min_k", kReal}, {"sigma_B_sq", kReal},
                       {"sigma_F_sq", kReal}, {"sigma_W_sq", kReal}, {"grid_sigma_B_sq", kReal}, {"grid_sigma_F_sq", kReal},
                       {"grid_sigma_W_sq", kReal}, {"kappa", kReal}, {"bound_eps_F", kReal}, {"bound_eps_W", kReal},
                       {"bound_eps_tot", kReal}}),
              {r({static_cast<long long>(c.dimension), static_cast<long long>(c.side), c.capacity, c.storage, c.mean,
                  c.variance, d.regime, d.method, d.gamma, d.xi, controller.min_storage_rate(), infinite.sigma_B_sq,
                  infinite.sigma_F_sq, infinite.sigma_W_sq, finite.sigma_B_sq, finite.sigma_F_sq, finite.sigma_W_sq,
                  kappa, bound.eps_F, bound.eps_W, bound.eps_tot})});
}

inline void write_trace(const Trace& trace, Artifacts& out) {
    std::vector<Row> rows;
    auto emit = [&](long long t, const char* kind, const char* signal, const Vector& v) {
        for (Index i = 0; i < v.size(); ++i) rows.push_back(r({t, std::string(kind), static_cast<long long>(i), std::string(signal), v[i]}));
    };
    for (std::size_t t = 0; t < trace.Z.size(); ++t) {
        const auto tt = static_cast<long long>(t);
        emit(tt, "node", "Z", trace.Z[t]);
        emit(tt, "node", "B", trace.B[t]);
        emit(tt, "node", "Y", trace.Y[t]);
        emit(tt, "node", "W", trace.W[t]);
        emit(tt, "node", "level", trace.level[t]);
        emit(tt, "node", "actual_Y", trace.actual_Y[t]);
        emit(tt, "node", "actual_W", trace.actual_W[t]);
        emit(tt, "edge", "F", trace.F[t]);
    }
    out.write("trace.csv", columns({{"t", kInt}, {"kind", kText}, {"id", kInt}, {"signal", kText}, {"value", kReal}}), rows);
}

inline void run_simulate(const ExperimentConfig& c, Artifacts& out) {
    const auto d = resolve_design(c, c.capacity, c.storage, c.mean);
    const auto topology = make_grid(c.dimension, c.side, c.capacity, c.storage);
    const SpectralController controller(c.dimension, c.side, d.gamma, d.xi, c.mean);
    const auto generation = c.generation();
    const auto o = run_experiment(topology, controller, generation, c.sim());
    const auto bound = cost_upper_bound(o.predicted, c.capacity, c.storage, c.mean, generation.kappa());
    out.write("simulation.csv",
              columns({{"dimension", kInt}, {"side", kInt}, {"capacity", kReal}, {"storage", kReal}, {"mean", kReal}, {"variance", kReal},
                       {"family", kText}, {"regime", kText}, {"gamma", kReal}, {"xi", kReal}, {"seed", kInt}, {"horizon", kInt},
                       {"burn_in", kInt}, {"replicas", kInt}, {"eps_F", kReal}, {"eps_F_se", kReal}, {"eps_W", kReal}, {"eps_W_se", kReal},
                       {"eps_tot", kReal}, {"eps_tot_se", kReal}, {"bound_eps_tot", kReal}, {"var_B", kReal}, {"var_B_se", kReal},
                       {"var_F", kReal}, {"var_F_se", kReal}, {"var_W", kReal}, {"var_W_se", kReal}, {"predicted_var_B", kReal},
                       {"predicted_var_F", kReal}, {"predicted_var_W", kReal}, {"clipping_frequency", kReal},
                       {"stationarity_drift", kReal}, {"stationarity_drift_se", kReal}, {"node_slots", kInt},
                       {"storage_limit_violations", kInt}, {"balance_violations", kInt}, {"max_balance_error", kReal},
                       {"pathwise_bound_violations", kInt}, {"literal_bound_violations", kInt}}),
              {r({static_cast<long long>(c.dimension), static_cast<long long>(c.side), c.capacity, c.storage, c.mean,
                  c.variance, family_name(c.family), d.regime, d.gamma, d.xi, static_cast<long long>(c.seed),
                  static_cast<long long>(o.horizon), static_cast<long long>(o.burn_in),
                  static_cast<long long>(o.replicas), o.eps_F.value, o.eps_F.stderr_, o.eps_W.value, o.eps_W.stderr_,
                  o.eps_tot.value, o.eps_tot.stderr_, bound.eps_tot, o.var_B.value, o.var_B.stderr_, o.var_F.value,
                  o.var_F.stderr_, o.var_W.value, o.var_W.stderr_, o.predicted.sigma_B_sq, o.predicted.sigma_F_sq,
                  o.predicted.sigma_W_sq, o.clipping_frequency, o.stationarity_drift.value,
                  o.stationarity_drift.stderr_, static_cast<long long>(o.node_slots),
                  static_cast<long long>(o.storage_limit_violations), static_cast<long long>(o.balance_violations),
                  o.max_balance_error, static_cast<long long>(o.pathwise_bound_violations),
                  static_cast<long long>(o.literal_bound_violations)})});
    if (o.trace) write_trace(*o.trace, out);
}

inline void run_bounds(const ExperimentConfig& c, Artifacts& out) {
    if (!(c.variance > 0.0)) throw ParameterError("bounds need a positive variance");
    const auto lb = regime_lower_bound(c.dimension, c.capacity, c.storage, c.mean, c.sigma());
    const auto d = resolve_design(c, c.capacity, c.storage, c.mean);
    const auto v = infinite_grid_variances(c.dimension, d.gamma, d.xi, c.variance);
    const auto ub = cost_upper_bound(v, c.capacity, c.storage, c.mean, c.generation().kappa());
    out.write("bounds.csv",
              columns({{"dimension", kInt}, {"capacity", kReal}, {"storage", kReal}, {"mean", kReal}, {"sigma", kReal}, {"regime", kText},
                       {"region_length", kInt}, {"region_duration", kInt}, {"region_nodes", kInt}, {"boundary_capacity", kReal},
                       {"prescribed_length", kReal}, {"prescribed_duration", kReal}, {"prescribed_bound", kReal},
                       {"lower_bound", kReal}, {"multiplier", kReal}, {"lower_eps_tot", kReal}, {"event_probability", kReal},
                       {"upper_regime", kText}, {"upper_eps_tot", kReal}}),
              {r({static_cast<long long>(c.dimension), c.capacity, c.storage, c.mean, c.sigma(), lb.regime,
                  static_cast<long long>(lb.region.length), static_cast<long long>(lb.region.duration),
                  static_cast<long long>(lb.region.nodes), lb.region.boundary_capacity, lb.prescribed_length,
                  lb.prescribed_duration, lb.prescribed_value, lb.value, lb.multiplier, lb.eps_tot_lower(),
                  lb.event_probability, d.regime, ub.eps_tot})});
}

inline void run_sweep(const ExperimentConfig& c, Artifacts& out) {
    if (!(c.variance > 0.0)) throw ParameterError("a sweep needs a positive variance");
    if (c.sweep_capacity.empty() && c.sweep_storage.empty() && c.sweep_mean.empty()) {
        throw ParameterError("a sweep needs at least one axis");
    }
    auto axis = [](const std::vector<double>& v, double fallback) {
        return v.empty() ? std::vector<double>{fallback} : v;
    };
    const bool analytic = c.sweep_method != SweepMethod::MonteCarlo;
    const bool monte_carlo = c.sweep_method != SweepMethod::Bound;
    std::vector<Row> rows;
    long long point = 0;
    for (double C : axis(c.sweep_capacity, c.capacity)) {
        for (double S : axis(c.sweep_storage, c.storage)) {
            for (double mu : axis(c.sweep_mean, c.mean)) {
                ExperimentConfig pc = c;
                pc.capacity = C;
                pc.storage = S;
                pc.mean = mu;
                const auto d = resolve_design(pc, C, S, mu);
                const double kappa = pc.generation().kappa();
                double b_F = kNaN, b_W = kNaN, b_tot = kNaN;
                if (analytic) {
                    const auto v = infinite_grid_variances(c.dimension, d.gamma, d.xi, c.variance);
                    const auto b = cost_upper_bound(v, C, S, mu, kappa);
                    b_F = b.eps_F;
                    b_W = b.eps_W;
                    b_tot = b.eps_tot;
                }
                std::string status = "skipped";
                double m_F = kNaN, m_W = kNaN, m_tot = kNaN, m_se = kNaN;
                if (monte_carlo) {
                    const SpectralController controller(c.dimension, c.side, d.gamma, d.xi, mu);
                    try {
                        auto sim = pc.sim();
                        sim.record_traces = false;
                        const auto o = run_experiment(make_grid(c.dimension, c.side, C, S), controller,
                                                      pc.generation(), sim);
                        status = "ok";
                        m_F = o.eps_F.value;
                        m_W = o.eps_W.value;
                        m_tot = o.eps_tot.value;
                        m_se = o.eps_tot.stderr_;
                    } catch (const ResolutionError&) {
                        status = "unresolvable";
                    }
                }
                const auto lb = regime_lower_bound(c.dimension, C, S, mu, c.sigma());
                rows.push_back(r({point++, C, S, mu, mu * C / c.variance, d.regime, d.gamma, d.xi, b_F, b_W, b_tot,
                                  status, m_F, m_W, m_tot, m_se, lb.value, lb.multiplier, lb.eps_tot_lower()}));
            }
        }
    }
    out.write("sweep.csv",
              columns({{"point", kInt}, {"capacity", kReal}, {"storage", kReal}, {"mean", kReal}, {"mu_c_over_sigma_sq", kReal},
                       {"regime", kText}, {"gamma", kReal}, {"xi", kReal}, {"bound_eps_F", kReal}, {"bound_eps_W", kReal},
                       {"bound_eps_tot", kReal}, {"mc_status", kText}, {"mc_eps_F", kReal}, {"mc_eps_W", kReal}, {"mc_eps_tot", kReal},
                       {"mc_eps_tot_se", kReal}, {"lower_bound", kReal}, {"lower_multiplier", kReal}, {"lower_eps_tot", kReal}}),
              rows);
}

inline void run_conjecture(const ExperimentConfig& c, Artifacts& out) {
    long long checked = 0;
    long long mismatches = 0;
    for (std::size_t l = 1; l <= 4; ++l) {
        for (std::size_t s = 0; s < c.brute_force_instances; ++s) {
            const Matrix X = oriented_path_instance(l, c.seed, s);
            ++checked;
            if (std::abs(oriented_path_max(X) - oriented_path_brute_force(X)) > 1e-12) ++mismatches;
        }
    }
    const auto curve = conjecture_curve(c.conjecture_sides, c.conjecture_samples, c.seed);
    const double corr = curve.size() >= 2 ? log_correlation(curve) : kNaN;
    std::vector<Row> rows;
    for (const auto& p : curve) {
        rows.push_back(r({static_cast<long long>(p.l), p.mean, p.stderr_, static_cast<long long>(p.samples), corr,
                          checked, mismatches}));
    }
    out.write("conjecture.csv",
              columns({{"l", kInt}, {"mean_G_over_l", kReal}, {"stderr", kReal}, {"samples", kInt}, {"log_correlation", kReal},
                       {"brute_force_checked", kInt}, {"brute_force_mismatches", kInt}}),
              rows);
}

}  // namespace detail

/// Exit status for an error escaping a command.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const EstimationError*>(&e) ||
        dynamic_cast<const BalanceError*>(&e)) {
        return kExitNumeric;
    }
    if (dynamic_cast<const Error*>(&e)) return kExitValidation;
    return kExitNumeric;
}

/// Runs `command` and writes its CSV files into `out_dir`. On failure every
/// file written so far is removed.
inline RunResult run_command(const ExperimentConfig& config, Command command, const std::filesystem::path& out_dir) {
    RunResult result;
    if (config.command && *config.command != command) {
        result.exit_code = kExitValidation;
        result.message = "config is for '" + command_name(*config.command) + "', not '" + command_name(command) + "'";
        return result;
    }
    std::vector<std::string> header{"gridstore " + command_name(command)};
    for (const auto& line : config_echo(config)) header.push_back(line);
    detail::Artifacts out(out_dir, header);
    try {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir.string());
        switch (command) {
            case Command::Design: detail::run_design(config, out); break;
            case Command::Simulate: detail::run_simulate(config, out); break;
            case Command::Sweep: detail::run_sweep(config, out); break;
            case Command::Bounds: detail::run_bounds(config, out); break;
            case Command::Conjecture: detail::run_conjecture(config, out); break;
        }
        result.artifacts = out.written();
    } catch (const std::exception& e) {
        out.discard();
        result.exit_code = exit_code_for(e);
        result.message = e.what();
    }
    return result;
}

/// Reads and parses the config file, then runs the command.
inline RunResult run_cli(const std::string& command, const std::filesystem::path& config_path,
                         const std::filesystem::path& out_dir) {
    RunResult result;
    const auto cmd = parse_command(command);
    if (!cmd) {
        result.exit_code = kExitValidation;
        result.message = "unknown command '" + command + "'";
        return result;
    }
    std::ifstream in(config_path, std::ios::binary);
    if (!in) {
        result.exit_code = kExitValidation;
        result.message = "cannot read config " + config_path.string();
        return result;
    }
    std::stringstream text;
    text << in.rdbuf();
    try {
        auto config = parse_config(text.str());
        if (!config.command) config.command = *cmd;
        return run_command(config, *cmd, out_dir);
    } catch (const ConfigError& e) {
        result.exit_code = kExitValidation;
        result.message = e.what();
    }
    return result;
}

}  // namespace gridstore
