#pragma once

// Experiment configuration: flat `key = value` lines grouped under
// `[section]` headers. Lines starting with '#' or ';' are comments.

#include "gridstore/csv.hpp"
#include "gridstore/errors.hpp"
#include "gridstore/simulation.hpp"
#include "gridstore/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gridstore {

enum class Command { Design, Simulate, Sweep, Bounds, Conjecture };

inline std::string command_name(Command c) {
    switch (c) {
        case Command::Design: return "design";
        case Command::Simulate: return "simulate";
        case Command::Sweep: return "sweep";
        case Command::Bounds: return "bounds";
        case Command::Conjecture: return "conjecture";
    }
    return "unknown";
}

inline std::optional<Command> parse_command(const std::string& s) {
    for (auto c : {Command::Design, Command::Simulate, Command::Sweep, Command::Bounds, Command::Conjecture}) {
        if (command_name(c) == s) return c;
    }
    return std::nullopt;
}

enum class SweepMethod { Bound, MonteCarlo, Both };

inline std::string sweep_method_name(SweepMethod m) {
    switch (m) {
        case SweepMethod::Bound: return "bound";
        case SweepMethod::MonteCarlo: return "monte-carlo";
        case SweepMethod::Both: return "both";
    }
    return "unknown";
}

struct ExperimentConfig {
    std::optional<Command> command;
    std::uint64_t seed = 1;

    int dimension = 1;
    std::size_t side = 64;

    double capacity = 1.0;
    double storage = 0.0;
    double mean = 0.5;
    double variance = 1.0;
    Family family = Family::Gaussian;
    double kappa_bound = 16.0;

    /// Regime-driven weights unless `explicit_control`.
    bool explicit_control = false;
    double gamma = 0.0;
    double xi = kInfiniteXi;
    /// Alternative to ξ: ξ = γ/s, with s = 0 meaning ξ = ∞.
    std::optional<double> s;

    long horizon = 10000;
    long burn_in = -1;
    int replicas = 8;
    bool force = false;
    StorageInit init = StorageInit::HalfFull;
    bool record_traces = false;

    std::vector<double> sweep_capacity;
    std::vector<double> sweep_storage;
    std::vector<double> sweep_mean;
    SweepMethod sweep_method = SweepMethod::Bound;

    std::vector<std::size_t> conjecture_sides{8, 16, 32, 64, 128};
    std::size_t conjecture_samples = 400;
    std::size_t brute_force_instances = 100;

    double sigma() const { return std::sqrt(variance); }

    GenerationModel generation() const {
        GenerationModel g;
        switch (family) {
            case Family::Gaussian: g = GenerationModel::gaussian(mean, variance); break;
            case Family::BoundedUniform: {
                const double half = std::sqrt(3.0 * variance);
                g = GenerationModel::bounded_uniform(mean - half, mean + half);
                break;
            }
            case Family::TwoPoint: g = GenerationModel::two_point(mean, variance); break;
            case Family::Custom: throw ParameterError("custom generation cannot be configured from text");
        }
        g.kappa_bound = kappa_bound;
        g.validate();
        return g;
    }

    SimConfig sim() const {
        SimConfig s;
        s.horizon = horizon;
        s.burn_in = burn_in;
        s.replicas = replicas;
        s.seed = seed;
        s.record_traces = record_traces;
        s.force = force;
        s.init = init;
        return s;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline double config_real(const std::string& v) {
    const double x = parse_real(v);
    if (!std::isfinite(x)) throw FormatError("expected a finite number, got '" + v + "'");
    return x;
}

inline long long config_integer(const std::string& v) { return parse_integer(v); }

inline bool config_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw FormatError("expected true or false, got '" + v + "'");
}

inline std::vector<double> config_real_list(const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(config_real(item));
    return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct KeySpec {
    std::string section;
    std::string key;
    Setter set;
    std::function<std::string(const ExperimentConfig&)> echo;
};

inline std::string join_reals(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_real(v[i]);
    return s;
}

inline const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"run", "command",
         [](ExperimentConfig& c, const std::string& v) {
             c.command = parse_command(v);
             if (!c.command) throw FormatError("unknown command '" + v + "'");
         },
         [](const ExperimentConfig& c) { return c.command ? command_name(*c.command) : std::string("(cli)"); }},
        {"run", "seed",
         [](ExperimentConfig& c, const std::string& v) {
             const long long s = config_integer(v);
             if (s < 0) throw FormatError("seed must be non-negative");
             c.seed = static_cast<std::uint64_t>(s);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"grid", "dimension",
         [](ExperimentConfig& c, const std::string& v) { c.dimension = static_cast<int>(config_integer(v)); },
         [](const ExperimentConfig& c) { return std::to_string(c.dimension); }},
        {"grid", "side",
         [](ExperimentConfig& c, const std::string& v) {
             const long long s = config_integer(v);
             c.side = s < 0 ? 0 : static_cast<std::size_t>(s);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.side); }},
        {"physics", "capacity", [](ExperimentConfig& c, const std::string& v) { c.capacity = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.capacity); }},
        {"physics", "storage", [](ExperimentConfig& c, const std::string& v) { c.storage = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.storage); }},
        {"physics", "mean", [](ExperimentConfig& c, const std::string& v) { c.mean = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.mean); }},
        {"physics", "variance", [](ExperimentConfig& c, const std::string& v) { c.variance = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.variance); }},
        {"physics", "family",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "gaussian") {
                 c.family = Family::Gaussian;
             } else if (v == "uniform") {
                 c.family = Family::BoundedUniform;
             } else if (v == "two-point") {
                 c.family = Family::TwoPoint;
             } else {
                 throw FormatError("family must be gaussian, uniform or two-point, got '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) { return family_name(c.family); }},
        {"physics", "kappa_bound", [](ExperimentConfig& c, const std::string& v) { c.kappa_bound = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.kappa_bound); }},
        {"control", "mode",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "auto") {
                 c.explicit_control = false;
             } else if (v == "explicit") {
                 c.explicit_control = true;
             } else {
                 throw FormatError("mode must be auto or explicit, got '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) { return std::string(c.explicit_control ? "explicit" : "auto"); }},
        {"control", "gamma", [](ExperimentConfig& c, const std::string& v) { c.gamma = config_real(v); },
         [](const ExperimentConfig& c) { return format_real(c.gamma); }},
        {"control", "xi",
         [](ExperimentConfig& c, const std::string& v) {
             c.xi = v == "inf" ? kInfiniteXi : config_real(v);
         },
         [](const ExperimentConfig& c) { return format_real(c.xi); }},
        {"control", "s",
         [](ExperimentConfig& c, const std::string& v) {
             c.s = config_real(v);
             if (*c.s < 0.0) throw FormatError("s must be >= 0");
         },
         [](const ExperimentConfig& c) { return c.s ? format_real(*c.s) : std::string("unset"); }},
        {"sim", "horizon", [](ExperimentConfig& c, const std::string& v) { c.horizon = config_integer(v); },
         [](const ExperimentConfig& c) { return std::to_string(c.horizon); }},
        {"sim", "burn_in",
         [](ExperimentConfig& c, const std::string& v) {
             c.burn_in = v == "auto" ? -1 : config_integer(v);
             if (v != "auto" && c.burn_in < 0) throw FormatError("burn_in must be >= 0 or auto");
         },
         [](const ExperimentConfig& c) { return c.burn_in < 0 ? std::string("auto") : std::to_string(c.burn_in); }},
        {"sim", "replicas",
         [](ExperimentConfig& c, const std::string& v) { c.replicas = static_cast<int>(config_integer(v)); },
         [](const ExperimentConfig& c) { return std::to_string(c.replicas); }},
        {"sim", "force", [](ExperimentConfig& c, const std::string& v) { c.force = config_bool(v); },
         [](const ExperimentConfig& c) { return std::string(c.force ? "true" : "false"); }},
        {"sim", "init",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "half-full") {
                 c.init = StorageInit::HalfFull;
             } else if (v == "empty") {
                 c.init = StorageInit::Empty;
             } else {
                 throw FormatError("init must be half-full or empty, got '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) { return std::string(c.init == StorageInit::HalfFull ? "half-full" : "empty"); }},
        {"sim", "record_traces", [](ExperimentConfig& c, const std::string& v) { c.record_traces = config_bool(v); },
         [](const ExperimentConfig& c) { return std::string(c.record_traces ? "true" : "false"); }},
        {"sweep", "capacity", [](ExperimentConfig& c, const std::string& v) { c.sweep_capacity = config_real_list(v); },
         [](const ExperimentConfig& c) { return join_reals(c.sweep_capacity); }},
        {"sweep", "storage", [](ExperimentConfig& c, const std::string& v) { c.sweep_storage = config_real_list(v); },
         [](const ExperimentConfig& c) { return join_reals(c.sweep_storage); }},
        {"sweep", "mean", [](ExperimentConfig& c, const std::string& v) { c.sweep_mean = config_real_list(v); },
         [](const ExperimentConfig& c) { return join_reals(c.sweep_mean); }},
        {"sweep", "method",
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "bound") {
                 c.sweep_method = SweepMethod::Bound;
             } else if (v == "monte-carlo") {
                 c.sweep_method = SweepMethod::MonteCarlo;
             } else if (v == "both") {
                 c.sweep_method = SweepMethod::Both;
             } else {
                 throw FormatError("method must be bound, monte-carlo or both, got '" + v + "'");
             }
         },
         [](const ExperimentConfig& c) { return sweep_method_name(c.sweep_method); }},
        {"conjecture", "sides",
         [](ExperimentConfig& c, const std::string& v) {
             c.conjecture_sides.clear();
             for (const auto& item : split_list(v)) {
                 const long long l = config_integer(item);
                 if (l < 1) throw FormatError("sides must be >= 1");
                 c.conjecture_sides.push_back(static_cast<std::size_t>(l));
             }
         },
         [](const ExperimentConfig& c) {
             std::string s;
             for (std::size_t i = 0; i < c.conjecture_sides.size(); ++i) {
                 s += (i ? ", " : "") + std::to_string(c.conjecture_sides[i]);
             }
             return s;
         }},
        {"conjecture", "samples",
         [](ExperimentConfig& c, const std::string& v) {
             const long long n = config_integer(v);
             c.conjecture_samples = n < 0 ? 0 : static_cast<std::size_t>(n);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.conjecture_samples); }},
        {"conjecture", "brute_force_instances",
         [](ExperimentConfig& c, const std::string& v) {
             const long long n = config_integer(v);
             if (n < 0) throw FormatError("brute_force_instances must be >= 0");
             c.brute_force_instances = static_cast<std::size_t>(n);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.brute_force_instances); }},
    };
    return specs;
}

}  // namespace detail

/// Every resolved setting as "section.key = value", in a fixed order.
inline std::vector<std::string> config_echo(const ExperimentConfig& c) {
    std::vector<std::string> lines;
    for (const auto& spec : detail::key_specs()) {
        if (spec.echo) lines.push_back(spec.section + "." + spec.key + " = " + spec.echo(c));
    }
    return lines;
}

/// Parses and validates; throws ConfigError listing every problem found.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::vector<std::string> errors;
    std::map<std::string, std::size_t> seen;
    auto where = [&](const std::string& key) {
        const auto it = seen.find(key);
        return it == seen.end() ? std::string("default") : "line " + std::to_string(it->second);
    };

    std::stringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = detail::trim(raw);
        const std::string at = "line " + std::to_string(line_no) + ": ";
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                errors.push_back(at + "malformed section header");
                continue;
            }
            section = detail::trim(line.substr(1, line.size() - 2));
            const bool known = std::any_of(detail::key_specs().begin(), detail::key_specs().end(),
                                           [&](const auto& s) { return s.section == section; });
            if (!known) errors.push_back(at + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(at + "expected key = value");
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty()) {
            errors.push_back(at + "key '" + key + "' outside any section");
            continue;
        }
        const std::string full = section + "." + key;
        const auto spec = std::find_if(detail::key_specs().begin(), detail::key_specs().end(),
                                       [&](const auto& s) { return s.section == section && s.key == key; });
        if (spec == detail::key_specs().end()) {
            errors.push_back(at + "unknown key '" + full + "'");
            continue;
        }
        if (const auto prev = seen.find(full); prev != seen.end()) {
            errors.push_back(at + "duplicate key '" + full + "' (first set on line " + std::to_string(prev->second) +
                             ")");
            continue;
        }
        seen[full] = line_no;
        if (value.empty()) {
            errors.push_back(at + "empty value for '" + full + "'");
            continue;
        }
        try {
            spec->set(c, value);
        } catch (const Error& e) {
            errors.push_back(at + full + ": " + e.what());
        }
    }

    auto check = [&](bool ok, const std::string& key, const std::string& message) {
        if (!ok) errors.push_back(where(key) + ": " + key + ": " + message);
    };
    check(c.dimension == 1 || c.dimension == 2, "grid.dimension", "must be 1 or 2");
    check(c.side >= 3, "grid.side", "must be at least 3");
    check(c.side <= (c.dimension == 1 ? (std::size_t{1} << 22) : std::size_t{2048}), "grid.side", "too large");
    check(c.capacity > 0.0, "physics.capacity", "must be positive");
    check(c.storage >= 0.0, "physics.storage", "must be >= 0");
    check(c.mean >= 0.0, "physics.mean", "must be >= 0");
    check(c.variance >= 0.0, "physics.variance", "must be >= 0");
    check(c.kappa_bound > 1.0, "physics.kappa_bound", "must exceed 1");
    if (c.family == Family::BoundedUniform) check(3.0 < c.kappa_bound, "physics.kappa_bound", "uniform has kappa = 3");
    if (seen.count("control.xi") && seen.count("control.s")) {
        errors.push_back(where("control.s") + ": control.s: set either xi or s, not both");
    }
    if (c.explicit_control) {
        check(seen.count("control.gamma") > 0, "control.gamma", "explicit control needs gamma");
        check(c.gamma > 0.0, "control.gamma", "must be positive");
        if (c.s && c.gamma > 0.0) c.xi = *c.s == 0.0 ? kInfiniteXi : c.gamma / *c.s;
        check(c.xi >= 0.0, "control.xi", "must be >= 0 or inf");
    } else {
        check(!seen.count("control.gamma") && !seen.count("control.xi") && !seen.count("control.s"), "control.mode",
              "gamma, xi and s need mode = explicit");
    }
    check(c.horizon >= 1, "sim.horizon", "must be >= 1");
    check(c.burn_in < c.horizon, "sim.burn_in", "must be shorter than the horizon");
    check(c.replicas >= 1, "sim.replicas", "must be >= 1");
    check(c.conjecture_samples >= 100, "conjecture.samples", "must be >= 100");
    check(!c.conjecture_sides.empty(), "conjecture.sides", "must be non-empty");
    for (double v : c.sweep_capacity) check(v > 0.0, "sweep.capacity", "values must be positive");
    for (double v : c.sweep_storage) check(v >= 0.0, "sweep.storage", "values must be >= 0");
    for (double v : c.sweep_mean) check(v >= 0.0, "sweep.mean", "values must be >= 0");
    if (c.family == Family::TwoPoint || c.family == Family::BoundedUniform) {
        check(c.variance > 0.0, "physics.variance", "must be positive for this family");
    }
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

}  // namespace gridstore
