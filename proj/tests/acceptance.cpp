#include "gridstore/bounds.hpp"
#include "gridstore/csv.hpp"
#include "gridstore/harness.hpp"
#include "gridstore/riccati.hpp"
#include "gridstore/simulation.hpp"
#include "gridstore/spectral.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace gridstore;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Verdict {
    bool pass = false;
    std::string detail;
    std::vector<std::string> notes;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gridstore_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// --- 1 -----------------------------------------------------------------------

double max_gain_error(int dim, std::size_t side, double gamma, double xi) {
    const auto ops = build_operators(make_grid(dim, side, 1.0, 1.0));
    const auto model = assemble_state_space(ops, 0.0, Matrix::Identity(ops.nodes(), ops.nodes()));
    const auto sol = solve_riccati_pair(model, CostWeights::uniform(ops.edges(), ops.nodes(), gamma, xi, 1.0));
    const auto c = linear_controller(sol, model);
    double err = 0.0;
    for (const auto& mode : grid_modes(dim, side, true)) {
        const auto f = optimal_mode_filter(mode.alpha_sq, gamma, xi);
        const std::pair<const Matrix*, double> gains[] = {{&c.H, f.h}, {&c.K, f.k}, {&c.P, f.p}, {&c.Q, f.q}};
        for (const auto& [g, closed] : gains) {
            err = std::max(err, std::abs(mode_response(*g, dim, side, mode.theta) - std::complex<double>(closed, 0.0)));
        }
    }
    return err;
}

Verdict riccati_oracle() {
    Timer t;
    const double ring = max_gain_error(1, 16, 0.7, 0.4);
    const double torus = max_gain_error(2, 4, 0.3, 1.5);
    const double secs = t.seconds();
    return {ring <= 1e-6 && torus <= 1e-6 && secs < 10.0,
            fmt("ring16 max err %.2e, torus4x4 max err %.2e (tol 1e-6), %.2f s (< 10 s)", ring, torus, secs)};
}

// --- 2 -----------------------------------------------------------------------

Verdict filter_identities() {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> log_weight(-6.0, 3.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double sum_err = 0.0, pq_err = 0.0;
    long pq_mismatch = 0;
    for (int i = 0; i < 10000; ++i) {
        const double gamma = std::pow(10.0, log_weight(rng));
        const double xi = std::pow(10.0, log_weight(rng));
        const double a2 = 8.0 * unit(rng);
        const auto f = optimal_mode_filter(a2, gamma, xi);
        sum_err = std::max(sum_err, std::abs(f.h + f.k - 1.0));
        pq_err = std::max(pq_err, std::abs(f.p - xi * f.beta * f.k) / std::max(1.0, std::abs(f.p)));
        if (f.p != f.q) ++pq_mismatch;
    }
    long monotone_breaks = 0;
    double prev = std::numeric_limits<double>::infinity();
    for (int e = -800; e <= 800; ++e) {
        const double beta = std::pow(10.0, e / 100.0);
        const double k = optimal_mode_filter(0.0, 1.0, 1.0 / beta).k;
        if (k > prev) ++monotone_breaks;
        prev = k;
    }
    return {sum_err <= 1e-12 && pq_err <= 1e-12 && pq_mismatch == 0 && monotone_breaks == 0,
            fmt("max |h+k-1| %.1e, max rel |p-xi*beta*k| %.1e, p!=q %ld, k increases %ld (1601 betas)", sum_err, pq_err,
                pq_mismatch, monotone_breaks)};
}

// --- 3 -----------------------------------------------------------------------

Verdict local_optimality() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> log_weight(-3.0, 1.0);
    std::uniform_real_distribution<double> unit(0.01, 1.0);
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        const double gamma = std::pow(10.0, log_weight(rng));
        const double xi = std::pow(10.0, log_weight(rng));
        const double a2 = 4.0 * unit(rng);
        const auto f = optimal_mode_filter(a2, gamma, xi);
        const double base = mode_lagrangian(filter_variances(a2, f.h, f.k, f.p, f.q, 1.0), gamma, xi);
        for (int c = 0; c < 4; ++c) {
            for (double d : {-1e-3, 1e-3}) {
                double g[4] = {f.h, f.k, f.p, f.q};
                g[c] += d;
                const double v = mode_lagrangian(filter_variances(a2, g[0], g[1], g[2], g[3], 1.0), gamma, xi);
                worst = std::max(worst, base - v);
            }
        }
    }
    return {worst <= 1e-12, fmt("largest decrease of L over 800 perturbations %.2e (tol 1e-12)", worst)};
}

// --- 4 -----------------------------------------------------------------------

Verdict no_storage_asymptotics() {
    Timer t;
    const double gamma = 1e-6;
    const auto v1 = aggregate_variances(1, gamma, kInfiniteXi, 1.0, 1024);
    const double rf = v1.sigma_F_sq * 4.0 * std::sqrt(gamma);
    const double rw = v1.sigma_W_sq * 4.0 / std::sqrt(gamma);
    const auto v2 = aggregate_variances(2, gamma, kInfiniteXi, 1.0, 64 * 64);
    const double r2 = v2.sigma_F_sq * 4.0 * kPi / std::log(1.0 / (std::numbers::e * gamma));
    const double secs = t.seconds();
    const bool one_d = rf >= 0.99 && rf <= 1.01 && rw >= 0.99 && rw <= 1.01;
    const bool two_d = r2 >= 0.95 && r2 <= 1.05;
    Verdict v{one_d && two_d && secs < 30.0,
              fmt("1-D F ratio %.5f, W ratio %.5f in [0.99,1.01]; 2-D F ratio %.4f in [0.95,1.05]; %.1f s (< 30 s)", rf, rw,
                  r2, secs)};
    v.notes.push_back(fmt("1-D part %s, 2-D part %s", one_d ? "holds" : "fails", two_d ? "holds" : "fails"));
    v.notes.push_back(fmt("2-D sigma_F^2 is the per-node aggregate over both incident directions; per edge the ratio is %.4f",
                          r2 / 2.0));
    return v;
}

// --- 5 -----------------------------------------------------------------------

Verdict constants() {
    const double o1 = compute_constant(Constant::Omega1);
    const double o2 = compute_constant(Constant::Omega2);
    const double k_a = k2_constant(2048);
    const double k_b = k2_constant(4096);
    const double drift = std::abs(k_a / k_b - 1.0);
    const double gamma = 1e-6, s = 1.0;
    const auto v = aggregate_variances(1, gamma, gamma / s, 1.0, 1024);
    const double lemma = v.sigma_W_sq * 2.0 * std::sqrt(s) / gamma;
    const double lemma_rel = std::abs(lemma * kPi - 1.0);
    const bool pass = std::abs(o1 - 1.0 / kPi) <= 1e-6 && std::abs(o2 - 1.0 / (2.0 * kPi)) <= 1e-4 && drift <= 0.005 &&
                      lemma_rel <= 0.02;
    return {pass, fmt("Omega1 %.8f (1/pi %.8f), Omega2 %.8f (1/2pi %.8f), K2 %.6f vs %.6f (drift %.2e), "
                      "1-D storage %.5f vs 1/pi (rel %.2e)",
                      o1, 1.0 / kPi, o2, 0.5 / kPi, k_a, k_b, drift, lemma, lemma_rel)};
}

// --- 6 -----------------------------------------------------------------------

Verdict physics() {
    struct Case {
        int dim;
        std::size_t side;
        double C, S, mu;
        long horizon;
        int replicas;
        StorageInit init;
    };
    const Case cases[] = {
        {1, 256, 1.0, 1.0, 0.5, 10000, 4, StorageInit::HalfFull},
        {1, 128, 1.5, 4.0, 0.2, 20000, 4, StorageInit::Empty},
        {2, 32, 1.0, 2.0, 0.3, 2500, 4, StorageInit::HalfFull},
    };
    long slots = 0, storage = 0, balance = 0, pathwise = 0, literal = 0;
    double max_balance = 0.0;
    for (const auto& c : cases) {
        const auto sel = select_regime(c.dim, c.C, c.S, c.mu, 1.0);
        const SpectralController ctl(c.dim, c.side, sel.gamma, sel.xi, c.mu);
        SimConfig cfg;
        cfg.horizon = c.horizon;
        cfg.replicas = c.replicas;
        cfg.seed = 6;
        cfg.force = true;
        cfg.init = c.init;
        const auto o = run_experiment(make_grid(c.dim, c.side, c.C, c.S), ctl, GenerationModel::gaussian(c.mu, 1.0), cfg);
        slots += o.node_slots;
        storage += o.storage_limit_violations;
        balance += o.balance_violations;
        pathwise += o.pathwise_bound_violations;
        literal += o.literal_bound_violations;
        max_balance = std::max(max_balance, o.max_balance_error);
    }
    Verdict v{slots >= 10'000'000 && storage == 0 && balance == 0 && literal == 0,
              fmt("%ld node-slots over 3 runs; storage range violations %ld, balance violations %ld (max err %.1e), "
                  "pathwise fast-generation bound as stated: %ld violations",
                  slots, storage, balance, max_balance, literal)};
    v.notes.push_back(fmt("bound with storage excursions (B_t - S/2)+ and (-B_{t+1} - S/2)+ subtracted: %ld violations",
                          pathwise));
    return v;
}

// --- 7 -----------------------------------------------------------------------

Verdict spectral_vs_simulation() {
    Timer t;
    const std::size_t n = 1024;
    const double gamma = 1e-3, s = 1.0;
    const double xi = gamma / s;
    const SpectralController ctl(1, n, gamma, xi, 0.0);
    SimConfig cfg;
    cfg.burn_in = default_burn_in(ctl.min_storage_rate());
    cfg.horizon = cfg.burn_in + 100000;
    cfg.replicas = 8;
    cfg.seed = 7;
    cfg.force = true;
    const auto o = run_experiment(make_grid(1, n, 1.0, 1.0), ctl, GenerationModel::gaussian(0.0, 1.0), cfg);
    const auto q = aggregate_variances(1, gamma, xi, 1.0, 1024);
    const double zb = (o.var_B.value - q.sigma_B_sq) / o.var_B.stderr_;
    const double zf = (o.var_F.value - q.sigma_F_sq) / o.var_F.stderr_;
    const double zw = (o.var_W.value - q.sigma_W_sq) / o.var_W.stderr_;
    const double secs = t.seconds();
    Verdict v{std::abs(zb) <= 3.0 && std::abs(zf) <= 3.0 && std::abs(zw) <= 3.0 && secs < 300.0,
              fmt("B %.5f vs %.5f (z %+.2f), F %.5f vs %.5f (z %+.2f), W %.5f vs %.5f (z %+.2f); %.0f s (< 300 s)",
                  o.var_B.value, q.sigma_B_sq, zb, o.var_F.value, q.sigma_F_sq, zf, o.var_W.value, q.sigma_W_sq, zw,
                  secs)};
    v.notes.push_back(fmt("8 replicas x %ld measured slots after %ld burn-in slots", cfg.horizon - cfg.burn_in,
                          cfg.burn_in));
    return v;
}

// --- 8, 9 --------------------------------------------------------------------

struct SweepRow {
    double C, x, bound, mc, se, lower;
    std::string status;
};

std::vector<SweepRow> bound_sweep() {
    const auto dir = scratch_dir("sweep");
    const auto c = parse_config(R"([run]
seed = 8
[grid]
dimension = 1
side = 256
[physics]
storage = 0
mean = 0.5
variance = 1
[sim]
horizon = 21000
burn_in = 1000
replicas = 8
[sweep]
capacity = 1, 2, 3
method = both
)");
    const auto r = run_command(c, Command::Sweep, dir);
    if (r.exit_code != 0) throw NumericError("sweep failed: " + r.message);
    const auto t = read_csv(dir / "sweep.csv");
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        rows.push_back({t.real(i, "capacity"), t.real(i, "mu_c_over_sigma_sq"), t.real(i, "bound_eps_tot"),
                        t.real(i, "mc_eps_tot"), t.real(i, "mc_eps_tot_se"), t.real(i, "lower_bound"),
                        t.text(i, "mc_status")});
    }
    return rows;
}

Verdict bound_consistency(const std::vector<SweepRow>& rows) {
    bool pass = rows.size() == 3;
    std::string detail;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const bool ok = r.status == "ok" && r.mc <= r.bound + 2.0 * r.se && r.lower <= 2.0 * (r.mc + 2.0 * r.se) &&
                        (i == 0 || r.mc < rows[i - 1].mc);
        pass = pass && ok;
        detail += fmt("%sC=%g: mc %.5f+-%.5f, bound %.5f, lower %.2e", i ? "; " : "", r.C, r.mc, r.se, r.bound, r.lower);
    }
    return {pass, detail};
}

Verdict exponential_trend(const std::vector<SweepRow>& rows) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& r : rows) {
        const double y = std::log(r.bound);
        sx += r.x;
        sy += y;
        sxx += r.x * r.x;
        sxy += r.x * y;
    }
    const double k = static_cast<double>(rows.size());
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    return {slope >= -2.4 && slope <= -1.6, fmt("slope of log bound vs mu*C/sigma^2 = %.4f (in [-2.4, -1.6])", slope)};
}

// --- 10 ----------------------------------------------------------------------

Verdict conjecture() {
    Timer t;
    const auto dir = scratch_dir("conjecture");
    const auto c = parse_config("[run]\nseed = 10\n[conjecture]\nsides = 8, 16, 32, 64, 128\nsamples = 400\n"
                                "brute_force_instances = 100\n");
    const auto r = run_command(c, Command::Conjecture, dir);
    if (r.exit_code != 0) throw NumericError("conjecture failed: " + r.message);
    const auto table = read_csv(dir / "conjecture.csv");
    const double corr = table.real(0, "log_correlation");
    const long checked = parse_integer(table.text(0, "brute_force_checked"));
    const long mismatches = parse_integer(table.text(0, "brute_force_mismatches"));
    long min_samples = std::numeric_limits<long>::max();
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        min_samples = std::min<long>(min_samples, parse_integer(table.text(i, "samples")));
    }
    const auto g1 = conjecture_curve({1}, 400, 10).front();
    const double z1 = (g1.mean - 1.0 / std::sqrt(2.0 * kPi)) / g1.stderr_;
    const double secs = t.seconds();
    return {checked == 400 && mismatches == 0 && std::abs(z1) <= 3.0 && corr >= 0.99 && min_samples >= 400 &&
                secs < 600.0,
            fmt("DP vs brute force %ld/%ld agree; E[G(1)] %.4f vs %.4f (z %+.2f); corr(E[G(l)]/l, log l) %.5f; "
                "%ld samples; %.1f s",
                checked - mismatches, checked, g1.mean, 1.0 / std::sqrt(2.0 * kPi), z1, corr, min_samples, secs)};
}

// --- 11 ----------------------------------------------------------------------

Verdict tail_lemma() {
    const auto g = GenerationModel::gaussian(0.0, 1.0);
    const auto rows = tail_lemma_check({100, 400, 900, 2500, 10000}, 0.1, 1.5, g);
    bool all = true;
    std::string detail;
    for (const auto& r : rows) {
        all = all && r.pass && r.bound <= r.tail;
        detail += fmt("n=%zu %.3e<=%.3e; ", r.n, r.bound, r.tail);
    }
    const auto bad = tail_lemma_check({400}, 0.1, 4.0, g).front();
    detail += fmt("kappa2=4 n=400: bound %.5f > tail %.5f reported %s", bad.bound, bad.tail, bad.pass ? "pass" : "fail");
    return {all && !bad.pass, detail};
}

// --- 12 ----------------------------------------------------------------------

Verdict space_time() {
    const std::size_t n = 64;
    const double C = 1.0, S = 2.0, mu = 0.2;
    const auto topo = make_grid(1, n, C, S);
    const auto sel = select_regime(1, C, S, mu, 1.0);
    const SpectralController ctl(1, n, sel.gamma, sel.xi, mu);
    SimConfig cfg;
    cfg.horizon = 6000;
    cfg.replicas = 1;
    cfg.seed = 12;
    cfg.record_traces = true;
    cfg.force = true;
    const auto o = run_experiment(topo, ctl, GenerationModel::gaussian(mu, 1.0), cfg);
    const auto st = space_time_mapping(topo, *o.trace, o.burn_in);
    const bool exact = std::memcmp(&st.eps_F_hat, &o.replica_eps_F[0], sizeof(double)) == 0;
    return {exact && st.time_edge_violations == 0,
            fmt("eps_F mapped %.17g, simulated %.17g (%s); time-edge violations %ld over %ld slots", st.eps_F_hat,
                o.replica_eps_F[0], exact ? "bit-identical" : "differ", st.time_edge_violations, st.slots)};
}

// --- 13 ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_binary(const std::string& exe, const std::string& command, const fs::path& config, const fs::path& out) {
    const std::string line = "\"" + exe + "\" " + command + " --config \"" + config.string() + "\" --out \"" +
                             out.string() + "\" > /dev/null 2>&1";
    const int status = std::system(line.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict determinism() {
    const char* exe = std::getenv("GRIDSTORE_CLI");
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"design", "[grid]\nside = 32\n[physics]\nstorage = 2\nmean = 0.2\n"},
        {"simulate", "[grid]\nside = 64\n[physics]\ncapacity = 1.5\nstorage = 1\nmean = 0.3\n[sim]\nhorizon = 3000\n"
                     "replicas = 4\nrecord_traces = true\n"},
        {"sweep", "[grid]\nside = 64\n[sim]\nhorizon = 2000\nreplicas = 2\nforce = true\n[sweep]\ncapacity = 1, 2\n"
                  "storage = 0, 1\nmethod = both\n"},
        {"bounds", "[grid]\ndimension = 2\n[physics]\ncapacity = 2\nstorage = 3\nmean = 0.4\n"},
        {"conjecture", "[conjecture]\nsides = 8, 16, 32\nsamples = 200\nbrute_force_instances = 20\n"},
    };
    long files = 0, differing = 0, failures = 0;
    for (const auto& [command, text] : commands) {
        const auto dir = scratch_dir("determinism_" + command);
        const auto config = dir / "experiment.ini";
        std::ofstream(config) << text;
        std::vector<fs::path> runs = {dir / "first", dir / "second"};
        for (const auto& out : runs) {
            int code = 0;
            if (exe) {
                code = run_binary(exe, command, config, out);
            } else {
                code = run_cli(command, config, out).exit_code;
            }
            if (code != 0) ++failures;
        }
        for (const auto& e : fs::directory_iterator(runs[0])) {
            ++files;
            if (slurp(e.path()) != slurp(runs[1] / e.path().filename())) ++differing;
        }
    }
    return {failures == 0 && differing == 0 && files >= 6,
            fmt("%s: 5 commands run twice, %ld CSV files compared, %ld differ, %ld failed runs",
                exe ? "CLI binary" : "in-process harness", files, differing, failures)};
}

}  // namespace

int main() {
    std::cout.setf(std::ios::unitbuf);
    std::vector<SweepRow> sweep;
    std::string sweep_error;
    auto sweep_rows = [&]() -> const std::vector<SweepRow>& {
        if (sweep.empty() && sweep_error.empty()) {
            try {
                sweep = bound_sweep();
            } catch (const std::exception& e) {
                sweep_error = e.what();
            }
        }
        if (!sweep_error.empty()) throw NumericError(sweep_error);
        return sweep;
    };
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"riccati gains equal closed-form mode filters", riccati_oracle},
        {"filter identities over 10^4 random triples", filter_identities},
        {"closed-form filters are local optima", local_optimality},
        {"no-storage variance asymptotics", no_storage_asymptotics},
        {"spectral constants", constants},
        {"simulation physics invariants", physics},
        {"simulated variances match quadrature", spectral_vs_simulation},
        {"monte carlo cost within analytic bounds", [&] { return bound_consistency(sweep_rows()); }},
        {"exponential decay of analytic cost", [&] { return exponential_trend(sweep_rows()); }},
        {"oriented-path conjecture numerics", conjecture},
        {"tail lemma", tail_lemma},
        {"space-time remapping", space_time},
        {"byte-identical reruns", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail
                  << "\n";
        for (const auto& note : v.notes) std::cout << "     " << note << "\n";
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria pass\n";
    return failed == 0 ? 0 : 1;
}
