// elkit: energy landscape toolkit for multivariate time series.
//
// Subcommands: simulate, fit, grid, export-features, report.
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
// Flags can be overridden by ELKIT_* environment variables, see --help.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/eval.hpp"
#include "elkit/gaussian.hpp"
#include "elkit/gcn.hpp"
#include "elkit/graph.hpp"
#include "elkit/grid.hpp"
#include "elkit/io.hpp"
#include "elkit/ising.hpp"
#include "elkit/mixture.hpp"
#include "elkit/serialize.hpp"
#include "elkit/simulate.hpp"

namespace fs = std::filesystem;
using elkit::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& context) {
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known |= (key == a);
        if (!known) throw elkit::ConfigError("unknown key '" + key + "' in " + context);
    }
}

json load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw elkit::ConfigError("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw elkit::ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("schema_version", -1) != 1)
        throw elkit::ConfigError("config must declare schema_version 1");
    return j;
}

template <typename T>
T require(const json& j, const char* key, const std::string& context) {
    if (!j.contains(key))
        throw elkit::ConfigError(std::string("missing key '") + key + "' in " + context);
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw elkit::ConfigError(std::string("bad value for '") + key + "' in " + context);
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const fs::path& config_path, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed_override, const std::string& format) {
    const json cfg = load_config(config_path);
    require_keys(cfg,
                 {"schema_version", "generator", "N", "K", "T", "snr", "seed", "rho", "p_stay",
                  "alpha", "zeta", "dt", "burn_in"},
                 "simulate config");
    const auto generator = require<std::string>(cfg, "generator", "simulate config");
    const int N = require<int>(cfg, "N", "simulate config");
    const int K = require<int>(cfg, "K", "simulate config");
    const int T = require<int>(cfg, "T", "simulate config");
    if (N < 2 || K < 1 || T < 2)
        throw elkit::ConfigError("N >= 2, K >= 1 and T >= 2 are required");
    const std::string snr = cfg.contains("snr") && cfg.at("snr").is_number()
                                ? std::to_string(cfg.at("snr").get<double>())
                                : cfg.value("snr", "medium");
    const std::uint64_t seed =
        seed_override ? *seed_override : require<std::uint64_t>(cfg, "seed", "simulate config");
    const double p_stay = cfg.value("p_stay", 0.9);

    elkit::SimOutput sim;
    json echo{{"schema_version", 1}, {"generator", generator}, {"N", N}, {"K", K}, {"T", T},
              {"snr", snr},          {"seed", seed},           {"p_stay", p_stay}};
    if (generator == "slds") {
        const double rho = cfg.value("rho", 0.3);
        const auto slds =
            elkit::make_slds_config(N, K, T, elkit::snr_level_value(snr), seed, rho, p_stay);
        sim = elkit::simulate_slds(slds, elkit::derive_seed(seed, "slds-run"));
        echo["rho"] = rho;
        echo["achieved_snr"] = sim.achieved_snr;
    } else if (generator == "kuramoto") {
        auto regime = elkit::KuramotoRegime{cfg.value("alpha", 0.0), cfg.value("zeta", -1.0)};
        if (!cfg.contains("alpha") || !cfg.contains("zeta")) {
            const auto preset = elkit::kuramoto_regime(snr);
            if (!cfg.contains("alpha")) regime.alpha = preset.alpha;
            if (!cfg.contains("zeta")) regime.zeta = preset.zeta;
        }
        auto kcfg = elkit::make_kuramoto_config(N, K, T, seed, regime.alpha, regime.zeta, p_stay);
        kcfg.dt = cfg.value("dt", kcfg.dt);
        kcfg.burn_in = cfg.value("burn_in", kcfg.burn_in);
        sim = elkit::simulate_kuramoto(kcfg, elkit::derive_seed(seed, "kuramoto-run"));
        sim.achieved_snr = elkit::kuramoto_measured_snr(sim);
        echo["alpha"] = regime.alpha;
        echo["zeta"] = regime.zeta;
        echo["dt"] = kcfg.dt;
        echo["burn_in"] = kcfg.burn_in;
        echo["achieved_snr"] = sim.achieved_snr;
    } else {
        throw elkit::ConfigError("generator must be slds or kuramoto");
    }

    fs::create_directories(out_dir);
    if (format == "binary")
        elkit::write_timeseries_cache(out_dir / "X.elkb", sim.X);
    else
        elkit::write_timeseries_csv(out_dir / "X.csv", sim.X);
    elkit::write_labels_csv(out_dir / "z.csv", sim.z);
    elkit::write_matrix_csv(out_dir / "centers.csv", sim.centers);
    elkit::write_matrix_csv(out_dir / "P_star.csv", sim.P_star);
    std::ofstream(out_dir / "config.json") << echo.dump(2) << "\n";
    std::cout << "wrote simulation bundle to " << out_dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const std::string& method, const fs::path& data_path, const fs::path& out_path,
            double lambda, const std::string& components, const std::string& rank, double delta,
            std::uint64_t seed) {
    const auto X = elkit::read_timeseries(data_path);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());

    if (method == "del") {
        const auto Q = elkit::median_binarize(X);
        const auto fit = elkit::fit_ising_ple(Q, lambda);
        elkit::save_ising_model(out_path, fit);
        if (!fit.info.converged)
            std::cerr << "warning: pseudolikelihood fit hit the iteration limit\n";
        std::cout << "del model written to " << out_path.string() << "\n";
        return kExitOk;
    }
    if (method == "cel") {
        const auto m = elkit::fit_gaussian_mle(X);
        elkit::save_gaussian_model(out_path, m);
        std::cout << "cel model written to " << out_path.string() << "\n";
        return kExitOk;
    }
    if (method == "cel-mix") {
        int M = 0;
        elkit::MixtureFitResult fit = [&] {
            if (components == "auto") {
                const int m_max = std::max(1, std::min<int>(6, static_cast<int>(X.T() / (X.N() + 1))));
                auto sel = elkit::select_components_bic(X, m_max, seed);
                M = sel.M;
                return std::move(sel.fit);
            }
            M = std::stoi(components);
            return elkit::fit_gmm(X, M, seed);
        }();
        const double bic = -2.0 * fit.loglik +
                           elkit::gmm_parameter_count(M, static_cast<int>(X.N())) *
                               std::log(static_cast<double>(X.T()));
        elkit::save_mixture_model(out_path, fit, bic);
        std::cout << "cel-mix model with M=" << M << " written to " << out_path.string() << "\n";
        return kExitOk;
    }
    if (method == "gcn-cel") {
        const auto Xs = elkit::standardize(X);
        const auto graph = elkit::build_graph(Xs, delta);
        const elkit::Matrix features = elkit::node_features(Xs, graph);
        elkit::TrainConfig cfg;
        Eigen::Index r;
        if (rank == "auto") {
            std::vector<Eigen::Index> candidates;
            for (Eigen::Index c : {8, 12, 16})
                if (c <= X.N()) candidates.push_back(c);
            if (candidates.empty()) candidates.push_back(X.N());
            r = candidates.size() > 1
                    ? elkit::select_rank(Xs.data, graph, features, candidates, cfg, seed)
                    : candidates.front();
        } else {
            r = std::stoi(rank);
            if (r < 1 || r > X.N()) throw elkit::ConfigError("rank must lie in [1, N]");
        }
        const auto fit = elkit::train(Xs.data, graph, features, r, cfg, seed);
        const auto model = elkit::gcn_energy_model(Xs.data, graph, features, fit.params);
        elkit::save_gaussian_model(out_path, model);

        fs::path stem = out_path;
        stem.replace_extension();
        elkit::save_gcn_checkpoint(fs::path(stem.string() + "_checkpoint.json"), fit.params,
                                   fit.info);
        elkit::write_training_trace(fs::path(stem.string() + "_trace.csv"), fit.trace);
        elkit::export_graph(fs::path(stem.string() + "_graph.csv"), graph);
        if (!fit.info.converged)
            std::cerr << "warning: training hit the epoch limit before convergence\n";
        std::cout << "gcn-cel model (rank " << r << ") written to " << out_path.string() << "\n";
        return kExitOk;
    }
    throw elkit::ConfigError("unknown method '" + method + "'");
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

elkit::ExperimentGrid parse_grid_config(const fs::path& path) {
    const json cfg = load_config(path);
    require_keys(cfg,
                 {"schema_version", "generator", "Ns", "Ks", "Ts", "snr_levels", "repeats",
                  "methods", "base_seed", "lambda_ising", "delta", "kappa_scale", "p_stay", "rho"},
                 "grid config");
    elkit::ExperimentGrid grid;
    grid.generator = require<std::string>(cfg, "generator", "grid config");
    grid.Ns = require<std::vector<int>>(cfg, "Ns", "grid config");
    grid.Ks = require<std::vector<int>>(cfg, "Ks", "grid config");
    grid.Ts = require<std::vector<int>>(cfg, "Ts", "grid config");
    grid.snr_levels = require<std::vector<std::string>>(cfg, "snr_levels", "grid config");
    grid.repeats = require<int>(cfg, "repeats", "grid config");
    grid.methods = require<std::vector<std::string>>(cfg, "methods", "grid config");
    grid.base_seed = require<std::uint64_t>(cfg, "base_seed", "grid config");
    grid.lambda_ising = cfg.value("lambda_ising", grid.lambda_ising);
    grid.delta = cfg.value("delta", grid.delta);
    grid.kappa_scale = cfg.value("kappa_scale", grid.kappa_scale);
    grid.p_stay = cfg.value("p_stay", grid.p_stay);
    grid.rho = cfg.value("rho", grid.rho);
    grid.validate();
    return grid;
}

int cmd_grid(const fs::path& config_path, const fs::path& out_dir, int parallelism) {
    const auto grid = parse_grid_config(config_path);
    const auto stats = elkit::run_grid(grid, out_dir, parallelism);
    std::cout << "grid finished: " << stats.total_units << " units (" << stats.computed_units
              << " computed, " << stats.skipped_units << " resumed)\n"
              << "results: " << (out_dir / "results.csv").string() << "\n"
              << "report:  " << (out_dir / "report.json").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// export-features
// ---------------------------------------------------------------------------

int cmd_export_features(const fs::path& data_path, const fs::path& model_path,
                        const fs::path& out_path) {
    const auto X = elkit::read_timeseries(data_path);
    const auto type = elkit::read_model_type(model_path);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path);
    if (!out) throw elkit::DataError("cannot open for writing: " + out_path.string());

    if (type == "cel") {
        const auto m = elkit::load_gaussian_model(model_path);
        if (m.N() != X.N()) throw elkit::DimensionMismatch("model and data dimensions disagree");
        const elkit::Vector E = elkit::energy_series(X.data, m);
        const elkit::Vector En = elkit::normalize_energy(E, m);
        out << "t,E,E_tilde\n";
        for (Eigen::Index t = 0; t < X.T(); ++t)
            out << t << "," << elkit::format_double(E[t]) << "," << elkit::format_double(En[t])
                << "\n";
    } else if (type == "cel-mix") {
        const auto fit = elkit::load_mixture_model(model_path);
        if (fit.model.N() != X.N())
            throw elkit::DimensionMismatch("model and data dimensions disagree");
        const double e_min = elkit::mixture_energy_minimum(fit.model);
        const double sigma_e = elkit::mixture_sigma_e(fit.model);
        const auto labels = elkit::map_labels(X.data, fit.model);
        out << "t,E,E_tilde,label\n";
        for (Eigen::Index t = 0; t < X.T(); ++t) {
            const double E = elkit::mixture_energy(X.data.row(t).transpose(), fit.model);
            out << t << "," << elkit::format_double(E) << ","
                << elkit::format_double((E - e_min) / sigma_e) << ","
                << labels[static_cast<std::size_t>(t)] << "\n";
        }
    } else {
        throw elkit::ConfigError("export-features supports cel and cel-mix models, got '" + type +
                                 "'");
    }
    std::cout << "features written to " << out_path.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const fs::path& results_path, const fs::path& out_path, std::uint64_t seed) {
    const auto rows = elkit::read_results_csv(results_path);
    const auto report = elkit::aggregate_results(rows, elkit::derive_seed(seed, "report"));
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path);
    if (!out) throw elkit::DataError("cannot open for writing: " + out_path.string());
    out << report.dump(2) << "\n";
    std::cout << "report written to " << out_path.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"energy landscape toolkit: fit, simulate, and score landscape models"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, model_path, results_path;
    std::string method = "cel-mix", components = "auto", rank = "auto", format = "csv";
    double lambda = 1e-2, delta = 0.10;
    std::uint64_t seed = 0;
    int parallelism = 1;

    auto* sim = app.add_subcommand("simulate", "generate a ground-truth bundle");
    sim->add_option("--config", config_path, "simulation config JSON")
        ->required()
        ->envname("ELKIT_CONFIG");
    sim->add_option("--out", out_path, "output directory")->required()->envname("ELKIT_OUT");
    auto* sim_seed = sim->add_option("--seed", seed, "override the config seed");
    sim_seed->envname("ELKIT_SEED");
    sim->add_option("--format", format, "time series format: csv or binary")
        ->check(CLI::IsMember({"csv", "binary"}));

    auto* fit = app.add_subcommand("fit", "fit a landscape model to a time series");
    fit->add_option("--method", method, "del | cel | cel-mix | gcn-cel")
        ->required()
        ->check(CLI::IsMember({"del", "cel", "cel-mix", "gcn-cel"}))
        ->envname("ELKIT_METHOD");
    fit->add_option("--data", data_path, "input time series (CSV or .elkb)")
        ->required()
        ->envname("ELKIT_DATA");
    fit->add_option("--out", out_path, "output model JSON")->required()->envname("ELKIT_OUT");
    fit->add_option("--lambda", lambda, "l2 penalty for the pseudolikelihood fit")
        ->envname("ELKIT_LAMBDA");
    fit->add_option("--components", components, "mixture components: integer or 'auto'")
        ->envname("ELKIT_COMPONENTS");
    fit->add_option("--rank", rank, "low-rank dimension: integer or 'auto'")
        ->envname("ELKIT_RANK");
    fit->add_option("--delta", delta, "graph edge density")->envname("ELKIT_DELTA");
    fit->add_option("--seed", seed, "fitting seed")->envname("ELKIT_SEED");

    auto* grid = app.add_subcommand("grid", "run a simulation-and-recovery experiment grid");
    grid->add_option("--config", config_path, "grid config JSON")
        ->required()
        ->envname("ELKIT_CONFIG");
    grid->add_option("--out", out_path, "output directory")->required()->envname("ELKIT_OUT");
    grid->add_option("--parallelism", parallelism, "worker thread count")
        ->check(CLI::PositiveNumber)
        ->envname("ELKIT_PARALLELISM");

    auto* exp = app.add_subcommand("export-features", "normalized per-timepoint energies");
    exp->add_option("--data", data_path, "input time series")->required()->envname("ELKIT_DATA");
    exp->add_option("--model", model_path, "fitted model JSON")
        ->required()
        ->envname("ELKIT_MODEL");
    exp->add_option("--out", out_path, "output CSV")->required()->envname("ELKIT_OUT");

    auto* rep = app.add_subcommand("report", "aggregate a results CSV into a report");
    rep->add_option("--results", results_path, "results.csv from a grid run")
        ->required()
        ->envname("ELKIT_RESULTS");
    rep->add_option("--out", out_path, "output report JSON")->required()->envname("ELKIT_OUT");
    rep->add_option("--seed", seed, "bootstrap seed")->envname("ELKIT_SEED");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(config_path, out_path,
                                sim_seed->count() > 0 ? std::optional<std::uint64_t>(seed)
                                                      : std::nullopt,
                                format);
        if (fit->parsed())
            return cmd_fit(method, data_path, out_path, lambda, components, rank, delta, seed);
        if (grid->parsed()) return cmd_grid(config_path, out_path, parallelism);
        if (exp->parsed()) return cmd_export_features(data_path, model_path, out_path);
        if (rep->parsed()) return cmd_report(results_path, out_path, seed);
    } catch (const elkit::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const elkit::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const elkit::DimensionMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const elkit::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
