#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/eval.hpp"
#include "elkit/gaussian.hpp"
#include "elkit/gcn.hpp"
#include "elkit/io.hpp"
#include "elkit/ising.hpp"
#include "elkit/mixture.hpp"
#include "elkit/rng.hpp"
#include "elkit/simulate.hpp"
#include "elkit/stats.hpp"

namespace elkit {

/// Separation regimes used across the simulation study. For SLDS the value is
/// the SNR target of the center placement; for Kuramoto it selects a
/// (locking gain, diffusion) pair calibrated to land in the same regime.
inline double snr_level_value(const std::string& level) {
    if (level == "low") return 1.0;
    if (level == "medium") return 2.0;
    if (level == "high") return 3.0;
    try {
        std::size_t pos = 0;
        const double v = std::stod(level, &pos);
        if (pos == level.size() && v >= 0.0) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("unknown SNR level '" + level + "'");
}

struct KuramotoRegime {
    double alpha;
    double zeta;
};

inline KuramotoRegime kuramoto_regime(const std::string& level) {
    if (level == "low") return {0.8, 0.35};
    if (level == "medium") return {1.2, 0.12};
    if (level == "high") return {2.5, 0.03};
    throw ConfigError("kuramoto generator needs a named SNR level, got '" + level + "'");
}

struct ExperimentGrid {
    std::string generator = "slds";  // slds | kuramoto
    std::vector<int> Ns{6, 8, 10};
    std::vector<int> Ks{3};
    std::vector<int> Ts{500};
    std::vector<std::string> snr_levels{"medium", "high"};
    int repeats = 20;
    std::vector<std::string> methods{"del", "cel-mix"};
    std::uint64_t base_seed = 0;
    double lambda_ising = 1e-2;
    double delta = 0.10;
    double kappa_scale = 0.5;
    double p_stay = 0.9;
    double rho = 0.3;

    void validate() const {
        if (generator != "slds" && generator != "kuramoto")
            throw ConfigError("generator must be slds or kuramoto");
        if (Ns.empty() || Ks.empty() || Ts.empty() || snr_levels.empty() || methods.empty())
            throw ConfigError("grid axes must be non-empty");
        if (repeats < 1) throw ConfigError("repeats must be positive");
        for (const auto& m : methods)
            if (m != "del" && m != "cel" && m != "cel-mix" && m != "gcn-cel")
                throw ConfigError("unknown method '" + m + "'");
        for (const auto& s : snr_levels) snr_level_value(s);
    }
};

struct Condition {
    std::string generator;
    int N, K, T;
    std::string snr;

    std::string tag() const {
        return generator + "|N=" + std::to_string(N) + "|K=" + std::to_string(K) +
               "|T=" + std::to_string(T) + "|snr=" + snr;
    }
    auto key() const { return std::tie(generator, N, K, T, snr); }
};

struct ResultRow {
    Condition cond;
    std::string method;
    std::uint64_t seed = 0;
    double br = std::numeric_limits<double>::quiet_NaN();
    double tma = std::numeric_limits<double>::quiet_NaN();
    double sda = std::numeric_limits<double>::quiet_NaN();
    std::string error;

    bool ok() const { return error.empty(); }
    auto key() const { return std::make_tuple(cond.key(), method, seed); }
};

/// Labels plus basin count produced by one method on one dataset.
struct MethodLabels {
    std::vector<int> labels;
    int num_basins = 0;
};

inline MethodLabels run_method(const std::string& method, const TimeSeriesMatrix& X, int K,
                               std::uint64_t seed, const ExperimentGrid& grid) {
    MethodLabels out;
    if (method == "del") {
        const auto Q = median_binarize(X);
        const auto fit = fit_ising_ple(Q, grid.lambda_ising);
        auto basins = assign_basins(Q, fit.model);
        out.labels = std::move(basins.labels);
        out.num_basins = static_cast<int>(basins.modes.rows());
    } else if (method == "cel") {
        fit_gaussian_mle(X);  // validates; unimodal landscape has one basin
        out.labels.assign(static_cast<std::size_t>(X.T()), 0);
        out.num_basins = 1;
    } else if (method == "cel-mix") {
        const auto fit = fit_gmm(X, K, seed);
        out.labels = map_labels(X.data, fit.model);
        out.num_basins = K;
    } else if (method == "gcn-cel") {
        const auto Xs = standardize(X);
        const auto graph = build_graph(Xs, grid.delta);
        const Matrix features = node_features(Xs, graph);
        std::vector<Eigen::Index> candidates;
        for (Eigen::Index r : {8, 12, 16})
            if (r <= X.N()) candidates.push_back(r);
        if (candidates.empty()) candidates.push_back(X.N());
        TrainConfig cfg;
        const Eigen::Index r =
            candidates.size() > 1 && X.T() >= 3 * (X.N() + 1)
                ? select_rank(Xs.data, graph, features, candidates, cfg, seed)
                : candidates.front();
        train(Xs.data, graph, features, r, cfg, seed);
        out.labels.assign(static_cast<std::size_t>(X.T()), 0);
        out.num_basins = 1;
    } else {
        throw ConfigError("unknown method '" + method + "'");
    }
    return out;
}

/// Simulate one unit and score every method on the same data (pairing by
/// simulation unit).
inline std::vector<ResultRow> run_unit(const ExperimentGrid& grid, const Condition& cond,
                                       int repeat) {
    const std::uint64_t seed =
        derive_seed(grid.base_seed, cond.tag() + "/rep=" + std::to_string(repeat));
    SimOutput sim;
    if (cond.generator == "slds") {
        const auto cfg = make_slds_config(cond.N, cond.K, cond.T, snr_level_value(cond.snr), seed,
                                          grid.rho, grid.p_stay);
        sim = simulate_slds(cfg, derive_seed(seed, "slds-run"));
    } else {
        const auto regime = kuramoto_regime(cond.snr);
        auto cfg = make_kuramoto_config(cond.N, cond.K, cond.T, seed, regime.alpha, regime.zeta,
                                        grid.p_stay);
        sim = simulate_kuramoto(cfg, derive_seed(seed, "kuramoto-run"));
    }
    const double kappa = 2.0 * grid.kappa_scale * default_kappa(sim.centers);

    std::vector<ResultRow> rows;
    for (const auto& method : grid.methods) {
        ResultRow row;
        row.cond = cond;
        row.method = method;
        row.seed = seed;
        try {
            const auto res = run_method(method, sim.X, cond.K, derive_seed(seed, method), grid);
            const auto report = score_recovery(sim.X.data, res.labels, res.num_basins,
                                               sim.centers, sim.z, sim.P_star, kappa);
            row.br = report.br;
            row.tma = report.tma;
            row.sda = report.sda;
        } catch (const std::exception& e) {
            std::string msg = e.what();
            for (auto& c : msg)
                if (c == ',' || c == '\n' || c == '\r') c = ';';
            row.error = msg;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsHeader = "generator,method,N,K,T,snr,seed,br,tma,sda,error";

inline std::string result_row_to_csv(const ResultRow& r) {
    auto fmt = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
    return r.cond.generator + "," + r.method + "," + std::to_string(r.cond.N) + "," +
           std::to_string(r.cond.K) + "," + std::to_string(r.cond.T) + "," + r.cond.snr + "," +
           std::to_string(r.seed) + "," + fmt(r.br) + "," + fmt(r.tma) + "," + fmt(r.sda) + "," +
           r.error;
}

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open results: " + path.string());
    std::string line;
    if (!std::getline(in, line)) return {};
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 11) throw DataError("bad results row: " + line);
        ResultRow r;
        r.cond = {f[0], std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]), f[5]};
        r.method = f[1];
        r.seed = std::stoull(f[6]);
        r.br = std::stod(f[7]);
        r.tma = std::stod(f[8]);
        r.sda = std::stod(f[9]);
        r.error = f[10];
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_results_csv(const std::filesystem::path& path, std::vector<ResultRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot open for writing: " + tmp);
        out << kResultsHeader << "\n";
        for (const auto& r : rows) out << result_row_to_csv(r) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Aggregation: per-condition summaries, paired tests, BH families
// ---------------------------------------------------------------------------

inline nlohmann::json aggregate_results(const std::vector<ResultRow>& rows,
                                        std::uint64_t report_seed = 1234,
                                        double q = 0.05) {
    using nlohmann::json;
    const std::array<std::string, 3> metric_names{"br", "tma", "sda"};
    auto metric_of = [](const ResultRow& r, std::size_t i) {
        return i == 0 ? r.br : (i == 1 ? r.tma : r.sda);
    };

    std::map<std::tuple<std::string, int, int, int, std::string>,
             std::map<std::string, std::vector<const ResultRow*>>>
        grouped;
    for (const auto& r : rows) grouped[r.cond.key()][r.method].push_back(&r);

    json conditions = json::array();
    // one BH family per metric across conditions, in deterministic order
    std::array<std::vector<double>, 3> family_p;
    std::array<std::vector<std::size_t>, 3> family_cond_index;

    std::size_t cond_index = 0;
    for (const auto& [key, methods] : grouped) {
        json jc;
        jc["generator"] = std::get<0>(key);
        jc["N"] = std::get<1>(key);
        jc["K"] = std::get<2>(key);
        jc["T"] = std::get<3>(key);
        jc["snr"] = std::get<4>(key);

        json jmethods = json::object();
        for (const auto& [method, ptrs] : methods) {
            json jm;
            jm["repeats"] = ptrs.size();
            int failures = 0;
            for (std::size_t i = 0; i < metric_names.size(); ++i) {
                std::vector<double> values;
                for (const auto* r : ptrs) {
                    if (!r->ok()) continue;
                    values.push_back(metric_of(*r, i));
                }
                json jmetric;
                if (!values.empty()) {
                    double mean = 0.0;
                    for (double v : values) mean += v;
                    mean /= static_cast<double>(values.size());
                    jmetric["mean"] = mean;
                    if (values.size() >= 2) {
                        auto [lo, hi] = bootstrap_ci(
                            values, 0.95,
                            derive_seed(report_seed, std::get<0>(key) + method +
                                                         metric_names[i] +
                                                         std::to_string(cond_index)));
                        jmetric["ci_lo"] = lo;
                        jmetric["ci_hi"] = hi;
                    }
                }
                jm[metric_names[i]] = std::move(jmetric);
            }
            for (const auto* r : ptrs)
                if (!r->ok()) ++failures;
            jm["failures"] = failures;
            jmethods[method] = std::move(jm);
        }
        jc["methods"] = std::move(jmethods);

        // paired comparison: cel-mix minus del, matched by seed
        const auto it_del = methods.find("del");
        const auto it_mix = methods.find("cel-mix");
        if (it_del != methods.end() && it_mix != methods.end()) {
            std::map<std::uint64_t, const ResultRow*> del_by_seed;
            for (const auto* r : it_del->second)
                if (r->ok()) del_by_seed[r->seed] = r;
            json jp = json::object();
            for (std::size_t i = 0; i < metric_names.size(); ++i) {
                std::vector<double> diffs;
                for (const auto* r : it_mix->second) {
                    if (!r->ok()) continue;
                    const auto it = del_by_seed.find(r->seed);
                    if (it == del_by_seed.end()) continue;
                    diffs.push_back(metric_of(*r, i) - metric_of(*it->second, i));
                }
                json jd;
                jd["n_pairs"] = diffs.size();
                if (!diffs.empty()) jd["median_diff"] = median(diffs);
                try {
                    const auto w = wilcoxon_signed_rank(diffs);
                    jd["p"] = w.p;
                    jd["exact"] = w.exact;
                    family_p[i].push_back(w.p);
                    family_cond_index[i].push_back(cond_index);
                } catch (const TooFewSamples&) {
                    jd["flag"] = "no_nonzero_diffs";
                }
                jp[metric_names[i]] = std::move(jd);
            }
            jc["paired_cel_mix_vs_del"] = std::move(jp);
        }
        conditions.push_back(std::move(jc));
        ++cond_index;
    }

    json bh_families = json::object();
    for (std::size_t i = 0; i < metric_names.size(); ++i) {
        if (family_p[i].empty()) continue;
        const auto bh = benjamini_hochberg(family_p[i], q);
        json jf;
        jf["p"] = family_p[i];
        jf["adjusted"] = bh.adjusted;
        jf["reject"] = bh.reject;
        jf["condition_index"] = family_cond_index[i];
        bh_families[metric_names[i]] = std::move(jf);
        // annotate conditions with the adjusted values
        for (std::size_t t = 0; t < family_p[i].size(); ++t) {
            auto& jc = conditions[family_cond_index[i][t]];
            jc["paired_cel_mix_vs_del"][metric_names[i]]["p_adjusted"] = bh.adjusted[t];
            jc["paired_cel_mix_vs_del"][metric_names[i]]["significant"] =
                static_cast<bool>(bh.reject[t]);
        }
    }

    return json{{"schema_version", 1},
                {"q", q},
                {"conditions", std::move(conditions)},
                {"bh_families", std::move(bh_families)}};
}

// ---------------------------------------------------------------------------
// Runner with deterministic parallelism and resume
// ---------------------------------------------------------------------------

struct GridRunStats {
    int total_units = 0;
    int computed_units = 0;
    int skipped_units = 0;
};

/// Execute the grid into out_dir/results.csv + out_dir/report.json. Work
/// items are (condition, repeat) pairs; completed rows found in an existing
/// results.csv are not recomputed. Output order is canonical regardless of
/// thread scheduling or resume history.
inline GridRunStats run_grid(const ExperimentGrid& grid, const std::filesystem::path& out_dir,
                             int parallelism = 1) {
    grid.validate();
    if (parallelism < 1) throw ConfigError("parallelism must be positive");
    std::filesystem::create_directories(out_dir);
    const auto results_path = out_dir / "results.csv";

    std::map<std::tuple<std::tuple<std::string, int, int, int, std::string>, std::string,
                        std::uint64_t>,
             ResultRow>
        have;
    if (std::filesystem::exists(results_path))
        for (auto& r : read_results_csv(results_path)) have.emplace(r.key(), std::move(r));

    struct Unit {
        Condition cond;
        int repeat;
    };
    std::vector<Unit> pending;
    GridRunStats stats;
    for (const int N : grid.Ns)
        for (const int K : grid.Ks)
            for (const int T : grid.Ts)
                for (const auto& snr : grid.snr_levels)
                    for (int rep = 0; rep < grid.repeats; ++rep) {
                        ++stats.total_units;
                        const Condition cond{grid.generator, N, K, T, snr};
                        const std::uint64_t seed = derive_seed(
                            grid.base_seed, cond.tag() + "/rep=" + std::to_string(rep));
                        bool complete = true;
                        for (const auto& method : grid.methods)
                            complete &= have.count(std::make_tuple(cond.key(), method, seed)) > 0;
                        if (complete)
                            ++stats.skipped_units;
                        else
                            pending.push_back({cond, rep});
                    }

    std::vector<std::vector<ResultRow>> computed(pending.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            computed[i] = run_unit(grid, pending[i].cond, pending[i].repeat);
        }
    };
    if (parallelism == 1 || pending.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(parallelism, static_cast<int>(pending.size()));
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    stats.computed_units = static_cast<int>(pending.size());

    for (auto& unit_rows : computed)
        for (auto& r : unit_rows) have.insert_or_assign(r.key(), std::move(r));
    std::vector<ResultRow> all;
    all.reserve(have.size());
    for (auto& [k, r] : have) all.push_back(std::move(r));
    write_results_csv(results_path, all);

    const auto report = aggregate_results(read_results_csv(results_path),
                                          derive_seed(grid.base_seed, "report"));
    std::ofstream out(out_dir / "report.json");
    out << report.dump(2) << "\n";
    return stats;
}

}  // namespace elkit
