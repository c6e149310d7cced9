#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/gaussian.hpp"
#include "elkit/gcn.hpp"
#include "elkit/io.hpp"
#include "elkit/ising.hpp"
#include "elkit/mixture.hpp"

namespace elkit {

using nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline json matrix_to_json(const Matrix& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw DataError("expected a non-empty matrix array");
    const auto rows = j.size();
    const auto cols = j.front().size();
    Matrix M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        if (j[i].size() != cols) throw DataError("ragged matrix array");
        for (std::size_t c = 0; c < cols; ++c)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
    }
    return M;
}

inline json vector_to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Vector vector_from_json(const json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

inline json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void store_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

inline void check_schema(const json& j, const std::string& expected_type) {
    if (j.value("schema_version", -1) != kModelSchemaVersion)
        throw DataError("unsupported schema_version");
    if (j.value("type", "") != expected_type)
        throw DataError("model type is '" + j.value("type", "") + "', expected '" +
                        expected_type + "'");
}

inline json fit_info_to_json(const FitInfo& info) {
    return {{"converged", info.converged},
            {"iterations", info.iterations},
            {"grad_norm", info.grad_norm},
            {"objective", info.objective}};
}

inline FitInfo fit_info_from_json(const json& j) {
    FitInfo info;
    info.converged = j.value("converged", false);
    info.iterations = j.value("iterations", 0);
    info.grad_norm = j.value("grad_norm", 0.0);
    info.objective = j.value("objective", 0.0);
    return info;
}

}  // namespace detail

inline std::string read_model_type(const std::filesystem::path& path) {
    return detail::load_json(path).value("type", "");
}

// --------------------------------------------------------------------------
// Ising (DEL)
// --------------------------------------------------------------------------

inline void save_ising_model(const std::filesystem::path& path, const IsingFitResult& fit) {
    json j{{"schema_version", kModelSchemaVersion},
           {"type", "del"},
           {"N", fit.model.N()},
           {"lambda_ising", fit.lambda},
           {"W", detail::matrix_to_json(fit.model.W)},
           {"h", detail::vector_to_json(fit.model.h)},
           {"convergence", detail::fit_info_to_json(fit.info)}};
    detail::store_json(path, j);
}

inline IsingFitResult load_ising_model(const std::filesystem::path& path) {
    const json j = detail::load_json(path);
    detail::check_schema(j, "del");
    IsingFitResult fit;
    fit.model.W = detail::matrix_from_json(j.at("W"));
    fit.model.h = detail::vector_from_json(j.at("h"));
    fit.lambda = j.value("lambda_ising", 0.0);
    fit.info = detail::fit_info_from_json(j.value("convergence", json::object()));
    if (fit.model.W.rows() != fit.model.h.size())
        throw DataError("inconsistent Ising model dimensions");
    return fit;
}

// --------------------------------------------------------------------------
// Gaussian (CEL)
// --------------------------------------------------------------------------

inline void save_gaussian_model(const std::filesystem::path& path,
                                const GaussianEnergyModel& m) {
    json j{{"schema_version", kModelSchemaVersion},
           {"type", "cel"},
           {"N", m.N()},
           {"mu", detail::vector_to_json(m.mu())},
           {"h", detail::vector_to_json(m.h())},
           {"S", detail::matrix_to_json(m.S())},
           {"E_min", m.e_min()},
           {"sigma_E", m.sigma_e()}};
    detail::store_json(path, j);
}

inline GaussianEnergyModel load_gaussian_model(const std::filesystem::path& path) {
    const json j = detail::load_json(path);
    detail::check_schema(j, "cel");
    GaussianEnergyModel m(detail::vector_from_json(j.at("mu")),
                          detail::matrix_from_json(j.at("S")),
                          detail::vector_from_json(j.at("h")));
    // cached quantities are recomputed by the constructor; cross-check the file
    if (std::abs(m.e_min() - j.value("E_min", m.e_min())) > 1e-6 * (1.0 + std::abs(m.e_min())))
        throw DataError("stored E_min disagrees with the model parameters");
    return m;
}

// --------------------------------------------------------------------------
// Mixture (CEL-Mix)
// --------------------------------------------------------------------------

inline void save_mixture_model(const std::filesystem::path& path, const MixtureFitResult& fit,
                               double bic = std::numeric_limits<double>::quiet_NaN()) {
    json Ss = json::array();
    for (const auto& S : fit.model.Ss()) Ss.push_back(detail::matrix_to_json(S));
    json j{{"schema_version", kModelSchemaVersion},
           {"type", "cel-mix"},
           {"M", fit.model.M()},
           {"N", fit.model.N()},
           {"eta", detail::vector_to_json(fit.model.eta())},
           {"mus", detail::matrix_to_json(fit.model.mus())},
           {"Ss", std::move(Ss)},
           {"loglik", fit.loglik},
           {"convergence", detail::fit_info_to_json(fit.info)}};
    if (std::isfinite(bic)) j["BIC"] = bic;
    detail::store_json(path, j);
}

inline MixtureFitResult load_mixture_model(const std::filesystem::path& path) {
    const json j = detail::load_json(path);
    detail::check_schema(j, "cel-mix");
    std::vector<Matrix> Ss;
    for (const auto& s : j.at("Ss")) Ss.push_back(detail::matrix_from_json(s));
    MixtureFitResult fit{MixtureEnergyModel(detail::vector_from_json(j.at("eta")),
                                            detail::matrix_from_json(j.at("mus")), Ss),
                         j.value("loglik", 0.0),
                         detail::fit_info_from_json(j.value("convergence", json::object())),
                         {}};
    return fit;
}

/// Per-timepoint labels with the winning responsibility.
inline void write_mixture_labels_csv(const std::filesystem::path& path, const Matrix& X,
                                     const MixtureEnergyModel& m) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "t,label,max_responsibility\n";
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
        const Vector g = responsibilities(X.row(t).transpose(), m);
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < g.size(); ++k)
            if (g[k] > g[best]) best = k;
        out << t << "," << best << "," << format_double(g[best]) << "\n";
    }
}

// --------------------------------------------------------------------------
// GCN checkpoint: JSON metadata plus a binary weight blob
// --------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_gcn_checkpoint(const std::filesystem::path& json_path, const GcnParams& params,
                                const FitInfo& info) {
    std::filesystem::path blob_path = json_path;
    blob_path.replace_extension(".bin");

    std::vector<double> blob;
    json shapes = json::array();
    for (const auto& w : params.layer_weights) {
        shapes.push_back({w.rows(), w.cols()});
        blob.insert(blob.end(), w.data(), w.data() + w.size());
    }
    blob.insert(blob.end(), params.Wz.data(), params.Wz.data() + params.Wz.size());
    blob.insert(blob.end(), params.field_map.data(),
                params.field_map.data() + params.field_map.size());

    std::ofstream bin(blob_path, std::ios::binary);
    if (!bin) throw DataError("cannot open for writing: " + blob_path.string());
    bin.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(double)));

    json j{{"schema_version", kModelSchemaVersion},
           {"type", "gcn-cel"},
           {"checkpoint_version", kCheckpointVersion},
           {"layer_shapes", std::move(shapes)},
           {"rank", params.rank()},
           {"field_dim", params.field_map.size()},
           {"epsilon", params.epsilon},
           {"blob", blob_path.filename().string()},
           {"blob_doubles", blob.size()},
           {"convergence", detail::fit_info_to_json(info)}};
    detail::store_json(json_path, j);
}

inline std::pair<GcnParams, FitInfo> load_gcn_checkpoint(const std::filesystem::path& json_path) {
    const json j = detail::load_json(json_path);
    detail::check_schema(j, "gcn-cel");
    if (j.value("checkpoint_version", 0u) != kCheckpointVersion)
        throw DataError("unsupported checkpoint version");

    const std::filesystem::path blob_path = json_path.parent_path() / j.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw DataError("cannot open for reading: " + blob_path.string());
    const auto expected = j.at("blob_doubles").get<std::size_t>();
    std::vector<double> blob(expected);
    bin.read(reinterpret_cast<char*>(blob.data()),
             static_cast<std::streamsize>(expected * sizeof(double)));
    if (!bin) throw DataError("truncated checkpoint blob: " + blob_path.string());

    GcnParams params;
    params.epsilon = j.at("epsilon").get<double>();
    std::size_t at = 0;
    auto take = [&](Eigen::Index rows, Eigen::Index cols) {
        const auto count = static_cast<std::size_t>(rows * cols);
        if (at + count > blob.size()) throw DataError("checkpoint blob too short");
        Matrix M(rows, cols);
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(at),
                  blob.begin() + static_cast<std::ptrdiff_t>(at + count), M.data());
        at += count;
        return M;
    };
    for (const auto& shape : j.at("layer_shapes"))
        params.layer_weights.push_back(
            take(shape[0].get<Eigen::Index>(), shape[1].get<Eigen::Index>()));
    const auto d = j.at("field_dim").get<Eigen::Index>();
    params.Wz = take(d, j.at("rank").get<Eigen::Index>());
    params.field_map = take(d, 1).col(0);
    if (at != blob.size()) throw DataError("checkpoint blob has trailing data");
    return {std::move(params), detail::fit_info_from_json(j.value("convergence", json::object()))};
}

/// Training trace CSV (epoch, loss, grad_norm).
inline void write_training_trace(const std::filesystem::path& path,
                                 const std::vector<TraceRow>& trace) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "epoch,loss,grad_norm\n";
    for (const auto& row : trace)
        out << row.epoch << "," << format_double(row.loss) << "," << format_double(row.grad_norm)
            << "\n";
}

}  // namespace elkit
