#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"

namespace elkit {

// ---------------------------------------------------------------------------
// CSV time series: header row names the columns (ROIs), one row per time point.
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline void write_timeseries_csv(const std::filesystem::path& path, const TimeSeriesMatrix& X) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (Eigen::Index j = 0; j < X.N(); ++j)
        out << (j ? "," : "") << X.names[static_cast<std::size_t>(j)];
    out << "\n";
    for (Eigen::Index i = 0; i < X.T(); ++i) {
        for (Eigen::Index j = 0; j < X.N(); ++j)
            out << (j ? "," : "") << format_double(X.data(i, j));
        out << "\n";
    }
}

inline TimeSeriesMatrix read_timeseries_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV: " + path.string());
    std::vector<std::string> names = split_csv_line(line);
    const std::size_t N = names.size();
    std::vector<double> values;
    std::size_t T = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != N)
            throw DataError("row " + std::to_string(T + 1) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(N) + " in " + path.string());
        for (const auto& f : fields) {
            std::size_t pos = 0;
            double v;
            try {
                v = std::stod(f, &pos);
            } catch (const std::exception&) {
                throw DataError("non-numeric field '" + f + "' in " + path.string());
            }
            if (pos != f.size()) throw DataError("non-numeric field '" + f + "' in " + path.string());
            values.push_back(v);
        }
        ++T;
    }
    Matrix data(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < N; ++j)
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * N + j];
    return TimeSeriesMatrix(std::move(data), std::move(names));
}

// ---------------------------------------------------------------------------
// Binary columnar cache. Layout (little-endian):
//   magic   uint32  0x454C4B43 ("CKLE" on disk, read back as ELKC)
//   version uint8   1
//   T       uint64
//   N       uint64
//   names   N x (uint32 length + bytes)
//   data    N columns of T float64 each, column-major
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCacheMagic = 0x454C4B43u;
inline constexpr std::uint8_t kCacheVersion = 1;

inline void write_timeseries_cache(const std::filesystem::path& path, const TimeSeriesMatrix& X) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    auto put = [&out](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    put(&kCacheMagic, sizeof kCacheMagic);
    put(&kCacheVersion, sizeof kCacheVersion);
    const std::uint64_t T = static_cast<std::uint64_t>(X.T());
    const std::uint64_t N = static_cast<std::uint64_t>(X.N());
    put(&T, sizeof T);
    put(&N, sizeof N);
    for (const auto& name : X.names) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        put(&len, sizeof len);
        put(name.data(), name.size());
    }
    for (std::uint64_t j = 0; j < N; ++j) {
        std::vector<double> col(T);
        for (std::uint64_t i = 0; i < T; ++i)
            col[i] = X.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        put(col.data(), col.size() * sizeof(double));
    }
}

inline TimeSeriesMatrix read_timeseries_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    auto get = [&in, &path](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw DataError("truncated cache file: " + path.string());
    };
    std::uint32_t magic = 0;
    std::uint8_t version = 0;
    get(&magic, sizeof magic);
    if (magic != kCacheMagic) throw DataError("bad magic number in " + path.string());
    get(&version, sizeof version);
    if (version != kCacheVersion)
        throw DataError("unsupported cache version " + std::to_string(version));
    std::uint64_t T = 0, N = 0;
    get(&T, sizeof T);
    get(&N, sizeof N);
    std::vector<std::string> names(N);
    for (auto& name : names) {
        std::uint32_t len = 0;
        get(&len, sizeof len);
        name.resize(len);
        if (len) get(name.data(), len);
    }
    Matrix data(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    std::vector<double> col(T);
    for (std::uint64_t j = 0; j < N; ++j) {
        get(col.data(), col.size() * sizeof(double));
        for (std::uint64_t i = 0; i < T; ++i)
            data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    }
    return TimeSeriesMatrix(std::move(data), std::move(names));
}

/// Dispatch on extension: ".elkb" binary cache, anything else CSV.
inline TimeSeriesMatrix read_timeseries(const std::filesystem::path& path) {
    if (path.extension() == ".elkb") return read_timeseries_cache(path);
    return read_timeseries_csv(path);
}

// Small helpers shared by the CLI for label/center files.

inline void write_labels_csv(const std::filesystem::path& path, const std::vector<int>& z,
                             const std::string& header = "t,z") {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << header << "\n";
    for (std::size_t t = 0; t < z.size(); ++t) out << t << "," << z[t] << "\n";
}

inline std::vector<int> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<int> z;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() < 2) throw DataError("bad label row in " + path.string());
        z.push_back(std::stoi(fields[1]));
    }
    return z;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& M) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        for (Eigen::Index j = 0; j < M.cols(); ++j)
            out << (j ? "," : "") << format_double(M(i, j));
        out << "\n";
    }
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open for reading: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& f : fields) row.push_back(std::stod(f));
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError("ragged matrix CSV: " + path.string());
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("empty matrix CSV: " + path.string());
    Matrix M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return M;
}

}  // namespace elkit
