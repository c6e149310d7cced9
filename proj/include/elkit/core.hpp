#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "elkit/errors.hpp"

namespace elkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// T x N multivariate time series: one row per time point, one column per
/// ROI/variable. Column names travel with the data for CSV round trips.
struct TimeSeriesMatrix {
    Matrix data;
    std::vector<std::string> names;

    TimeSeriesMatrix() = default;
    explicit TimeSeriesMatrix(Matrix d, std::vector<std::string> n = {})
        : data(std::move(d)), names(std::move(n)) {
        if (names.empty()) {
            names.reserve(static_cast<std::size_t>(data.cols()));
            for (Eigen::Index j = 0; j < data.cols(); ++j)
                names.push_back("v" + std::to_string(j));
        }
        validate();
    }

    Eigen::Index T() const { return data.rows(); }
    Eigen::Index N() const { return data.cols(); }

    void validate() const {
        if (data.rows() < 2 || data.cols() < 2)
            throw DataError("time series requires T >= 2 and N >= 2, got T=" +
                            std::to_string(data.rows()) + " N=" + std::to_string(data.cols()));
        if (!data.allFinite()) throw DataError("time series contains non-finite entries");
        if (names.size() != static_cast<std::size_t>(data.cols()))
            throw DataError("column name count does not match N");
    }
};

/// T x N matrix with entries in {-1, +1}, stored as doubles for direct use in
/// Ising algebra.
struct BinaryStateMatrix {
    Matrix data;

    BinaryStateMatrix() = default;
    explicit BinaryStateMatrix(Matrix d) : data(std::move(d)) { validate(); }

    Eigen::Index T() const { return data.rows(); }
    Eigen::Index N() const { return data.cols(); }

    void validate() const {
        for (Eigen::Index j = 0; j < data.cols(); ++j)
            for (Eigen::Index i = 0; i < data.rows(); ++i)
                if (data(i, j) != 1.0 && data(i, j) != -1.0)
                    throw DataError("binary state matrix entry not in {-1,+1}");
    }
};

struct Seed {
    std::uint64_t value = 0;
};

/// Quantile with linear interpolation between order statistics,
/// p in [0, 1] of an unsorted sample.
inline double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw DataError("quantile of empty sample");
    std::sort(v.begin(), v.end());
    if (p <= 0.0) return v.front();
    if (p >= 1.0) return v.back();
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

/// Column mean and unbiased (T-1) standard deviation.
inline std::pair<Vector, Vector> column_moments(const Matrix& X) {
    const auto T = static_cast<double>(X.rows());
    Vector mean = X.colwise().mean();
    Vector sd(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        sd[j] = std::sqrt((X.col(j).array() - mean[j]).square().sum() / (T - 1.0));
    return {mean, sd};
}

/// Transform each column to zero mean and unit (T-1) standard deviation.
/// Throws ConstantColumn on a degenerate ROI.
inline TimeSeriesMatrix standardize(const TimeSeriesMatrix& X) {
    auto [mean, sd] = column_moments(X.data);
    Matrix out(X.T(), X.N());
    for (Eigen::Index j = 0; j < X.N(); ++j) {
        if (sd[j] == 0.0) throw ConstantColumn(static_cast<int>(j));
        out.col(j) = (X.data.col(j).array() - mean[j]) / sd[j];
    }
    return TimeSeriesMatrix(std::move(out), X.names);
}

/// Median of a column; with even T the midpoint of the two central order
/// statistics.
inline double column_median(const Vector& col) {
    std::vector<double> v(col.data(), col.data() + col.size());
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

/// Per-column median split: +1 strictly above the column median, -1 otherwise.
/// Ties at the median map to -1, so a constant column binarizes to all -1.
inline BinaryStateMatrix median_binarize(const TimeSeriesMatrix& X) {
    Matrix out(X.T(), X.N());
    for (Eigen::Index j = 0; j < X.N(); ++j) {
        const double med = column_median(X.data.col(j));
        for (Eigen::Index i = 0; i < X.T(); ++i)
            out(i, j) = X.data(i, j) > med ? 1.0 : -1.0;
    }
    return BinaryStateMatrix(std::move(out));
}

}  // namespace elkit
