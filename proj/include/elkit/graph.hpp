#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"

namespace elkit {

/// Subject-specific functional graph: correlation matrix, quantile threshold,
/// binary and weighted adjacency, and the self-loop normalized weight matrix
/// consumed by the GCN.
struct FunctionalGraph {
    Matrix R;      // N x N Pearson correlations
    double tau;    // threshold at the (1-delta)-quantile of |R_ij|, i<j
    Matrix A;      // binary adjacency, zero diagonal
    Matrix B;      // |R| masked by A
    Matrix Bnorm;  // D^{-1/2} (I + B) D^{-1/2}
    double delta;  // requested edge density
};

/// Sample Pearson correlation matrix of the columns. Symmetric with unit
/// diagonal; entries clamped into [-1, 1] against round-off.
inline Matrix pearson_correlation(const TimeSeriesMatrix& X) {
    const TimeSeriesMatrix Z = standardize(X);  // throws ConstantColumn
    const auto T = static_cast<double>(Z.T());
    Matrix R = (Z.data.transpose() * Z.data) / (T - 1.0);
    R = 0.5 * (R + R.transpose());
    for (Eigen::Index i = 0; i < R.rows(); ++i) {
        R(i, i) = 1.0;
        for (Eigen::Index j = 0; j < R.cols(); ++j)
            R(i, j) = std::clamp(R(i, j), -1.0, 1.0);
    }
    return R;
}

/// Symmetric normalization with self-loops: D^{-1/2} (I + B) D^{-1/2} where
/// D_ii = sum_j (I + B)_ij. D_ii >= 1 since the identity always contributes.
inline Matrix normalize_weights(const Matrix& B) {
    const Eigen::Index N = B.rows();
    Matrix IB = Matrix::Identity(N, N) + B;
    Vector dinv(N);
    for (Eigen::Index i = 0; i < N; ++i) dinv[i] = 1.0 / std::sqrt(IB.row(i).sum());
    return dinv.asDiagonal() * IB * dinv.asDiagonal();
}

/// Threshold |R_ij| at the (1-delta)-quantile of the off-diagonal upper
/// triangle. Ties at tau are kept (>= comparison); the diagonal stays zero,
/// self-loops enter only through the normalization.
inline FunctionalGraph threshold_graph(const Matrix& R, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("edge density must be in (0,1)");
    const Eigen::Index N = R.rows();
    std::vector<double> offdiag;
    offdiag.reserve(static_cast<std::size_t>(N * (N - 1) / 2));
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = i + 1; j < N; ++j) offdiag.push_back(std::abs(R(i, j)));
    FunctionalGraph g;
    g.R = R;
    g.delta = delta;
    g.tau = quantile(offdiag, 1.0 - delta);
    g.A = Matrix::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = i + 1; j < N; ++j)
            if (std::abs(R(i, j)) >= g.tau) g.A(i, j) = g.A(j, i) = 1.0;
    g.B = R.cwiseAbs().cwiseProduct(g.A);
    g.Bnorm = normalize_weights(g.B);
    return g;
}

inline FunctionalGraph build_graph(const TimeSeriesMatrix& X, double delta = 0.10) {
    return threshold_graph(pearson_correlation(X), delta);
}

/// Edge-list CSV (i, j, |R_ij|) for kept edges plus a JSON sidecar with
/// tau, delta, N. The sidecar is written as <path>.json.
inline void export_graph(const std::filesystem::path& edges_csv, const FunctionalGraph& g) {
    std::ofstream out(edges_csv);
    if (!out) throw DataError("cannot open for writing: " + edges_csv.string());
    out << "i,j,abs_r\n";
    const Eigen::Index N = g.A.rows();
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = i + 1; j < N; ++j)
            if (g.A(i, j) != 0.0) out << i << "," << j << "," << std::abs(g.R(i, j)) << "\n";
    std::filesystem::path sidecar = edges_csv;
    sidecar += ".json";
    std::ofstream meta(sidecar);
    meta << "{\"tau\": " << g.tau << ", \"delta\": " << g.delta << ", \"N\": " << N << "}\n";
}

}  // namespace elkit
