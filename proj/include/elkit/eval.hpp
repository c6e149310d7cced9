#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <optional>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"

namespace elkit {

/// Cost assigned to dummy rows/columns when the recovered basin count differs
/// from K; any finite real matching beats a dummy one.
inline constexpr double kDummyCost = 1e15;

/// Empirical mean of the rows assigned to each basin 0..num_basins-1. A basin
/// with no points yields an empty slot; it receives no match downstream and
/// counts as unrecovered in BR.
inline std::vector<std::optional<Vector>> basin_centroids(const Matrix& X,
                                                          const std::vector<int>& labels,
                                                          int num_basins) {
    if (static_cast<Eigen::Index>(labels.size()) != X.rows())
        throw DimensionMismatch("basin_centroids: labels must cover every row");
    std::vector<Vector> sums(static_cast<std::size_t>(num_basins), Vector::Zero(X.cols()));
    std::vector<int> counts(static_cast<std::size_t>(num_basins), 0);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const int b = labels[t];
        if (b < 0 || b >= num_basins) throw DataError("basin label out of range");
        sums[static_cast<std::size_t>(b)] += X.row(static_cast<Eigen::Index>(t)).transpose();
        ++counts[static_cast<std::size_t>(b)];
    }
    std::vector<std::optional<Vector>> out(static_cast<std::size_t>(num_basins));
    for (int b = 0; b < num_basins; ++b)
        if (counts[static_cast<std::size_t>(b)] > 0)
            out[static_cast<std::size_t>(b)] =
                sums[static_cast<std::size_t>(b)] / counts[static_cast<std::size_t>(b)];
    return out;
}

/// Strict variant of the centroid computation per the operation contract.
inline Matrix basin_centroids_strict(const Matrix& X, const std::vector<int>& labels,
                                     int num_basins) {
    auto cents = basin_centroids(X, labels, num_basins);
    Matrix out(num_basins, X.cols());
    for (int b = 0; b < num_basins; ++b) {
        if (!cents[static_cast<std::size_t>(b)]) throw EmptyBasin(b);
        out.row(b) = cents[static_cast<std::size_t>(b)]->transpose();
    }
    return out;
}

struct Matching {
    std::vector<int> perm;  // recovered basin -> true state, -1 when unmatched
    Matrix cost;            // padded square cost matrix actually assigned
    double total_cost = 0.0;

    /// Inverse map: true state -> recovered basin, -1 when none matched.
    std::vector<int> matched_recovered(int K) const {
        std::vector<int> inv(static_cast<std::size_t>(K), -1);
        for (std::size_t b = 0; b < perm.size(); ++b)
            if (perm[b] >= 0 && perm[b] < K) inv[static_cast<std::size_t>(perm[b])] =
                static_cast<int>(b);
        return inv;
    }
};

namespace detail {

/// O(n^3) Hungarian algorithm (potentials + augmenting paths) for a square
/// cost matrix; returns the column assigned to each row.
inline std::vector<int> hungarian_square(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<int> p(static_cast<std::size_t>(n + 1), 0);     // column -> row (1-based)
    std::vector<int> way(static_cast<std::size_t>(n + 1), 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1),
                                 std::numeric_limits<double>::infinity());
        std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = std::numeric_limits<double>::infinity();
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] > 0)
            row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_to_col;
}

}  // namespace detail

/// Optimal one-to-one matching between recovered centroids and true centers
/// under Euclidean cost. Count mismatches are padded with dummy rows/columns
/// at kDummyCost; matches against dummies come back as -1.
inline Matching hungarian_match(const std::vector<std::optional<Vector>>& centroids,
                                const Matrix& true_centers) {
    const int B = static_cast<int>(centroids.size());
    const int K = static_cast<int>(true_centers.rows());
    const int n = std::max(B, K);
    if (n == 0) throw DataError("hungarian_match: nothing to match");
    Matrix cost = Matrix::Constant(n, n, kDummyCost);
    for (int b = 0; b < B; ++b) {
        if (!centroids[static_cast<std::size_t>(b)]) continue;
        for (int k = 0; k < K; ++k)
            cost(b, k) = (*centroids[static_cast<std::size_t>(b)] -
                          true_centers.row(k).transpose())
                             .norm();
    }
    const auto row_to_col = detail::hungarian_square(cost);
    Matching m;
    m.cost = cost;
    m.perm.assign(static_cast<std::size_t>(B), -1);
    for (int b = 0; b < B; ++b) {
        const int k = row_to_col[static_cast<std::size_t>(b)];
        if (k < K && centroids[static_cast<std::size_t>(b)] &&
            cost(b, k) < kDummyCost)
            m.perm[static_cast<std::size_t>(b)] = k;
    }
    for (int r = 0; r < n; ++r) m.total_cost += cost(r, row_to_col[static_cast<std::size_t>(r)]);
    return m;
}

/// Fraction of true states whose matched centroid lies within kappa.
inline double basin_recovery(const Matching& matching,
                             const std::vector<std::optional<Vector>>& centroids,
                             const Matrix& true_centers, double kappa) {
    const int K = static_cast<int>(true_centers.rows());
    const auto inv = matching.matched_recovered(K);
    int hits = 0;
    for (int k = 0; k < K; ++k) {
        const int b = inv[static_cast<std::size_t>(k)];
        if (b < 0 || !centroids[static_cast<std::size_t>(b)]) continue;
        if ((*centroids[static_cast<std::size_t>(b)] - true_centers.row(k).transpose()).norm() <=
            kappa)
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(K);
}

/// Default tolerance: half the minimum pairwise distance between true centers.
inline double default_kappa(const Matrix& true_centers) {
    double min_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < true_centers.rows(); ++a)
        for (Eigen::Index b = a + 1; b < true_centers.rows(); ++b)
            min_dist = std::min(min_dist, (true_centers.row(a) - true_centers.row(b)).norm());
    return 0.5 * min_dist;
}

/// Remap recovered labels through the matching; unmatched basins become -1.
inline std::vector<int> align_labels(const std::vector<int>& labels, const Matching& matching) {
    std::vector<int> out(labels.size(), -1);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const int b = labels[t];
        if (b >= 0 && b < static_cast<int>(matching.perm.size())) out[t] = matching.perm[static_cast<std::size_t>(b)];
    }
    return out;
}

/// Row-normalized transition counts over consecutive label pairs. Pairs
/// involving a negative (unmatched) label are skipped; rows never visited are
/// set uniform so the TV agreement stays defined.
inline Matrix transition_matrix(const std::vector<int>& labels, int K) {
    if (labels.size() < 2) throw DataError("transition_matrix needs T >= 2");
    Matrix counts = Matrix::Zero(K, K);
    for (std::size_t t = 0; t + 1 < labels.size(); ++t) {
        const int a = labels[t], b = labels[t + 1];
        if (a < 0 || b < 0) continue;
        counts(a, b) += 1.0;
    }
    for (int l = 0; l < K; ++l) {
        const double total = counts.row(l).sum();
        if (total > 0.0)
            counts.row(l) /= total;
        else
            counts.row(l).setConstant(1.0 / K);
    }
    return counts;
}

/// 1 - average row-wise total variation distance between transition matrices.
inline double tma(const Matrix& P_hat, const Matrix& P_star) {
    if (P_hat.rows() != P_star.rows() || P_hat.cols() != P_star.cols())
        throw DimensionMismatch("tma: shape mismatch");
    const auto K = static_cast<double>(P_hat.rows());
    double tv = 0.0;
    for (Eigen::Index l = 0; l < P_hat.rows(); ++l)
        tv += (P_hat.row(l) - P_star.row(l)).cwiseAbs().sum();
    return 1.0 - tv / (2.0 * K);
}

/// 1 - total variation distance between recovered and true state occupancies.
/// Unmatched (-1) recovered labels contribute occupancy to no state.
inline double sda(const std::vector<int>& aligned_labels, const std::vector<int>& z_true, int K) {
    if (aligned_labels.size() != z_true.size())
        throw DimensionMismatch("sda: label sequences must have equal length");
    const double T = static_cast<double>(z_true.size());
    Vector nu_hat = Vector::Zero(K), nu = Vector::Zero(K);
    for (std::size_t t = 0; t < z_true.size(); ++t) {
        if (aligned_labels[t] >= 0 && aligned_labels[t] < K) nu_hat[aligned_labels[t]] += 1.0;
        nu[z_true[t]] += 1.0;
    }
    nu_hat /= T;
    nu /= T;
    return 1.0 - 0.5 * (nu_hat - nu).cwiseAbs().sum();
}

struct MetricReport {
    double br = 0.0;
    double tma = 0.0;
    double sda = 0.0;
    double kappa = 0.0;
};

/// Full scoring pipeline: centroids in data space, Hungarian alignment,
/// then BR / TMA / SDA against the ground truth.
inline MetricReport score_recovery(const Matrix& X, const std::vector<int>& labels,
                                   int num_basins, const Matrix& true_centers,
                                   const std::vector<int>& z_true, const Matrix& P_star,
                                   double kappa) {
    const auto centroids = basin_centroids(X, labels, num_basins);
    const auto matching = hungarian_match(centroids, true_centers);
    const auto aligned = align_labels(labels, matching);
    const int K = static_cast<int>(true_centers.rows());
    MetricReport report;
    report.kappa = kappa;
    report.br = basin_recovery(matching, centroids, true_centers, kappa);
    report.tma = tma(transition_matrix(aligned, K), P_star);
    report.sda = sda(aligned, z_true, K);
    return report;
}

}  // namespace elkit
