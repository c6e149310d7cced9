#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/gaussian.hpp"
#include "elkit/graph.hpp"
#include "elkit/ising.hpp"  // FitInfo
#include "elkit/rng.hpp"

namespace elkit {

inline constexpr double kDefaultEpsilon = 1e-5;
inline constexpr int kGcnHiddenWidth = 16;
inline constexpr int kNodeFeatureDim = 8;

/// Trainable parameters of the low-rank precision estimator: GCN layer
/// weights (rectifier between layers, identity after the last), the d x r
/// projection to the embedding Z, and the linear readout producing the
/// external field h.
struct GcnParams {
    std::vector<Matrix> layer_weights;
    Matrix Wz;         // d x r
    Vector field_map;  // d
    double epsilon = kDefaultEpsilon;

    Eigen::Index rank() const { return Wz.cols(); }

    bool all_finite() const {
        for (const auto& w : layer_weights)
            if (!w.allFinite()) return false;
        return Wz.allFinite() && field_map.allFinite();
    }
};

struct TrainConfig {
    double learning_rate = 1e-4;
    double clip_threshold = 0.1;
    double lambda_frob = 1e-3;
    double convergence_tol = 1e-4;
    int patience_epochs = 5;
    int max_epochs = 2000;
    bool clip_per_block = false;  // default clips the global gradient norm
};

/// Multi-layer propagation H_l = act(Bnorm H_{l-1} Theta_l); rectifier after
/// every layer except the last, which is linear.
inline Matrix gcn_forward(const Matrix& Bnorm, const Matrix& features, const GcnParams& params) {
    if (features.rows() != Bnorm.rows())
        throw DimensionMismatch("gcn_forward: feature rows must match graph size");
    Matrix H = features;
    const std::size_t L = params.layer_weights.size();
    for (std::size_t l = 0; l < L; ++l) {
        if (H.cols() != params.layer_weights[l].rows())
            throw DimensionMismatch("gcn_forward: layer " + std::to_string(l) +
                                    " weight shape does not chain");
        H = Bnorm * H * params.layer_weights[l];
        if (l + 1 < L) H = H.cwiseMax(0.0);
    }
    if (!H.allFinite()) throw NonFinite("gcn_forward produced non-finite embeddings");
    return H;
}

/// Z = H Wz and S = Z Z^T + eps I. S is positive-definite by construction
/// with smallest eigenvalue at least eps.
inline std::pair<Matrix, Matrix> build_precision(const Matrix& H, const Matrix& Wz,
                                                 double epsilon) {
    Matrix Z = H * Wz;
    Matrix S = Z * Z.transpose();
    S.diagonal().array() += epsilon;
    return {std::move(Z), std::move(S)};
}

/// log det(Z Z^T + eps I) via the matrix determinant lemma:
/// N log eps + log det(I_r + eps^{-1} Z^T Z). O(N r^2 + r^3).
inline double logdet_lowrank(const Matrix& Z, double epsilon) {
    const Eigen::Index N = Z.rows(), r = Z.cols();
    Matrix M = Matrix::Identity(r, r) + (Z.transpose() * Z) / epsilon;
    Eigen::LLT<Matrix> llt(M);
    double ld = 0.0;
    for (Eigen::Index i = 0; i < r; ++i) ld += std::log(llt.matrixLLT()(i, i));
    return static_cast<double>(N) * std::log(epsilon) + 2.0 * ld;
}

/// (Z Z^T + eps I)^{-1} v via the Woodbury identity. O(N r^2 + r^3).
inline Vector woodbury_solve(const Matrix& Z, double epsilon, const Vector& v) {
    const Eigen::Index r = Z.cols();
    Matrix M = Matrix::Identity(r, r) + (Z.transpose() * Z) / epsilon;
    Eigen::LLT<Matrix> llt(M);
    return v / epsilon - Z * llt.solve(Z.transpose() * v) / (epsilon * epsilon);
}

/// Dense S^{-1} assembled through the same identity; used by the gradient.
inline Matrix woodbury_inverse(const Matrix& Z, double epsilon) {
    const Eigen::Index N = Z.rows(), r = Z.cols();
    Matrix M = Matrix::Identity(r, r) + (Z.transpose() * Z) / epsilon;
    Eigen::LLT<Matrix> llt(M);
    Matrix Sinv = -Z * llt.solve(Z.transpose()) / (epsilon * epsilon);
    Sinv.diagonal().array() += 1.0 / epsilon;
    return Sinv;
}

/// Per-node summary features feeding the GCN: column mean, std, skewness,
/// excess kurtosis, lag-1 autocorrelation, degree in A, mean |R| to kept
/// neighbors, zero-padded to kNodeFeatureDim.
inline Matrix node_features(const TimeSeriesMatrix& X, const FunctionalGraph& graph) {
    const Eigen::Index T = X.T(), N = X.N();
    if (graph.A.rows() != N) throw DimensionMismatch("node_features: graph size mismatch");
    Matrix F = Matrix::Zero(N, kNodeFeatureDim);
    for (Eigen::Index j = 0; j < N; ++j) {
        const auto col = X.data.col(j);
        const double mean = col.mean();
        const Eigen::ArrayXd centered = col.array() - mean;
        const double var = centered.square().sum() / static_cast<double>(T - 1);
        const double sd = std::sqrt(var);
        const double m2 = centered.square().mean();
        const double m3 = centered.cube().mean();
        const double m4 = centered.square().square().mean();
        double lag1 = 0.0;
        const double denom = centered.square().sum();
        if (denom > 0.0) {
            for (Eigen::Index t = 0; t + 1 < T; ++t) lag1 += centered[t] * centered[t + 1];
            lag1 /= denom;
        }
        const double degree = graph.A.row(j).sum();
        double mean_absr = 0.0;
        if (degree > 0.0) {
            for (Eigen::Index k = 0; k < N; ++k)
                if (graph.A(j, k) != 0.0) mean_absr += std::abs(graph.R(j, k));
            mean_absr /= degree;
        }
        F(j, 0) = mean;
        F(j, 1) = sd;
        F(j, 2) = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
        F(j, 3) = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
        F(j, 4) = lag1;
        F(j, 5) = degree;
        F(j, 6) = mean_absr;
    }
    return F;
}

struct NllResult {
    double loss = 0.0;
    GcnParams gradients;  // same block shapes as the parameters

    double grad_norm() const {
        double s = 0.0;
        for (const auto& g : gradients.layer_weights) s += g.squaredNorm();
        s += gradients.Wz.squaredNorm() + gradients.field_map.squaredNorm();
        return std::sqrt(s);
    }
};

/// Gaussian negative log-likelihood of the data under the GCN-parameterized
/// model, with the (TN/2) log 2pi constant dropped and a Frobenius penalty on
/// S, plus analytic gradients for every parameter block:
///   J' = 1/2 sum_t (x_t - mu_T)^T S (x_t - mu_T) - T/2 log det S + lambda ||S||_F^2
/// where mu_T = mu + S^{-1} h(Theta) and mu is the per-column sample mean.
inline NllResult nll_loss(const Matrix& X, const Matrix& Bnorm, const Matrix& features,
                          const GcnParams& params, double lambda_frob) {
    const Eigen::Index T = X.rows(), N = X.cols();
    const std::size_t L = params.layer_weights.size();
    const double eps = params.epsilon;

    // forward pass, keeping pre-activations for the backward sweep
    std::vector<Matrix> pre(L), act(L + 1);
    act[0] = features;
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = Bnorm * act[l] * params.layer_weights[l];
        act[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0) : pre[l];
    }
    const Matrix& H = act[L];
    auto [Z, S] = build_precision(H, params.Wz, eps);
    const Vector h = H * params.field_map;

    const Vector mu = X.colwise().mean();
    Matrix Y = X.rowwise() - mu.transpose();
    const Matrix G = Y.transpose() * Y;
    const Vector s_y = Y.colwise().sum().transpose();

    const Vector a = woodbury_solve(Z, eps, h);  // S^{-1} h
    const double Td = static_cast<double>(T);

    // loss via the expanded quadratic around mu
    const double quad = 0.5 * (S.cwiseProduct(G)).sum() - h.dot(s_y) + 0.5 * Td * h.dot(a);
    const double frob = S.squaredNorm();
    const double loss =
        quad - 0.5 * Td * logdet_lowrank(Z, eps) + lambda_frob * frob;

    // dJ/dS as an unconstrained symmetric gradient, then chained through Z
    const Matrix Sinv = woodbury_inverse(Z, eps);
    Matrix dS = 0.5 * G - 0.5 * Td * (a * a.transpose()) - 0.5 * Td * Sinv + 2.0 * lambda_frob * S;
    const Matrix gZ = 2.0 * dS * Z;
    const Vector gh = Td * a - s_y;

    NllResult out;
    out.loss = loss;
    out.gradients.epsilon = eps;
    out.gradients.Wz = H.transpose() * gZ;
    out.gradients.field_map = H.transpose() * gh;

    Matrix gH = gZ * params.Wz.transpose() + gh * params.field_map.transpose();
    out.gradients.layer_weights.resize(L);
    for (std::size_t l = L; l-- > 0;) {
        Matrix gM = (l + 1 < L)
                        ? gH.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix())
                        : gH;
        out.gradients.layer_weights[l] = (Bnorm * act[l]).transpose() * gM;
        if (l > 0) gH = Bnorm * gM * params.layer_weights[l].transpose();
    }

    if (!std::isfinite(out.loss) || !out.gradients.all_finite())
        throw NonFinite("nll_loss produced a non-finite value");
    return out;
}

/// Symmetric uniform initialization scaled by 1/sqrt(fan_in); the field
/// readout starts at zero so training begins from the h = 0 model.
inline GcnParams init_gcn_params(Eigen::Index d0, Eigen::Index hidden, Eigen::Index rank,
                                 Rng& rng, double epsilon = kDefaultEpsilon) {
    auto uniform_block = [&rng](Eigen::Index rows, Eigen::Index cols) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
        Matrix W(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) W(i, j) = rng.uniform(-scale, scale);
        return W;
    };
    GcnParams p;
    p.layer_weights.push_back(uniform_block(d0, hidden));
    p.layer_weights.push_back(uniform_block(hidden, hidden));
    p.Wz = uniform_block(hidden, rank);
    p.field_map = Vector::Zero(hidden);
    p.epsilon = epsilon;
    return p;
}

struct TraceRow {
    int epoch;
    double loss;
    double grad_norm;
};

struct GcnTrainResult {
    GcnParams params;
    FitInfo info;
    std::vector<TraceRow> trace;
};

namespace detail {

struct AdamState {
    std::vector<Matrix> m_layers, v_layers;
    Matrix m_wz, v_wz;
    Vector m_field, v_field;
    int step = 0;

    explicit AdamState(const GcnParams& p) {
        for (const auto& w : p.layer_weights) {
            m_layers.push_back(Matrix::Zero(w.rows(), w.cols()));
            v_layers.push_back(Matrix::Zero(w.rows(), w.cols()));
        }
        m_wz = Matrix::Zero(p.Wz.rows(), p.Wz.cols());
        v_wz = Matrix::Zero(p.Wz.rows(), p.Wz.cols());
        m_field = Vector::Zero(p.field_map.size());
        v_field = Vector::Zero(p.field_map.size());
    }

    template <typename T>
    void update_block(T& param, const T& grad, T& m, T& v, double lr) {
        constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1, step);
        const double c2 = 1.0 - std::pow(b2, step);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + adam_eps);
    }

    void apply(GcnParams& p, const GcnParams& g, double lr) {
        ++step;
        for (std::size_t l = 0; l < p.layer_weights.size(); ++l)
            update_block(p.layer_weights[l], g.layer_weights[l], m_layers[l], v_layers[l], lr);
        update_block(p.Wz, g.Wz, m_wz, v_wz, lr);
        update_block(p.field_map, g.field_map, m_field, v_field, lr);
    }
};

inline void clip_gradients(GcnParams& g, double threshold, bool per_block) {
    auto clip_one = [threshold](auto& block) {
        const double n = block.norm();
        if (n > threshold) block *= threshold / n;
    };
    if (per_block) {
        for (auto& w : g.layer_weights) clip_one(w);
        clip_one(g.Wz);
        clip_one(g.field_map);
        return;
    }
    double total = g.Wz.squaredNorm() + g.field_map.squaredNorm();
    for (const auto& w : g.layer_weights) total += w.squaredNorm();
    const double n = std::sqrt(total);
    if (n > threshold) {
        const double s = threshold / n;
        for (auto& w : g.layer_weights) w *= s;
        g.Wz *= s;
        g.field_map *= s;
    }
}

}  // namespace detail

/// Adam training loop. Convergence is declared when both the loss change and
/// the gradient-norm change stay below convergence_tol for patience_epochs
/// consecutive epochs; the best-loss iterate is returned either way.
inline GcnTrainResult train(const Matrix& X, const FunctionalGraph& graph, const Matrix& features,
                            Eigen::Index rank, const TrainConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    GcnParams params =
        init_gcn_params(features.cols(), kGcnHiddenWidth, rank, rng);

    GcnTrainResult result;
    detail::AdamState adam(params);
    GcnParams best = params;
    double best_loss = std::numeric_limits<double>::infinity();
    double prev_loss = std::numeric_limits<double>::quiet_NaN();
    double prev_gnorm = std::numeric_limits<double>::quiet_NaN();
    int streak = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        NllResult r = nll_loss(X, graph.Bnorm, features, params, config.lambda_frob);
        const double gnorm = r.grad_norm();
        result.trace.push_back({epoch, r.loss, gnorm});
        if (r.loss < best_loss) {
            best_loss = r.loss;
            best = params;
        }
        if (epoch > 0 && std::abs(r.loss - prev_loss) < config.convergence_tol &&
            std::abs(gnorm - prev_gnorm) < config.convergence_tol) {
            if (++streak >= config.patience_epochs) {
                result.info.converged = true;
                result.info.iterations = epoch + 1;
                result.info.grad_norm = gnorm;
                break;
            }
        } else {
            streak = 0;
        }
        prev_loss = r.loss;
        prev_gnorm = gnorm;

        detail::clip_gradients(r.gradients, config.clip_threshold, config.clip_per_block);
        adam.apply(params, r.gradients, config.learning_rate);
    }
    if (!result.info.converged) {
        result.info.iterations = static_cast<int>(result.trace.size());
        result.info.grad_norm = result.trace.empty() ? 0.0 : result.trace.back().grad_norm;
    }
    result.info.objective = best_loss;
    result.params = std::move(best);
    return result;
}

/// Reduce trained parameters to the unimodal Gaussian landscape they induce:
/// mu from the data, S and h from the forward pass.
inline GaussianEnergyModel gcn_energy_model(const Matrix& X, const FunctionalGraph& graph,
                                            const Matrix& features, const GcnParams& params) {
    const Matrix H = gcn_forward(graph.Bnorm, features, params);
    auto [Z, S] = build_precision(H, params.Wz, params.epsilon);
    const Vector h = H * params.field_map;
    const Vector mu = X.colwise().mean();
    return GaussianEnergyModel(mu, S, h);
}

/// Time-blocked 3-fold cross-validation over candidate ranks: train on two
/// contiguous blocks, score exact held-out Gaussian NLL on the third, return
/// the argmin (ties to the smallest rank).
inline Eigen::Index select_rank(const Matrix& X, const FunctionalGraph& graph,
                                const Matrix& features, std::vector<Eigen::Index> candidates,
                                const TrainConfig& config, std::uint64_t seed) {
    if (candidates.empty()) throw ConfigError("select_rank: no candidate ranks");
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    if (candidates.size() == 1) return candidates.front();

    const Eigen::Index T = X.rows(), N = X.cols();
    if (T < 3 * (N + 1)) throw TooShort("select_rank requires T >= 3 (N + 1)");

    const Eigen::Index b1 = T / 3, b2 = 2 * T / 3;
    const std::array<std::pair<Eigen::Index, Eigen::Index>, 3> blocks{
        {{0, b1}, {b1, b2}, {b2, T}}};

    double best_nll = std::numeric_limits<double>::infinity();
    Eigen::Index best_rank = candidates.front();
    for (const Eigen::Index r : candidates) {
        double nll_sum = 0.0;
        for (int fold = 0; fold < 3; ++fold) {
            const auto [lo, hi] = blocks[static_cast<std::size_t>(fold)];
            Matrix train_rows(T - (hi - lo), N);
            Eigen::Index at = 0;
            for (int b = 0; b < 3; ++b) {
                if (b == fold) continue;
                const auto [blo, bhi] = blocks[static_cast<std::size_t>(b)];
                train_rows.middleRows(at, bhi - blo) = X.middleRows(blo, bhi - blo);
                at += bhi - blo;
            }
            const auto fit = train(train_rows, graph, features, r, config,
                                   derive_seed(seed, "rank=" + std::to_string(r) +
                                                         "/fold=" + std::to_string(fold)));
            const GaussianEnergyModel m =
                gcn_energy_model(train_rows, graph, features, fit.params);
            double fold_nll = 0.0;
            for (Eigen::Index t = lo; t < hi; ++t)
                fold_nll -= log_density(X.row(t).transpose(), m);
            nll_sum += fold_nll;
        }
        const double mean_nll = nll_sum / 3.0;
        if (mean_nll < best_nll) {
            best_nll = mean_nll;
            best_rank = r;
        }
    }
    return best_rank;
}

}  // namespace elkit
