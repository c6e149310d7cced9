#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"

namespace elkit {

/// Pairwise maximum entropy (Ising) model over {-1,+1}^N states.
/// W is symmetric with zero diagonal; h is the external field.
struct IsingModel {
    Matrix W;
    Vector h;

    Eigen::Index N() const { return h.size(); }
};

/// Convergence metadata attached to iterative fits.
struct FitInfo {
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    double objective = 0.0;
};

struct IsingFitResult {
    IsingModel model;
    FitInfo info;
    double lambda = 0.0;
};

/// E(q) = -1/2 q^T W q - h^T q. Equals the pairwise sum form
/// -sum_{i<j} W_ij q_i q_j - sum_i h_i q_i when W is symmetric, diag 0.
inline double ising_energy(const Vector& q, const IsingModel& m) {
    if (q.size() != m.h.size() || m.W.rows() != q.size() || m.W.cols() != q.size())
        throw DimensionMismatch("ising_energy: state/model dimensions disagree");
    return -0.5 * q.dot(m.W * q) - m.h.dot(q);
}

namespace detail {

inline double logistic(double x) {
    // exp ordering keeps both tails stable
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double log_logistic(double x) {
    // log sigma(x) = -log(1 + exp(-x))
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

/// All 2^N states as rows of a (+1/-1) matrix; bit i of the row index gives
/// the sign of variable i.
inline Matrix enumerate_states(int N) {
    const auto count = std::int64_t{1} << N;
    Matrix S(count, N);
    for (std::int64_t k = 0; k < count; ++k)
        for (int i = 0; i < N; ++i) S(k, i) = (k >> i) & 1 ? 1.0 : -1.0;
    return S;
}

/// Energies of every enumerated state.
inline Vector all_state_energies(const Matrix& states, const IsingModel& m) {
    Matrix WS = states * m.W;
    Vector E = -0.5 * (WS.cwiseProduct(states)).rowwise().sum() - states * m.h;
    return E;
}

/// Boltzmann probabilities over enumerated states, max-shifted for stability.
inline Vector boltzmann_probabilities(const Vector& energies) {
    const double shift = -energies.minCoeff();
    Vector p = (-(energies.array()) - shift).exp();
    return p / p.sum();
}

}  // namespace detail

/// l2-regularized pseudolikelihood fit. Maximizes
///   sum_t sum_i log sigma(2 q_ti (h_i + sum_{j!=i} W_ij q_tj))
///   - lambda ||W||^2 - lambda ||h||^2
/// by full-batch gradient descent with backtracking line search on the
/// per-sample mean of the objective (same maximizer, scale-free tolerance).
/// Each conditional is fit independently; W is symmetrized at return.
inline IsingFitResult fit_ising_ple(const BinaryStateMatrix& Q, double lambda = 1e-2,
                                    double tol = 1e-6, int max_iter = 5000) {
    const Eigen::Index T = Q.T(), N = Q.N();
    if (T < 10) throw DataError("fit_ising_ple requires T >= 10");
    for (Eigen::Index j = 0; j < N; ++j)
        if (std::abs(Q.data.col(j).sum()) == static_cast<double>(T))
            throw ConstantColumn(static_cast<int>(j));

    const Matrix& X = Q.data;
    const double invT = 1.0 / static_cast<double>(T);

    Matrix W = Matrix::Zero(N, N);
    Vector h = Vector::Zero(N);

    // mean negative log-pseudolikelihood plus (lambda/T) * ridge
    auto objective = [&](const Matrix& Wc, const Vector& hc) {
        Matrix U = X * Wc.transpose();
        U.rowwise() += hc.transpose();
        double nll = 0.0;
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index i = 0; i < N; ++i)
                nll -= detail::log_logistic(2.0 * X(t, i) * U(t, i));
        return nll * invT + lambda * invT * (Wc.squaredNorm() + hc.squaredNorm());
    };
    auto gradient = [&](const Matrix& Wc, const Vector& hc, Matrix& gW, Vector& gh) {
        Matrix U = X * Wc.transpose();
        U.rowwise() += hc.transpose();
        Matrix G(T, N);  // d/du of -log sigma(2 q u) = -2 q sigma(-2 q u)
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index i = 0; i < N; ++i)
                G(t, i) = -2.0 * X(t, i) * detail::logistic(-2.0 * X(t, i) * U(t, i));
        gW = (G.transpose() * X) * invT + 2.0 * lambda * invT * Wc;
        gW.diagonal().setZero();
        gh = G.colwise().sum().transpose() * invT + 2.0 * lambda * invT * hc;
    };

    FitInfo info;
    double f = objective(W, h);
    double step = 1.0;
    Matrix gW(N, N);
    Vector gh(N);
    for (info.iterations = 0; info.iterations < max_iter; ++info.iterations) {
        gradient(W, h, gW, gh);
        info.grad_norm = std::sqrt(gW.squaredNorm() + gh.squaredNorm());
        if (info.grad_norm < tol) {
            info.converged = true;
            break;
        }
        const double g2 = info.grad_norm * info.grad_norm;
        double alpha = std::min(step * 2.0, 1e3);
        bool accepted = false;
        while (alpha > 1e-18) {
            Matrix Wn = W - alpha * gW;
            Vector hn = h - alpha * gh;
            const double fn = objective(Wn, hn);
            if (fn <= f - 1e-4 * alpha * g2) {
                W = std::move(Wn);
                h = std::move(hn);
                f = fn;
                step = alpha;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;  // descent stalled at floating-point resolution
    }
    info.objective = f;

    IsingFitResult res;
    res.model.W = 0.5 * (W + W.transpose());
    res.model.W.diagonal().setZero();
    res.model.h = h;
    res.info = info;
    res.lambda = lambda;
    return res;
}

/// Greedy single-flip descent: at each step flip the variable giving the
/// largest energy decrease (ties to the lowest index) until no flip strictly
/// decreases the energy. Flipping k changes E by 2 q_k ((W q)_k + h_k).
inline Vector greedy_descent(Vector q, const IsingModel& m) {
    if (q.size() != m.h.size())
        throw DimensionMismatch("greedy_descent: state/model dimensions disagree");
    const Eigen::Index N = q.size();
    Vector field = m.W * q + m.h;
    for (long guard = 0; guard < (1L << 22); ++guard) {
        int best = -1;
        double best_delta = 0.0;
        for (Eigen::Index k = 0; k < N; ++k) {
            const double delta = 2.0 * q[k] * field[k];
            if (delta < best_delta) {
                best_delta = delta;
                best = static_cast<int>(k);
            }
        }
        if (best < 0) return q;
        q[best] = -q[best];
        field += 2.0 * q[best] * m.W.col(best);
    }
    throw Error("greedy_descent failed to terminate");
}

/// Time points grouped by the local minimum their greedy descent reaches.
struct BasinAssignment {
    std::vector<int> labels;  // length T, index into modes
    Matrix modes;             // #modes x N, each row a local-minimum pattern
};

inline BasinAssignment assign_basins(const BinaryStateMatrix& Q, const IsingModel& m) {
    const Eigen::Index T = Q.T(), N = Q.N();
    BasinAssignment out;
    out.labels.resize(static_cast<std::size_t>(T));
    std::map<std::vector<std::int8_t>, int> seen;
    std::vector<Vector> modes;
    for (Eigen::Index t = 0; t < T; ++t) {
        Vector mode = greedy_descent(Q.data.row(t).transpose(), m);
        std::vector<std::int8_t> key(static_cast<std::size_t>(N));
        for (Eigen::Index i = 0; i < N; ++i)
            key[static_cast<std::size_t>(i)] = mode[i] > 0 ? 1 : -1;
        auto [it, inserted] = seen.emplace(std::move(key), static_cast<int>(modes.size()));
        if (inserted) modes.push_back(std::move(mode));
        out.labels[static_cast<std::size_t>(t)] = it->second;
    }
    out.modes.resize(static_cast<Eigen::Index>(modes.size()), N);
    for (std::size_t b = 0; b < modes.size(); ++b)
        out.modes.row(static_cast<Eigen::Index>(b)) = modes[b].transpose();
    return out;
}

inline constexpr int kExactIsingLimit = 12;

/// Exact maximum-likelihood MEM fit by full 2^N enumeration of the partition
/// function. Gradient of the mean log-likelihood is data moments minus model
/// moments; ascent runs until that gap is below tol. Test oracle scale only.
inline IsingFitResult exact_ising_fit(const BinaryStateMatrix& Q, double tol = 1e-6,
                                      int max_iter = 20000) {
    const Eigen::Index T = Q.T(), N = Q.N();
    if (N > kExactIsingLimit) throw TooManyVariables(static_cast<int>(N), kExactIsingLimit);

    const Matrix states = detail::enumerate_states(static_cast<int>(N));
    const double invT = 1.0 / static_cast<double>(T);
    const Vector m1_data = Q.data.colwise().mean();
    const Matrix m2_data = (Q.data.transpose() * Q.data) * invT;

    IsingModel model{Matrix::Zero(N, N), Vector::Zero(N)};

    auto mean_loglik = [&](const IsingModel& mm) {
        Vector E = detail::all_state_energies(states, mm);
        const double shift = -E.minCoeff();
        const double logZ = std::log(((-(E.array())) - shift).exp().sum()) + shift;
        double mean_E = 0.0;
        for (Eigen::Index t = 0; t < T; ++t)
            mean_E += ising_energy(Q.data.row(t).transpose(), mm);
        return -mean_E * invT - logZ;
    };
    auto model_moments = [&](const IsingModel& mm, Vector& m1, Matrix& m2) {
        Vector E = detail::all_state_energies(states, mm);
        Vector p = detail::boltzmann_probabilities(E);
        m1 = states.transpose() * p;
        m2 = states.transpose() * p.asDiagonal() * states;
    };

    FitInfo info;
    double f = mean_loglik(model);
    double step = 0.5;
    Vector m1(N);
    Matrix m2(N, N);
    for (info.iterations = 0; info.iterations < max_iter; ++info.iterations) {
        model_moments(model, m1, m2);
        Vector gh = m1_data - m1;  // ascent direction
        Matrix gW = m2_data - m2;
        gW.diagonal().setZero();
        double g2 = gh.squaredNorm() + 0.5 * gW.squaredNorm();  // upper triangle counted once
        info.grad_norm = std::sqrt(g2);
        if (info.grad_norm < tol) {
            info.converged = true;
            break;
        }
        double alpha = std::min(step * 2.0, 10.0);
        bool accepted = false;
        while (alpha > 1e-18) {
            IsingModel cand{model.W + alpha * gW, model.h + alpha * gh};
            cand.W = 0.5 * (cand.W + cand.W.transpose());
            cand.W.diagonal().setZero();
            const double fn = mean_loglik(cand);
            if (fn >= f + 1e-4 * alpha * g2) {
                model = std::move(cand);
                f = fn;
                step = alpha;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }
    info.objective = f;
    return IsingFitResult{std::move(model), info, 0.0};
}

}  // namespace elkit
