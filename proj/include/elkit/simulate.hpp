#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/rng.hpp"

namespace elkit {

/// First-order Markov regime chain with uniform off-diagonal mass:
/// diagonal p_stay, everything else (1 - p_stay)/(K - 1).
struct RegimeChain {
    int K = 1;
    double p_stay = 1.0;
    Matrix P;  // K x K row-stochastic

    RegimeChain() = default;
    RegimeChain(int K_, double p_stay_) : K(K_), p_stay(p_stay_) {
        if (K < 1 || p_stay < 0.0 || p_stay > 1.0) throw ConfigError("invalid regime chain");
        P = Matrix::Constant(K, K, K > 1 ? (1.0 - p_stay) / (K - 1) : 0.0);
        P.diagonal().setConstant(K > 1 ? p_stay : 1.0);
    }
};

/// z_1 uniform over states, z_{t+1} drawn from row z_t of P.
inline std::vector<int> sample_chain(const RegimeChain& chain, int T, Rng& rng) {
    std::vector<int> z(static_cast<std::size_t>(T));
    int state = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(chain.K)));
    for (int t = 0; t < T; ++t) {
        z[static_cast<std::size_t>(t)] = state;
        state = rng.categorical(chain.P.row(state).transpose());
    }
    return z;
}

inline std::vector<int> sample_chain(const RegimeChain& chain, int T, std::uint64_t seed) {
    Rng rng(seed);
    return sample_chain(chain, T, rng);
}

/// min_{k != k'} ||mu_k - mu_k'|| / sqrt(tr(Sigma)/N), brute force over pairs.
inline double compute_snr(const Matrix& mus, const Matrix& Sigma) {
    if (mus.rows() < 2) throw SingleState("SNR needs at least two centers");
    double min_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < mus.rows(); ++a)
        for (Eigen::Index b = a + 1; b < mus.rows(); ++b)
            min_dist = std::min(min_dist, (mus.row(a) - mus.row(b)).norm());
    return min_dist / std::sqrt(Sigma.trace() / static_cast<double>(Sigma.rows()));
}

/// Random SPD covariance with eigenvalues in [0.1, 1] (condition number at
/// most 10) and trace normalized to N.
inline Matrix random_spd_covariance(int N, Rng& rng) {
    Matrix G = rng.normal_matrix(N, N);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ();
    Vector eigs(N);
    for (int i = 0; i < N; ++i) eigs[i] = rng.uniform(0.1, 1.0);
    eigs *= static_cast<double>(N) / eigs.sum();
    return Q * eigs.asDiagonal() * Q.transpose();
}

/// Basin centers on a rotated simplex frame scaled so the minimum pairwise
/// distance over sqrt(tr(Sigma)/N) hits snr_target exactly. For K > N + 1
/// equal spacing is impossible; falls back to random directions rescaled to
/// the target minimum distance.
inline Matrix place_centers(int N, int K, double snr_target, const Matrix& Sigma, Rng& rng) {
    if (K < 2) throw ConfigError("place_centers needs K >= 2");
    const double d_target = snr_target * std::sqrt(Sigma.trace() / static_cast<double>(N));
    Matrix centers(K, N);
    if (K <= N) {
        // orthonormal frame: all pairwise distances sqrt(2) before scaling
        Matrix G = rng.normal_matrix(N, K);
        Eigen::HouseholderQR<Matrix> qr(G);
        Matrix Q = qr.householderQ() * Matrix::Identity(N, K);
        Vector centroid = Q.rowwise().mean();
        const double scale = d_target / std::numbers::sqrt2;
        for (int k = 0; k < K; ++k)
            centers.row(k) = (scale * (Q.col(k) - centroid)).transpose();
    } else {
        // InfeasibleGeometry fallback: random directions, rescaled
        for (int k = 0; k < K; ++k) centers.row(k) = rng.normal_vector(N).transpose();
        double min_dist = std::numeric_limits<double>::infinity();
        for (int a = 0; a < K; ++a)
            for (int b = a + 1; b < K; ++b)
                min_dist = std::min(min_dist, (centers.row(a) - centers.row(b)).norm());
        centers *= min_dist > 0.0 ? d_target / min_dist : 0.0;
    }
    return centers;
}

struct SldsConfig {
    int N = 6, K = 3, T = 500;
    double rho = 0.3;
    Matrix Sigma;  // within-state covariance
    Matrix mus;    // K x N basin centers
    RegimeChain chain;
    double snr_target = 2.0;

    /// Ranges used throughout the simulation study; library operations accept
    /// values outside them (tests exercise rho = 0, p_stay = 1).
    void validate_study_ranges() const {
        if (rho < 0.2 || rho >= 0.5) throw ConfigError("rho outside [0.2, 0.5)");
        if (chain.p_stay < 0.80 || chain.p_stay > 0.95)
            throw ConfigError("p_stay outside [0.80, 0.95]");
        const double achieved = compute_snr(mus, Sigma);
        if (std::abs(achieved - snr_target) > 0.05 * snr_target)
            throw ConfigError("achieved SNR deviates more than 5% from target");
    }
};

/// Convenience constructor drawing Sigma and centers from the seed.
inline SldsConfig make_slds_config(int N, int K, int T, double snr_target, std::uint64_t seed,
                                   double rho = 0.3, double p_stay = 0.9) {
    SldsConfig cfg;
    cfg.N = N;
    cfg.K = K;
    cfg.T = T;
    cfg.rho = rho;
    cfg.snr_target = snr_target;
    cfg.chain = RegimeChain(K, p_stay);
    Rng rng(derive_seed(seed, "slds-config"));
    cfg.Sigma = random_spd_covariance(N, rng);
    cfg.mus = place_centers(N, K, snr_target, cfg.Sigma, rng);
    return cfg;
}

struct SimOutput {
    TimeSeriesMatrix X;
    std::vector<int> z;
    Matrix centers;  // K x N ground-truth match targets
    Matrix P_star;
    double achieved_snr = 0.0;
};

/// Markov-switching Gaussian AR(1):
///   x_1 ~ N(mu_{z_1}, Sigma),  x_t = rho x_{t-1} + (1 - rho) mu_{z_t} + xi_t.
inline SimOutput simulate_slds(const SldsConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const auto z = sample_chain(cfg.chain, cfg.T, rng);
    Eigen::LLT<Matrix> chol(cfg.Sigma);
    if (chol.info() != Eigen::Success) throw NotPositiveDefinite("SLDS Sigma");

    Matrix X(cfg.T, cfg.N);
    Vector x = cfg.mus.row(z[0]).transpose() + chol.matrixL() * rng.normal_vector(cfg.N);
    X.row(0) = x.transpose();
    for (int t = 1; t < cfg.T; ++t) {
        const Vector noise = chol.matrixL() * rng.normal_vector(cfg.N);
        x = cfg.rho * x + (1.0 - cfg.rho) * cfg.mus.row(z[static_cast<std::size_t>(t)]).transpose() +
            noise;
        X.row(t) = x.transpose();
    }
    SimOutput out;
    out.X = TimeSeriesMatrix(std::move(X));
    out.z = z;
    out.centers = cfg.mus;
    out.P_star = cfg.chain.P;
    out.achieved_snr = cfg.K >= 2 ? compute_snr(cfg.mus, cfg.Sigma) : 0.0;
    return out;
}

struct KuramotoConfig {
    int N = 6, K = 3, T = 500;
    Vector omega;      // natural frequencies
    Matrix C;          // coupling matrix, symmetric nonnegative
    double alpha = 1.0;  // template locking gain
    double zeta = 0.05;  // diffusion coefficient
    double dt = 0.05;
    Matrix templates;  // K x N phase templates
    RegimeChain chain;
    int burn_in = 200;
};

inline KuramotoConfig make_kuramoto_config(int N, int K, int T, std::uint64_t seed,
                                           double alpha = 1.0, double zeta = 0.05,
                                           double p_stay = 0.9) {
    KuramotoConfig cfg;
    cfg.N = N;
    cfg.K = K;
    cfg.T = T;
    cfg.alpha = alpha;
    cfg.zeta = zeta;
    cfg.chain = RegimeChain(K, p_stay);
    Rng rng(derive_seed(seed, "kuramoto-config"));
    cfg.omega = 0.1 * rng.normal_vector(N);
    cfg.C = Matrix::Constant(N, N, 0.4 / N);
    cfg.C.diagonal().setZero();
    cfg.templates = Matrix(K, N);
    for (int k = 0; k < K; ++k)
        for (int i = 0; i < N; ++i) cfg.templates(k, i) = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return cfg;
}

/// Euler-Maruyama phase dynamics with template locking; observables are
/// y = sin(theta). The burn-in runs under the first sampled regime and is
/// discarded.
inline SimOutput simulate_kuramoto(const KuramotoConfig& cfg, std::uint64_t seed) {
    if (cfg.dt <= 0.0) throw ConfigError("dt must be positive");
    const double drift_bound =
        cfg.dt * (cfg.omega.cwiseAbs().maxCoeff() + cfg.C.rowwise().sum().maxCoeff() + cfg.alpha);
    if (!(drift_bound < std::numbers::pi))
        throw UnstableStep("dt too large for the drift magnitude");

    Rng rng(seed);
    const auto z = sample_chain(cfg.chain, cfg.T, rng);

    Vector theta(cfg.N);
    for (int i = 0; i < cfg.N; ++i) theta[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double noise_scale = std::sqrt(2.0 * cfg.zeta * cfg.dt);

    auto step = [&](int regime) {
        Vector dtheta(cfg.N);
        for (int i = 0; i < cfg.N; ++i) {
            double coupling = 0.0;
            for (int j = 0; j < cfg.N; ++j)
                coupling += cfg.C(i, j) * std::sin(theta[j] - theta[i]);
            dtheta[i] = cfg.dt * (cfg.omega[i] + coupling) +
                        cfg.dt * cfg.alpha * std::sin(cfg.templates(regime, i) - theta[i]) +
                        noise_scale * rng.normal();
        }
        theta += dtheta;
    };

    for (int t = 0; t < cfg.burn_in; ++t) step(z[0]);
    Matrix Y(cfg.T, cfg.N);
    for (int t = 0; t < cfg.T; ++t) {
        step(z[static_cast<std::size_t>(t)]);
        Y.row(t) = theta.array().sin().transpose();
    }

    SimOutput out;
    out.X = TimeSeriesMatrix(std::move(Y));
    out.z = z;
    out.centers = cfg.templates.array().sin();
    out.P_star = cfg.chain.P;
    out.achieved_snr = 0.0;  // measured from observables, see kuramoto_measured_snr
    return out;
}

/// SNR measured from the outputs per the definition used for Kuramoto runs:
/// standardize observables, take state-conditional means as centers and the
/// state-averaged within-state covariance as Sigma.
inline double kuramoto_measured_snr(const SimOutput& sim) {
    const Matrix Xs = standardize(sim.X).data;
    const Eigen::Index N = Xs.cols();
    const int K = static_cast<int>(sim.P_star.rows());
    if (K < 2) throw SingleState("SNR needs at least two states");
    Matrix mus = Matrix::Zero(K, N);
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index t = 0; t < Xs.rows(); ++t) {
        mus.row(sim.z[static_cast<std::size_t>(t)]) += Xs.row(t);
        ++counts[static_cast<std::size_t>(sim.z[static_cast<std::size_t>(t)])];
    }
    for (int k = 0; k < K; ++k)
        if (counts[static_cast<std::size_t>(k)] > 0)
            mus.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    Matrix Sigma = Matrix::Zero(N, N);
    int visited = 0;
    for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] < 2) continue;
        Matrix within = Matrix::Zero(N, N);
        for (Eigen::Index t = 0; t < Xs.rows(); ++t) {
            if (sim.z[static_cast<std::size_t>(t)] != k) continue;
            const Vector d = Xs.row(t).transpose() - mus.row(k).transpose();
            within += d * d.transpose();
        }
        Sigma += within / static_cast<double>(counts[static_cast<std::size_t>(k)] - 1);
        ++visited;
    }
    if (visited == 0) throw SingleState("no state visited twice");
    Sigma /= static_cast<double>(visited);
    return compute_snr(mus, Sigma);
}

}  // namespace elkit
