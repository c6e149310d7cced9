#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"
#include "elkit/gaussian.hpp"
#include "elkit/ising.hpp"  // FitInfo
#include "elkit/rng.hpp"

namespace elkit {

/// Multi-basin continuous energy landscape: the energy is the negative log of
/// an M-component Gaussian mixture with per-component precision matrices.
class MixtureEnergyModel {
public:
    MixtureEnergyModel(Vector eta, Matrix mus, std::vector<Matrix> Ss)
        : eta_(std::move(eta)), mus_(std::move(mus)), Ss_(std::move(Ss)) {
        const auto M = static_cast<std::size_t>(eta_.size());
        if (mus_.rows() != eta_.size() || Ss_.size() != M)
            throw DimensionMismatch("MixtureEnergyModel: component counts disagree");
        if (eta_.minCoeff() < 0.0 || std::abs(eta_.sum() - 1.0) > 1e-12)
            throw ConfigError("mixture weights must be nonnegative and sum to 1");
        half_logdet_.resize(M);
        llt_.resize(M);
        for (std::size_t m = 0; m < M; ++m) {
            Ss_[m] = 0.5 * (Ss_[m] + Ss_[m].transpose()).eval();
            llt_[m].compute(Ss_[m]);
            if (llt_[m].info() != Eigen::Success)
                throw NotPositiveDefinite("mixture component " + std::to_string(m));
            double ld = 0.0;
            for (Eigen::Index i = 0; i < Ss_[m].rows(); ++i)
                ld += std::log(llt_[m].matrixLLT()(i, i));
            half_logdet_[m] = ld;
        }
    }

    Eigen::Index M() const { return eta_.size(); }
    Eigen::Index N() const { return mus_.cols(); }
    const Vector& eta() const { return eta_; }
    const Matrix& mus() const { return mus_; }
    const std::vector<Matrix>& Ss() const { return Ss_; }

    /// log eta_m + log phi(x; mu_m, S_m); -inf for zero-weight components.
    double weighted_log_density(const Vector& x, Eigen::Index m) const {
        if (eta_[m] == 0.0) return -std::numeric_limits<double>::infinity();
        const Vector d = x - mus_.row(m).transpose();
        return std::log(eta_[m]) + half_logdet_[m] -
               0.5 * static_cast<double>(N()) * kLog2Pi - 0.5 * d.dot(Ss_[m] * d);
    }

    Vector weighted_log_densities(const Vector& x) const {
        Vector out(M());
        for (Eigen::Index m = 0; m < M(); ++m) out[m] = weighted_log_density(x, m);
        return out;
    }

private:
    Vector eta_;
    Matrix mus_;
    std::vector<Matrix> Ss_;
    std::vector<double> half_logdet_;
    std::vector<Eigen::LLT<Matrix>> llt_;
};

namespace detail {

inline double logsumexp(const Vector& v) {
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace detail

/// E(x) = -log sum_m eta_m phi(x; mu_m, S_m), stabilized through log-sum-exp.
inline double mixture_energy(const Vector& x, const MixtureEnergyModel& m) {
    return -detail::logsumexp(m.weighted_log_densities(x));
}

/// Posterior component memberships gamma_m(x), summing to one.
inline Vector responsibilities(const Vector& x, const MixtureEnergyModel& m) {
    const Vector logs = m.weighted_log_densities(x);
    const double lse = detail::logsumexp(logs);
    return (logs.array() - lse).exp();
}

/// MAP component labels for every row of X; ties resolve to the smallest index.
inline std::vector<int> map_labels(const Matrix& X, const MixtureEnergyModel& m) {
    std::vector<int> z(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
        const Vector g = responsibilities(X.row(t).transpose(), m);
        int best = 0;
        for (Eigen::Index k = 1; k < g.size(); ++k)
            if (g[k] > g[best]) best = static_cast<int>(k);
        z[static_cast<std::size_t>(t)] = best;
    }
    return z;
}

/// Gradient of the mixture energy: sum_m gamma_m(x) S_m (x - mu_m).
inline Vector mixture_energy_gradient(const Vector& x, const MixtureEnergyModel& m) {
    const Vector g = responsibilities(x, m);
    Vector grad = Vector::Zero(x.size());
    for (Eigen::Index k = 0; k < m.M(); ++k)
        grad += g[k] * (m.Ss()[static_cast<std::size_t>(k)] * (x - m.mus().row(k).transpose()));
    return grad;
}

/// Backtracking gradient descent on the mixture energy from a given start.
inline Vector mixture_descend(Vector x, const MixtureEnergyModel& m, int max_iter = 500,
                              double grad_tol = 1e-8) {
    double e = mixture_energy(x, m);
    double step = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        const Vector grad = mixture_energy_gradient(x, m);
        const double g2 = grad.squaredNorm();
        if (std::sqrt(g2) < grad_tol) break;
        double alpha = std::min(step * 2.0, 10.0);
        bool accepted = false;
        while (alpha > 1e-16) {
            const Vector cand = x - alpha * grad;
            const double ec = mixture_energy(cand, m);
            if (ec <= e - 1e-4 * alpha * g2) {
                x = cand;
                e = ec;
                step = alpha;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
    }
    return x;
}

/// Global minimum energy, probed by descent from every component mean.
inline double mixture_energy_minimum(const MixtureEnergyModel& m) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m.M(); ++k)
        best = std::min(best, mixture_energy(mixture_descend(m.mus().row(k).transpose(), m), m));
    return best;
}

/// Energy normalization scale for mixtures: the pooled covariance by the law
/// of total variance, sqrt(tr / N).
inline double mixture_sigma_e(const MixtureEnergyModel& m) {
    const Eigen::Index N = m.N();
    Vector mean_bar = Vector::Zero(N);
    for (Eigen::Index k = 0; k < m.M(); ++k) mean_bar += m.eta()[k] * m.mus().row(k).transpose();
    Matrix pooled = Matrix::Zero(N, N);
    for (Eigen::Index k = 0; k < m.M(); ++k) {
        const Matrix Sigma_k =
            m.Ss()[static_cast<std::size_t>(k)].llt().solve(Matrix::Identity(N, N));
        const Vector d = m.mus().row(k).transpose() - mean_bar;
        pooled += m.eta()[k] * (Sigma_k + d * d.transpose());
    }
    const double s2 = pooled.trace() / static_cast<double>(N);
    if (!(s2 > 0.0)) throw DegenerateScale("pooled covariance trace must be positive");
    return std::sqrt(s2);
}

struct MixtureFitResult {
    MixtureEnergyModel model;
    double loglik = 0.0;
    FitInfo info;
    std::vector<double> loglik_trace;
};

namespace detail {

/// k-means++ style seeding: first center uniform over rows, later centers
/// with probability proportional to squared distance to the nearest chosen one.
inline Matrix kmeanspp_centers(const Matrix& X, int M, Rng& rng) {
    const Eigen::Index T = X.rows();
    Matrix centers(M, X.cols());
    centers.row(0) = X.row(static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(T))));
    Vector d2 = (X.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < M; ++k) {
        const double total = d2.sum();
        Eigen::Index pick;
        if (total <= 0.0) {
            pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(T)));
        } else {
            pick = rng.categorical(d2);
        }
        centers.row(k) = X.row(pick);
        d2 = d2.cwiseMin((X.rowwise() - centers.row(k)).rowwise().squaredNorm());
    }
    return centers;
}

struct EmOutcome {
    bool ok = false;
    Vector eta;
    Matrix mus;
    std::vector<Matrix> Ss;
    double loglik = -std::numeric_limits<double>::infinity();
    FitInfo info;
    std::vector<double> trace;
};

inline EmOutcome run_em(const Matrix& X, int M, Rng& rng, double tol, int max_iter,
                        double ridge_scale) {
    const Eigen::Index T = X.rows(), N = X.cols();
    const double Td = static_cast<double>(T);

    const Vector grand_mean = X.colwise().mean();
    Matrix centered = X.rowwise() - grand_mean.transpose();
    Matrix pooled = (centered.transpose() * centered) / (Td - 1.0);
    pooled.diagonal().array() += std::max(ridge_scale * pooled.trace() / static_cast<double>(N),
                                          std::numeric_limits<double>::min());

    EmOutcome out;
    out.eta = Vector::Constant(M, 1.0 / M);
    out.mus = kmeanspp_centers(X, M, rng);
    out.Ss.assign(static_cast<std::size_t>(M), pooled.llt().solve(Matrix::Identity(N, N)));

    // hard-assign to the seeded centers and start each component from its own
    // cluster moments; the pooled covariance stays as the fallback for thin
    // clusters (it spans between-cluster spread and would otherwise let one
    // component swallow everything)
    {
        std::vector<int> assign(static_cast<std::size_t>(T));
        std::vector<int> sizes(static_cast<std::size_t>(M), 0);
        for (Eigen::Index t = 0; t < T; ++t) {
            int best = 0;
            double best_d = (X.row(t) - out.mus.row(0)).squaredNorm();
            for (int m = 1; m < M; ++m) {
                const double d = (X.row(t) - out.mus.row(m)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = m;
                }
            }
            assign[static_cast<std::size_t>(t)] = best;
            ++sizes[static_cast<std::size_t>(best)];
        }
        for (int m = 0; m < M; ++m) {
            if (sizes[static_cast<std::size_t>(m)] < N + 2) continue;
            const int n_m = sizes[static_cast<std::size_t>(m)];
            Vector mean = Vector::Zero(N);
            for (Eigen::Index t = 0; t < T; ++t)
                if (assign[static_cast<std::size_t>(t)] == m) mean += X.row(t).transpose();
            mean /= static_cast<double>(n_m);
            Matrix cov = Matrix::Zero(N, N);
            for (Eigen::Index t = 0; t < T; ++t) {
                if (assign[static_cast<std::size_t>(t)] != m) continue;
                const Vector d = X.row(t).transpose() - mean;
                cov += d * d.transpose();
            }
            cov /= static_cast<double>(n_m - 1);
            cov.diagonal().array() += ridge_scale * cov.trace() / static_cast<double>(N);
            Eigen::LLT<Matrix> llt(cov);
            if (llt.info() != Eigen::Success) continue;
            out.mus.row(m) = mean.transpose();
            out.Ss[static_cast<std::size_t>(m)] = llt.solve(Matrix::Identity(N, N));
            out.eta[m] = static_cast<double>(n_m) / Td;
        }
        out.eta /= out.eta.sum();
    }

    std::vector<double> half_logdet(static_cast<std::size_t>(M));
    auto refresh_logdets = [&]() {
        for (int m = 0; m < M; ++m) {
            Eigen::LLT<Matrix> llt(out.Ss[static_cast<std::size_t>(m)]);
            if (llt.info() != Eigen::Success) return false;
            double ld = 0.0;
            for (Eigen::Index i = 0; i < N; ++i) ld += std::log(llt.matrixLLT()(i, i));
            half_logdet[static_cast<std::size_t>(m)] = ld;
        }
        return true;
    };
    if (!refresh_logdets()) return out;

    Matrix gamma(T, M);
    double prev_ll = -std::numeric_limits<double>::infinity();
    bool reinitialized = false;
    for (int iter = 0; iter < max_iter; ++iter) {
        // E-step in log space
        double ll = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) {
            Vector logs(M);
            for (int m = 0; m < M; ++m) {
                const Vector d = X.row(t).transpose() - out.mus.row(m).transpose();
                logs[m] = std::log(out.eta[m]) + half_logdet[static_cast<std::size_t>(m)] -
                          0.5 * static_cast<double>(N) * kLog2Pi -
                          0.5 * d.dot(out.Ss[static_cast<std::size_t>(m)] * d);
            }
            const double lse = logsumexp(logs);
            ll += lse;
            gamma.row(t) = (logs.array() - lse).exp();
        }
        out.trace.push_back(ll);
        // the covariance ridge perturbs the exact M-step, so the monotone
        // guarantee holds to a tolerance relative to the log-likelihood scale
        if (iter > 0 && ll < prev_ll - 1e-6 * std::max(1.0, std::abs(prev_ll)))
            throw Error("EM log-likelihood decreased by " + std::to_string(prev_ll - ll) +
                        " at iteration " + std::to_string(iter));
        const bool converged = iter > 0 && (ll - prev_ll) < tol;
        out.loglik = ll;
        prev_ll = ll;
        out.info.iterations = iter + 1;
        if (converged) {
            out.info.converged = true;
            break;
        }

        // M-step; a collapsed component is reseeded once, then the fit fails
        const Vector counts = gamma.colwise().sum();
        int collapsed = -1;
        for (int m = 0; m < M; ++m)
            if (counts[m] / Td < 1.0 / (10.0 * Td)) collapsed = m;
        if (collapsed >= 0) {
            if (reinitialized)
                throw DegenerateComponent("mixture component " + std::to_string(collapsed) +
                                          " collapsed twice");
            reinitialized = true;
            out.mus.row(collapsed) =
                X.row(static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(T))));
            out.Ss[static_cast<std::size_t>(collapsed)] =
                pooled.llt().solve(Matrix::Identity(N, N));
            out.eta.setConstant(1.0 / M);
            if (!refresh_logdets()) return out;
            prev_ll = -std::numeric_limits<double>::infinity();
            out.trace.clear();
            continue;
        }
        for (int m = 0; m < M; ++m) {
            out.eta[m] = counts[m] / Td;
            out.mus.row(m) = (gamma.col(m).transpose() * X) / counts[m];
            Matrix diff = X.rowwise() - out.mus.row(m);
            Matrix cov = diff.transpose() * (gamma.col(m).asDiagonal() * diff) / counts[m];
            cov.diagonal().array() += ridge_scale * cov.trace() / static_cast<double>(N);
            Eigen::LLT<Matrix> llt(cov);
            if (llt.info() != Eigen::Success) return out;  // restart will retry
            out.Ss[static_cast<std::size_t>(m)] = llt.solve(Matrix::Identity(N, N));
        }
        out.eta /= out.eta.sum();
        if (!refresh_logdets()) return out;
    }
    out.ok = std::isfinite(out.loglik);
    return out;
}

}  // namespace detail

/// EM fit with k-means++ seeding and a fixed number of random restarts; the
/// restart with the best final log-likelihood wins. Covariances are ridged
/// before inversion to per-component precisions.
inline MixtureFitResult fit_gmm(const TimeSeriesMatrix& X, int M, std::uint64_t seed,
                                double tol = 1e-6, int max_iter = 500,
                                double ridge_scale = kDefaultRidgeScale, int restarts = 5) {
    const Eigen::Index T = X.T(), N = X.N();
    if (M < 1) throw ConfigError("fit_gmm: M must be at least 1");
    if (T < static_cast<Eigen::Index>(M) * (N + 1))
        throw DataError("fit_gmm requires T >= M (N + 1)");

    detail::EmOutcome best;
    int degenerate_failures = 0;
    for (int s = 0; s < restarts; ++s) {
        Rng rng(derive_seed(seed, "gmm-restart=" + std::to_string(s)));
        try {
            auto outcome = detail::run_em(X.data, M, rng, tol, max_iter, ridge_scale);
            if (outcome.ok && outcome.loglik > best.loglik) best = std::move(outcome);
        } catch (const DegenerateComponent&) {
            ++degenerate_failures;
        }
    }
    if (!best.ok) {
        if (degenerate_failures > 0) throw DegenerateComponent("all EM restarts collapsed");
        throw Error("fit_gmm: no EM restart produced a finite log-likelihood");
    }
    MixtureFitResult res{MixtureEnergyModel(best.eta, best.mus, best.Ss), best.loglik, best.info,
                         best.trace};
    return res;
}

/// Parameter count of an M-component full-covariance mixture on N variables.
inline int gmm_parameter_count(int M, int N) {
    return (M - 1) + M * N + M * N * (N + 1) / 2;
}

struct BicSelection {
    int M = 1;
    MixtureFitResult fit;
    std::vector<double> bic;  // index m-1 holds BIC for m components
};

/// Fit M = 1..M_max and return the argmin of
/// BIC = -2 loglik + k log T (ties to the smallest M).
inline BicSelection select_components_bic(const TimeSeriesMatrix& X, int M_max,
                                          std::uint64_t seed) {
    if (M_max < 1) throw ConfigError("select_components_bic: M_max must be at least 1");
    BicSelection out{1, fit_gmm(X, 1, derive_seed(seed, "bic-M=1")), {}};
    const double logT = std::log(static_cast<double>(X.T()));
    out.bic.push_back(-2.0 * out.fit.loglik +
                      gmm_parameter_count(1, static_cast<int>(X.N())) * logT);
    double best_bic = out.bic[0];
    for (int M = 2; M <= M_max; ++M) {
        auto fit = fit_gmm(X, M, derive_seed(seed, "bic-M=" + std::to_string(M)));
        const double bic =
            -2.0 * fit.loglik + gmm_parameter_count(M, static_cast<int>(X.N())) * logT;
        out.bic.push_back(bic);
        if (bic < best_bic) {
            best_bic = bic;
            out.M = M;
            out.fit = std::move(fit);
        }
    }
    return out;
}

}  // namespace elkit
