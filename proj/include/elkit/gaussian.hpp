#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "elkit/core.hpp"
#include "elkit/errors.hpp"

namespace elkit {

inline constexpr double kDefaultSpdRelTol = 1e-10;
inline constexpr double kDefaultRidgeScale = 1e-6;
inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Unimodal continuous energy landscape
///   E(x) = 1/2 (x - mu)^T S (x - mu) - h^T x
/// with S symmetric positive-definite. The minimizer x* = mu + S^{-1} h and
/// minimum E_min = -h^T mu - 1/2 h^T S^{-1} h are cached at construction, as
/// is sigma_E = sqrt(tr(S^{-1}) / N), the per-model energy normalization scale.
class GaussianEnergyModel {
public:
    GaussianEnergyModel(Vector mu, Matrix S, Vector h, double spd_rel_tol = kDefaultSpdRelTol)
        : mu_(std::move(mu)), S_(std::move(S)), h_(std::move(h)) {
        const Eigen::Index N = mu_.size();
        if (S_.rows() != N || S_.cols() != N || h_.size() != N)
            throw DimensionMismatch("GaussianEnergyModel: mu/S/h dimensions disagree");
        S_ = 0.5 * (S_ + S_.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> eig(S_, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        if (!(lo > spd_rel_tol * std::max(hi, 0.0)))
            throw NotPositiveDefinite("precision matrix is not positive-definite (min eig " +
                                      std::to_string(lo) + ")");
        llt_.compute(S_);
        x_star_ = mu_ + llt_.solve(h_);
        e_min_ = -h_.dot(mu_) - 0.5 * h_.dot(llt_.solve(h_));
        // tr(S^{-1}) from the Cholesky solve of the identity
        Matrix Sinv = llt_.solve(Matrix::Identity(N, N));
        sigma_e_ = std::sqrt(Sinv.trace() / static_cast<double>(N));
        double ld = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) ld += std::log(llt_.matrixLLT()(i, i));
        log_det_S_ = 2.0 * ld;
    }

    Eigen::Index N() const { return mu_.size(); }
    const Vector& mu() const { return mu_; }
    const Matrix& S() const { return S_; }
    const Vector& h() const { return h_; }
    const Vector& x_star() const { return x_star_; }
    double e_min() const { return e_min_; }
    double sigma_e() const { return sigma_e_; }
    double log_det_S() const { return log_det_S_; }

    /// S^{-1} b for a vector or matrix right-hand side.
    template <typename Derived>
    auto solve(const Eigen::MatrixBase<Derived>& b) const {
        return llt_.solve(b).eval();
    }

private:
    Vector mu_;
    Matrix S_;
    Vector h_;
    Eigen::LLT<Matrix> llt_;
    Vector x_star_;
    double e_min_ = 0.0;
    double sigma_e_ = 0.0;
    double log_det_S_ = 0.0;
};

inline double quadratic_energy(const Vector& x, const GaussianEnergyModel& m) {
    if (x.size() != m.N()) throw DimensionMismatch("quadratic_energy: dimension mismatch");
    const Vector d = x - m.mu();
    return 0.5 * d.dot(m.S() * d) - m.h().dot(x);
}

inline std::pair<Vector, double> energy_minimum(const GaussianEnergyModel& m) {
    return {m.x_star(), m.e_min()};
}

/// Gaussian log-density with mean mu + S^{-1} h and precision S.
inline double log_density(const Vector& x, const GaussianEnergyModel& m) {
    if (x.size() != m.N()) throw DimensionMismatch("log_density: dimension mismatch");
    const Vector d = x - m.x_star();
    return 0.5 * m.log_det_S() - 0.5 * static_cast<double>(m.N()) * kLog2Pi -
           0.5 * d.dot(m.S() * d);
}

/// Per-subject energy rescaling: (E_t - E_min) / sigma_E. Nonnegative by
/// boundedness of the quadratic landscape.
inline Vector normalize_energy(const Vector& energies, const GaussianEnergyModel& m) {
    if (!(m.sigma_e() > 0.0)) throw DegenerateScale("sigma_E must be positive");
    return (energies.array() - m.e_min()) / m.sigma_e();
}

/// Closed-form Gaussian fit: mu = sample mean, S = (sample covariance +
/// ridge I)^{-1}, h = 0. The ridge defaults to 1e-6 tr(Cov)/N; pass
/// ridge_scale = 0 to disable, in which case T <= N is rejected.
inline GaussianEnergyModel fit_gaussian_mle(const TimeSeriesMatrix& X,
                                            double ridge_scale = kDefaultRidgeScale) {
    const Eigen::Index T = X.T(), N = X.N();
    if (ridge_scale == 0.0 && T <= N)
        throw SingularCovariance("T <= N with ridge disabled");
    const Vector mu = X.data.colwise().mean();
    Matrix centered = X.data.rowwise() - mu.transpose();
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(T - 1);
    const double tr = cov.trace();
    if (!(tr > 0.0)) throw SingularCovariance("sample covariance has zero trace");
    cov.diagonal().array() += ridge_scale * tr / static_cast<double>(N);
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw SingularCovariance("sample covariance is not invertible");
    Matrix S = llt.solve(Matrix::Identity(N, N));
    S = 0.5 * (S + S.transpose());
    return GaussianEnergyModel(mu, std::move(S), Vector::Zero(N));
}

/// Energies of every row of X under the model.
inline Vector energy_series(const Matrix& X, const GaussianEnergyModel& m) {
    Vector out(X.rows());
    for (Eigen::Index t = 0; t < X.rows(); ++t)
        out[t] = quadratic_energy(X.row(t).transpose(), m);
    return out;
}

}  // namespace elkit
