#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <numeric>

#include "elkit/mixture.hpp"
#include "elkit/rng.hpp"

using namespace elkit;

namespace {

Matrix random_spd(int N, Rng& rng, double lo = 0.6, double hi = 1.8) {
    Matrix G = rng.normal_matrix(N, N);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ();
    Vector eigs(N);
    for (int i = 0; i < N; ++i) eigs[i] = rng.uniform(lo, hi);
    return Q * eigs.asDiagonal() * Q.transpose();
}

MixtureEnergyModel random_mixture(int M, int N, Rng& rng, double spread = 4.0) {
    Vector eta(M);
    for (int m = 0; m < M; ++m) eta[m] = rng.uniform(0.5, 1.5);
    eta /= eta.sum();
    Matrix mus = rng.normal_matrix(M, N) * spread;
    std::vector<Matrix> Ss;
    for (int m = 0; m < M; ++m) Ss.push_back(random_spd(N, rng));
    return MixtureEnergyModel(eta, mus, Ss);
}

// extended-precision density quotient, fully independent of the model code
Vector responsibilities_oracle(const Vector& x, const Vector& eta, const Matrix& mus,
                               const std::vector<Matrix>& Ss) {
    const auto M = eta.size();
    const auto N = mus.cols();
    std::vector<long double> terms(static_cast<std::size_t>(M));
    long double total = 0.0L;
    for (Eigen::Index m = 0; m < M; ++m) {
        Eigen::LLT<Matrix> llt(Ss[static_cast<std::size_t>(m)]);
        long double logdet = 0.0L;
        for (Eigen::Index i = 0; i < N; ++i) logdet += 2.0L * std::log((long double)llt.matrixLLT()(i, i));
        const Vector d = x - mus.row(m).transpose();
        const long double quad = d.dot(Ss[static_cast<std::size_t>(m)] * d);
        const long double logphi =
            0.5L * logdet - 0.5L * N * (long double)kLog2Pi - 0.5L * quad;
        terms[static_cast<std::size_t>(m)] = (long double)eta[m] * std::exp(logphi);
        total += terms[static_cast<std::size_t>(m)];
    }
    Vector out(M);
    for (Eigen::Index m = 0; m < M; ++m)
        out[m] = static_cast<double>(terms[static_cast<std::size_t>(m)] / total);
    return out;
}

Matrix sample_mixture(const Vector& eta, const Matrix& mus, const std::vector<Matrix>& Sigmas,
                      int T, Rng& rng, std::vector<int>* labels = nullptr) {
    const auto N = mus.cols();
    std::vector<Eigen::LLT<Matrix>> chols;
    for (const auto& S : Sigmas) chols.emplace_back(S);
    Matrix X(T, N);
    for (int t = 0; t < T; ++t) {
        const int m = rng.categorical(eta);
        if (labels) labels->push_back(m);
        X.row(t) =
            (mus.row(m).transpose() + chols[static_cast<std::size_t>(m)].matrixL() *
                                          rng.normal_vector(N))
                .transpose();
    }
    return X;
}

double best_permutation_accuracy(const std::vector<int>& a, const std::vector<int>& b, int K) {
    std::vector<int> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 0.0;
    do {
        int hits = 0;
        for (std::size_t t = 0; t < a.size(); ++t)
            if (perm[static_cast<std::size_t>(a[t])] == b[t]) ++hits;
        best = std::max(best, static_cast<double>(hits) / static_cast<double>(a.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("single-component energy equals the normalized quadratic landscape") {
    Rng rng(71);
    const int N = 4;
    Matrix S = random_spd(N, rng);
    Vector mu = rng.normal_vector(N);
    MixtureEnergyModel m(Vector::Ones(1), mu.transpose(), {S});
    Eigen::LLT<Matrix> llt(S);
    double logdet = 0.0;
    for (int i = 0; i < N; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
    for (int rep = 0; rep < 20; ++rep) {
        const Vector x = rng.normal_vector(N) * 2.0;
        const Vector d = x - mu;
        const double expect = 0.5 * d.dot(S * d) - 0.5 * logdet + 0.5 * N * kLog2Pi;
        CHECK(mixture_energy(x, m) == Catch::Approx(expect).margin(1e-10));
    }
}

TEST_CASE("well-separated components are local minima with the expected depths") {
    Rng rng(72);
    const int N = 3;
    Vector eta = Vector::Constant(2, 0.5);
    Matrix mus(2, N);
    mus.row(0) = Vector::Constant(N, -6.0).transpose();
    mus.row(1) = Vector::Constant(N, 6.0).transpose();
    Matrix S = random_spd(N, rng);
    MixtureEnergyModel m(eta, mus, {S, S});

    for (int k = 0; k < 2; ++k) {
        const Vector mu_k = mus.row(k).transpose();
        // E(mu_k) ~ -log(eta_k phi(mu_k; mu_k, S)) when the other mode is far
        const double upper = -m.weighted_log_density(mu_k, k);
        CHECK(mixture_energy(mu_k, m) == Catch::Approx(upper).margin(1e-6));
        // descent probe from a perturbed start comes back to the mean
        const Vector probed = mixture_descend(mu_k + 0.5 * rng.normal_vector(N), m);
        CHECK((probed - mu_k).norm() < 0.05);
    }

    // coercivity: far points sit far above both wells
    const Vector u = rng.normal_vector(N).normalized();
    CHECK(mixture_energy(60.0 * u, m) > mixture_energy(mus.row(0).transpose(), m));
}

TEST_CASE("mixture energy never exceeds any single-component bound") {
    Rng rng(73);
    const auto m = random_mixture(3, 4, rng);
    for (int rep = 0; rep < 200; ++rep) {
        const Vector x = rng.normal_vector(4) * 5.0;
        const double e = mixture_energy(x, m);
        for (Eigen::Index k = 0; k < 3; ++k)
            CHECK(e <= -m.weighted_log_density(x, k) + 1e-10);
    }
}

TEST_CASE("responsibilities: degenerate, symmetric, and oracle-checked cases") {
    Rng rng(74);
    const int N = 3;
    // M = 1
    MixtureEnergyModel single(Vector::Ones(1), rng.normal_vector(N).transpose(),
                              {random_spd(N, rng)});
    CHECK(responsibilities(rng.normal_vector(N), single)[0] == Catch::Approx(1.0));

    // equidistant between identical equal-weight components
    Matrix mus(2, N);
    mus.row(0) << -1, 0, 0;
    mus.row(1) << 1, 0, 0;
    Matrix S = random_spd(N, rng);
    MixtureEnergyModel sym(Vector::Constant(2, 0.5), mus, {S, S});
    Vector mid = Vector::Zero(N);
    const Vector g = responsibilities(mid, sym);
    CHECK(g[0] == Catch::Approx(0.5).margin(1e-12));
    CHECK(g[1] == Catch::Approx(0.5).margin(1e-12));

    // random model against the extended-precision quotient
    const int M = 4;
    Vector eta(M);
    for (int m = 0; m < M; ++m) eta[m] = rng.uniform(0.2, 1.0);
    eta /= eta.sum();
    Matrix mus4 = rng.normal_matrix(M, N) * 2.0;
    std::vector<Matrix> Ss;
    for (int m = 0; m < M; ++m) Ss.push_back(random_spd(N, rng));
    MixtureEnergyModel model(eta, mus4, Ss);
    for (int rep = 0; rep < 30; ++rep) {
        const Vector x = rng.normal_vector(N) * 3.0;
        const Vector got = responsibilities(x, model);
        const Vector want = responsibilities_oracle(x, eta, mus4, Ss);
        CHECK(std::abs(got.sum() - 1.0) < 1e-12);
        CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("responsibilities are invariant to a common positive rescaling") {
    // adding a constant to every weighted log density leaves the softmax fixed
    Rng rng(75);
    const auto m = random_mixture(3, 4, rng);
    const Vector x = rng.normal_vector(4);
    const Vector logs = m.weighted_log_densities(x);
    auto softmax = [](Vector v) {
        const double mx = v.maxCoeff();
        Vector e = (v.array() - mx).exp();
        return (e / e.sum()).eval();
    };
    for (double c : {-37.0, 0.0, 11.5, 300.0}) {
        const Vector shifted = logs.array() + c;
        CHECK((softmax(shifted) - softmax(logs)).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("map labels at component means and in the single-component case") {
    Rng rng(76);
    const int N = 4, K = 3;
    Matrix mus = Matrix::Zero(K, N);
    for (int k = 0; k < K; ++k) mus(k, k) = 8.0;
    std::vector<Matrix> Ss(K, Matrix::Identity(N, N));
    MixtureEnergyModel m(Vector::Constant(K, 1.0 / K), mus, Ss);
    auto labels = map_labels(mus, m);
    CHECK(labels == std::vector<int>{0, 1, 2});

    MixtureEnergyModel single(Vector::Ones(1), mus.row(0), {Matrix::Identity(N, N)});
    auto ones = map_labels(rng.normal_matrix(10, N), single);
    CHECK(std::all_of(ones.begin(), ones.end(), [](int l) { return l == 0; }));
}

TEST_CASE("planted three-component labels recovered at high separation") {
    // 10-seed median accuracy after brute-force alignment
    std::vector<double> acc;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(800 + seed);
        const int N = 6, K = 3, T = 600;
        Matrix mus = Matrix::Zero(K, N);
        for (int k = 0; k < K; ++k) mus(k, k) = 6.0;
        std::vector<Matrix> Sigmas(K, Matrix::Identity(N, N));
        std::vector<int> truth;
        Matrix X = sample_mixture(Vector::Constant(K, 1.0 / K), mus, Sigmas, T, rng, &truth);
        auto fit = fit_gmm(TimeSeriesMatrix(X), K, 900 + seed);
        auto labels = map_labels(X, fit.model);
        acc.push_back(best_permutation_accuracy(labels, truth, K));
    }
    std::nth_element(acc.begin(), acc.begin() + 5, acc.end());
    CHECK(acc[5] >= 0.95);
}

TEST_CASE("single-gaussian em collapses to the closed-form fit") {
    Rng rng(77);
    const int N = 4, T = 3000;
    Vector mu0 = rng.normal_vector(N);
    Matrix Sigma0 = random_spd(N, rng);
    Matrix X = sample_mixture(Vector::Ones(1), mu0.transpose(), {Sigma0}, T, rng);
    TimeSeriesMatrix ts(X);
    auto em = fit_gmm(ts, 1, 42);
    auto mle = fit_gaussian_mle(ts);
    CHECK((em.model.mus().row(0).transpose() - mle.mu()).cwiseAbs().maxCoeff() < 1e-6);
    // T vs T-1 normalization and ridge keep these within a relative hair
    CHECK((em.model.Ss()[0] - mle.S()).norm() / mle.S().norm() < 5e-3);
}

TEST_CASE("planted two-component means recovered after alignment") {
    std::vector<double> errs;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(820 + seed);
        const int N = 4, T = 2000;
        Matrix mus(2, N);
        mus.row(0) = rng.normal_vector(N).transpose();
        mus.row(1) = mus.row(0) + 3.0 * Vector::Ones(N).transpose();
        std::vector<Matrix> Sigmas{random_spd(N, rng), random_spd(N, rng)};
        Matrix X = sample_mixture(Vector::Constant(2, 0.5), mus, Sigmas, T, rng);
        auto fit = fit_gmm(TimeSeriesMatrix(X), 2, 830 + seed);
        const Matrix& got = fit.model.mus();
        const double direct = std::max((got.row(0) - mus.row(0)).norm(),
                                       (got.row(1) - mus.row(1)).norm());
        const double swapped = std::max((got.row(0) - mus.row(1)).norm(),
                                        (got.row(1) - mus.row(0)).norm());
        errs.push_back(std::min(direct, swapped));
    }
    std::nth_element(errs.begin(), errs.begin() + 5, errs.end());
    CHECK(errs[5] < 0.2);
}

TEST_CASE("em log-likelihood trace is monotone on every fit") {
    Rng rng(78);
    for (int rep = 0; rep < 5; ++rep) {
        const int N = 3, T = 400;
        Matrix mus(2, N);
        mus.row(0).setConstant(-2.0);
        mus.row(1).setConstant(2.0);
        std::vector<Matrix> Sigmas(2, Matrix::Identity(N, N));
        Matrix X = sample_mixture(Vector::Constant(2, 0.5), mus, Sigmas, T, rng);
        auto fit = fit_gmm(TimeSeriesMatrix(X), 2, 7000 + rep);
        REQUIRE(fit.loglik_trace.size() >= 2);
        for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) {
            const double scale = std::max(1.0, std::abs(fit.loglik_trace[i - 1]));
            CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-6 * scale);
        }
    }
}

TEST_CASE("descent minima sit where one responsibility dominates") {
    Rng rng(79);
    const int N = 3;
    Matrix mus(2, N);
    mus.row(0).setConstant(-3.0);
    mus.row(1).setConstant(3.0);
    Matrix S = random_spd(N, rng);
    MixtureEnergyModel m(Vector::Constant(2, 0.5), mus, {S, S});
    for (int rep = 0; rep < 30; ++rep) {
        const Vector start = rng.normal_vector(N) * 4.0;
        const Vector minimum = mixture_descend(start, m);
        CHECK(responsibilities(minimum, m).maxCoeff() > 0.5);
    }
}

TEST_CASE("bic prefers the true component count") {
    int hits1 = 0, hits3 = 0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(840 + seed);
        const int N = 3, T = 600;
        // unimodal data
        Matrix X1 = sample_mixture(Vector::Ones(1), Vector::Zero(N).transpose().eval(),
                                   {random_spd(N, rng)}, T, rng);
        if (select_components_bic(TimeSeriesMatrix(X1), 3, 850 + seed).M == 1) ++hits1;
        // well-separated trimodal data
        Matrix mus = Matrix::Zero(3, N);
        for (int k = 0; k < 3; ++k) mus(k, k) = 7.0;
        std::vector<Matrix> Sigmas(3, Matrix::Identity(N, N));
        Matrix X3 = sample_mixture(Vector::Constant(3, 1.0 / 3.0), mus, Sigmas, T, rng);
        if (select_components_bic(TimeSeriesMatrix(X3), 4, 860 + seed).M == 3) ++hits3;
    }
    CHECK(hits1 >= 8);
    CHECK(hits3 >= 8);
}

TEST_CASE("bic with a single candidate returns one") {
    Rng rng(80);
    Matrix X = rng.normal_matrix(200, 3);
    CHECK(select_components_bic(TimeSeriesMatrix(X), 1, 1).M == 1);
}

TEST_CASE("mixture model validation") {
    Rng rng(81);
    const int N = 3;
    Vector bad_eta(2);
    bad_eta << 0.7, 0.7;
    CHECK_THROWS_AS(
        MixtureEnergyModel(bad_eta, rng.normal_matrix(2, N), {Matrix::Identity(N, N).eval(),
                                                              Matrix::Identity(N, N).eval()}),
        ConfigError);
    Matrix notspd = -Matrix::Identity(N, N);
    CHECK_THROWS_AS(MixtureEnergyModel(Vector::Ones(1), rng.normal_matrix(1, N), {notspd}),
                    NotPositiveDefinite);
    CHECK_THROWS_AS(fit_gmm(TimeSeriesMatrix(rng.normal_matrix(6, 3)), 2, 1), DataError);
}
