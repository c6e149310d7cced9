#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "elkit/eval.hpp"
#include "elkit/rng.hpp"
#include "elkit/simulate.hpp"

using namespace elkit;

namespace {

double brute_force_min_cost(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += cost(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

std::vector<std::optional<Vector>> wrap(const Matrix& rows) {
    std::vector<std::optional<Vector>> out;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) out.emplace_back(rows.row(i).transpose());
    return out;
}

}  // namespace

TEST_CASE("centroids by independent per-label summation") {
    Rng rng(101);
    const int T = 60, N = 4, B = 3;
    Matrix X = rng.normal_matrix(T, N);
    std::vector<int> labels(T);
    for (int t = 0; t < T; ++t) labels[static_cast<std::size_t>(t)] =
        static_cast<int>(rng.uniform_int(B));
    auto cents = basin_centroids(X, labels, B);
    for (int b = 0; b < B; ++b) {
        Vector sum = Vector::Zero(N);
        int count = 0;
        for (int t = 0; t < T; ++t)
            if (labels[static_cast<std::size_t>(t)] == b) {
                sum += X.row(t).transpose();
                ++count;
            }
        REQUIRE(count > 0);
        CHECK((*cents[static_cast<std::size_t>(b)] - sum / count).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("centroid degenerate cases") {
    Matrix X(2, 3);
    X << 1, 2, 3, 5, 6, 7;
    // one point per basin: centroid equals the point
    auto cents = basin_centroids(X, {0, 1}, 2);
    CHECK(*cents[0] == X.row(0).transpose());
    CHECK(*cents[1] == X.row(1).transpose());
    // symmetric pair: centroid at the midpoint
    auto mid = basin_centroids(X, {0, 0}, 1);
    CHECK((*mid[0] - 0.5 * (X.row(0) + X.row(1)).transpose()).cwiseAbs().maxCoeff() < 1e-15);
    // empty basin: optional slot empty, strict variant throws
    auto sparse = basin_centroids(X, {0, 0}, 2);
    CHECK(!sparse[1].has_value());
    CHECK_THROWS_AS(basin_centroids_strict(X, {0, 0}, 2), EmptyBasin);
}

TEST_CASE("hungarian matches trivial geometries") {
    Rng rng(102);
    Matrix pts = rng.normal_matrix(4, 3);
    auto m = hungarian_match(wrap(pts), pts);
    CHECK(m.perm == std::vector<int>{0, 1, 2, 3});
    CHECK(m.total_cost < 1e-12);

    // swapped pair resolves to the transposition
    Matrix swapped(2, 3);
    swapped.row(0) = pts.row(1);
    swapped.row(1) = pts.row(0);
    auto ms = hungarian_match(wrap(swapped), pts.topRows(2));
    CHECK(ms.perm == std::vector<int>{1, 0});
}

TEST_CASE("hungarian equals brute force on random square instances up to K=5") {
    Rng rng(103);
    for (int rep = 0; rep < 200; ++rep) {
        const int K = 2 + static_cast<int>(rng.uniform_int(4));  // 2..5
        Matrix A = rng.normal_matrix(K, 3) * 2.0;
        Matrix B = rng.normal_matrix(K, 3) * 2.0;
        auto m = hungarian_match(wrap(A), B);
        Matrix cost(K, K);
        for (int a = 0; a < K; ++a)
            for (int b = 0; b < K; ++b) cost(a, b) = (A.row(a) - B.row(b)).norm();
        double total = 0.0;
        for (int a = 0; a < K; ++a) total += cost(a, m.perm[static_cast<std::size_t>(a)]);
        CHECK(total == Catch::Approx(brute_force_min_cost(cost)).margin(1e-9));
    }
}

TEST_CASE("hungarian pads mismatched counts with dummies") {
    Rng rng(104);
    Matrix truth = rng.normal_matrix(4, 3);
    // fewer recovered basins than true states
    auto partial = hungarian_match(wrap(truth.topRows(2)), truth);
    CHECK(partial.perm == std::vector<int>{0, 1});
    // more recovered basins than true states: extras match dummies as -1
    Matrix extra(5, 3);
    extra.topRows(4) = truth;
    extra.row(4) = truth.row(0) + 20.0 * Vector::Ones(3).transpose();
    auto crowded = hungarian_match(wrap(extra), truth);
    CHECK(crowded.perm[0] == 0);
    CHECK(crowded.perm[4] == -1);
    // empty centroid slots never match
    auto cents = wrap(truth);
    cents[2].reset();
    auto holey = hungarian_match(cents, truth);
    CHECK(holey.perm[2] == -1);
}

TEST_CASE("basin recovery counts matched centroids within kappa") {
    Matrix truth(3, 2);
    truth << 0, 0, 4, 0, 0, 4;
    // exact centroids recover everything for any positive kappa
    auto exact = hungarian_match(wrap(truth), truth);
    CHECK(basin_recovery(exact, wrap(truth), truth, 1e-9) == 1.0);

    // construct two of three inside kappa
    Matrix noisy = truth;
    noisy.row(0) += Vector::Constant(2, 0.1).transpose();
    noisy.row(1) += Vector::Constant(2, 0.1).transpose();
    noisy.row(2) += Vector::Constant(2, 3.0).transpose();
    auto m = hungarian_match(wrap(noisy), truth);
    CHECK(basin_recovery(m, wrap(noisy), truth, 0.5) == Catch::Approx(2.0 / 3.0));
    // kappa = 0 with noise recovers nothing
    CHECK(basin_recovery(m, wrap(noisy), truth, 0.0) == 0.0);
}

TEST_CASE("transition matrix estimation") {
    // constant labels: identity row for the visited state, uniform elsewhere
    Matrix P1 = transition_matrix(std::vector<int>(10, 1), 3);
    CHECK(P1(1, 1) == 1.0);
    CHECK(P1(0, 0) == Catch::Approx(1.0 / 3.0));

    // strict alternation
    std::vector<int> alt;
    for (int t = 0; t < 20; ++t) alt.push_back(t % 2);
    Matrix P2 = transition_matrix(alt, 2);
    CHECK(P2(0, 1) == 1.0);
    CHECK(P2(1, 0) == 1.0);

    // long chain consistency with the generator
    RegimeChain chain(3, 0.88);
    auto z = sample_chain(chain, 100000, 7ULL);
    CHECK((transition_matrix(z, 3) - chain.P).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("tma extremes and direct formula") {
    RegimeChain chain(3, 0.9);
    CHECK(tma(chain.P, chain.P) == 1.0);

    Matrix flip(2, 2), point(2, 2);
    point << 1, 0, 0, 1;
    flip << 0, 1, 1, 0;
    CHECK(tma(flip, point) == Catch::Approx(0.0));

    Rng rng(105);
    Matrix A(3, 3), B(3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            A(i, j) = rng.uniform();
            B(i, j) = rng.uniform();
        }
        A.row(i) /= A.row(i).sum();
        B.row(i) /= B.row(i).sum();
    }
    double tv = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) tv += std::abs(A(i, j) - B(i, j));
    CHECK(tma(A, B) == Catch::Approx(1.0 - tv / 6.0).margin(1e-12));
}

TEST_CASE("sda occupancy agreement") {
    std::vector<int> z{0, 0, 1, 1, 2, 2};
    CHECK(sda(z, z, 3) == 1.0);
    CHECK(sda(std::vector<int>(6, 0), std::vector<int>(6, 1), 2) == 0.0);

    // histogram oracle on random label pairs
    Rng rng(106);
    const int K = 4, T = 300;
    std::vector<int> a(T), b(T);
    for (int t = 0; t < T; ++t) {
        a[static_cast<std::size_t>(t)] = static_cast<int>(rng.uniform_int(K));
        b[static_cast<std::size_t>(t)] = static_cast<int>(rng.uniform_int(K));
    }
    Vector ha = Vector::Zero(K), hb = Vector::Zero(K);
    for (int t = 0; t < T; ++t) {
        ha[a[static_cast<std::size_t>(t)]] += 1.0 / T;
        hb[b[static_cast<std::size_t>(t)]] += 1.0 / T;
    }
    CHECK(sda(a, b, K) == Catch::Approx(1.0 - 0.5 * (ha - hb).cwiseAbs().sum()).margin(1e-12));
}

TEST_CASE("metrics are permutation consistent and perfect on exact recovery") {
    Rng rng(107);
    auto cfg = make_slds_config(5, 3, 400, 3.0, 11);
    auto sim = simulate_slds(cfg, 12);
    // score the truth against itself
    auto report = score_recovery(sim.X.data, sim.z, 3, sim.centers, sim.z, sim.P_star,
                                 default_kappa(sim.centers));
    CHECK(report.br == 1.0);
    CHECK(report.tma == Catch::Approx(1.0).margin(0.08));  // finite-T estimate of P_star
    CHECK(report.sda == 1.0);

    // relabel both sides with the same permutation: metrics unchanged
    std::vector<int> perm{2, 0, 1};
    std::vector<int> z_perm(sim.z.size());
    for (std::size_t t = 0; t < sim.z.size(); ++t)
        z_perm[t] = perm[static_cast<std::size_t>(sim.z[t])];
    Matrix centers_perm(3, 5);
    for (int k = 0; k < 3; ++k) centers_perm.row(perm[static_cast<std::size_t>(k)]) = sim.centers.row(k);
    Matrix P_perm(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            P_perm(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) =
                sim.P_star(i, j);
    auto report_perm = score_recovery(sim.X.data, z_perm, 3, centers_perm, z_perm, P_perm,
                                      default_kappa(centers_perm));
    CHECK(report_perm.br == Catch::Approx(report.br));
    CHECK(report_perm.tma == Catch::Approx(report.tma).margin(1e-12));
    CHECK(report_perm.sda == Catch::Approx(report.sda).margin(1e-12));

    // and all three always live in [0, 1]
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<int> noise(sim.z.size());
        for (auto& l : noise) l = static_cast<int>(rng.uniform_int(3));
        auto r = score_recovery(sim.X.data, noise, 3, sim.centers, sim.z, sim.P_star,
                                default_kappa(sim.centers));
        CHECK((r.br >= 0.0 && r.br <= 1.0));
        CHECK((r.tma >= 0.0 && r.tma <= 1.0));
        CHECK((r.sda >= 0.0 && r.sda <= 1.0));
    }
}
