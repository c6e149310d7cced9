#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "elkit/rng.hpp"
#include "elkit/serialize.hpp"

using namespace elkit;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) {
    auto p = fs::temp_directory_path() / ("elkit_ser_" + name);
    fs::remove(p);
    return p;
}

Matrix random_spd(int N, Rng& rng) {
    Matrix G = rng.normal_matrix(N, N);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ();
    Vector eigs(N);
    for (int i = 0; i < N; ++i) eigs[i] = rng.uniform(0.5, 2.0);
    return Q * eigs.asDiagonal() * Q.transpose();
}

}  // namespace

TEST_CASE("ising model json round trip") {
    Rng rng(121);
    IsingFitResult fit;
    Matrix W = rng.normal_matrix(5, 5);
    fit.model.W = 0.5 * (W + W.transpose());
    fit.model.W.diagonal().setZero();
    fit.model.h = rng.normal_vector(5);
    fit.lambda = 0.01;
    fit.info = {true, 42, 3.2e-7, -1.5};

    auto path = temp("ising.json");
    save_ising_model(path, fit);
    CHECK(read_model_type(path) == "del");
    auto back = load_ising_model(path);
    CHECK((back.model.W - fit.model.W).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.model.h - fit.model.h).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(back.lambda == fit.lambda);
    CHECK(back.info.converged == fit.info.converged);
    CHECK(back.info.iterations == fit.info.iterations);
}

TEST_CASE("gaussian model json round trip preserves cached quantities") {
    Rng rng(122);
    GaussianEnergyModel m(rng.normal_vector(4), random_spd(4, rng), rng.normal_vector(4));
    auto path = temp("gauss.json");
    save_gaussian_model(path, m);
    auto back = load_gaussian_model(path);
    CHECK((back.mu() - m.mu()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.S() - m.S()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.e_min() == Catch::Approx(m.e_min()).margin(1e-12));
    CHECK(back.sigma_e() == Catch::Approx(m.sigma_e()).margin(1e-12));
}

TEST_CASE("mixture model json round trip") {
    Rng rng(123);
    Vector eta(2);
    eta << 0.4, 0.6;
    MixtureFitResult fit{MixtureEnergyModel(eta, rng.normal_matrix(2, 3),
                                            {random_spd(3, rng), random_spd(3, rng)}),
                         -123.4,
                         {true, 17, 0.0, 0.0},
                         {}};
    auto path = temp("mix.json");
    save_mixture_model(path, fit, 250.0);
    auto back = load_mixture_model(path);
    CHECK(back.model.M() == 2);
    CHECK((back.model.mus() - fit.model.mus()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.model.eta() - fit.model.eta()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.model.Ss()[1] - fit.model.Ss()[1]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back.loglik == fit.loglik);

    // energies agree through the round trip on random probes
    for (int rep = 0; rep < 10; ++rep) {
        const Vector x = rng.normal_vector(3);
        CHECK(mixture_energy(x, back.model) ==
              Catch::Approx(mixture_energy(x, fit.model)).margin(1e-10));
    }
}

TEST_CASE("gcn checkpoint round trip is bit exact") {
    Rng rng(124);
    GcnParams p;
    p.layer_weights = {rng.normal_matrix(8, 16), rng.normal_matrix(16, 16)};
    p.Wz = rng.normal_matrix(16, 4);
    p.field_map = rng.normal_vector(16);
    p.epsilon = 1e-5;
    FitInfo info{false, 900, 0.02, 55.5};

    auto path = temp("ckpt.json");
    save_gcn_checkpoint(path, p, info);
    auto [back, back_info] = load_gcn_checkpoint(path);
    CHECK(back.layer_weights[0] == p.layer_weights[0]);
    CHECK(back.layer_weights[1] == p.layer_weights[1]);
    CHECK(back.Wz == p.Wz);
    CHECK(back.field_map == p.field_map);
    CHECK(back.epsilon == p.epsilon);
    CHECK(back_info.iterations == info.iterations);
}

TEST_CASE("loaders reject wrong types and corrupt files") {
    Rng rng(125);
    GaussianEnergyModel m(rng.normal_vector(3), random_spd(3, rng), rng.normal_vector(3));
    auto path = temp("wrongtype.json");
    save_gaussian_model(path, m);
    CHECK_THROWS_AS(load_ising_model(path), DataError);

    auto garbage = temp("garbage.json");
    std::ofstream(garbage) << "this is not json";
    CHECK_THROWS_AS(load_gaussian_model(garbage), DataError);

    // truncated checkpoint blob
    GcnParams p;
    p.layer_weights = {rng.normal_matrix(4, 4)};
    p.Wz = rng.normal_matrix(4, 2);
    p.field_map = rng.normal_vector(4);
    auto ckpt = temp("short.json");
    save_gcn_checkpoint(ckpt, p, {});
    auto blob = ckpt;
    blob.replace_extension(".bin");
    fs::resize_file(blob, 8);
    CHECK_THROWS_AS(load_gcn_checkpoint(ckpt), DataError);
}

TEST_CASE("training trace and label csv writers") {
    auto trace_path = temp("trace.csv");
    write_training_trace(trace_path, {{0, 10.5, 1.0}, {1, 9.25, 0.5}});
    std::ifstream in(trace_path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,loss,grad_norm");
    std::getline(in, line);
    CHECK(line == "0,10.5,1");

    Rng rng(126);
    Vector eta(2);
    eta << 0.5, 0.5;
    Matrix mus(2, 3);
    mus.row(0).setConstant(-4.0);
    mus.row(1).setConstant(4.0);
    MixtureEnergyModel m(eta, mus,
                         {Matrix::Identity(3, 3).eval(), Matrix::Identity(3, 3).eval()});
    auto labels_path = temp("labels.csv");
    write_mixture_labels_csv(labels_path, mus, m);
    std::ifstream lin(labels_path);
    std::getline(lin, line);
    CHECK(line == "t,label,max_responsibility");
    std::getline(lin, line);
    CHECK(line.substr(0, 4) == "0,0,");
    std::getline(lin, line);
    CHECK(line.substr(0, 4) == "1,1,");
}
