#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dirlik/model.hpp"

using namespace dirlik;
using Catch::Approx;

namespace {

ScmParams two_env_chain() {
    ScmParams params;
    params.b = Eigen::MatrixXd::Zero(2, 2);
    params.b(1, 0) = -0.7;
    params.gamma = Eigen::MatrixXd::Zero(2, 1);
    params.w1 = Eigen::VectorXd::Constant(2, 0.5);
    EnvSpec obs, shifted;
    obs.w = params.w1;
    shifted.w = (params.w1.array() + 5.0).matrix();
    params.envs = {obs, shifted};
    return params;
}

}  // namespace

TEST_CASE("sigma_model closed forms", "[model]") {
    const int p = 3;
    CHECK((sigma_model(Eigen::MatrixXd::Zero(p, p), Eigen::MatrixXd::Zero(p, 1), 0.0,
                       Eigen::VectorXd::Ones(p)) -
           Eigen::MatrixXd::Identity(p, p))
              .norm() == Approx(0.0).margin(1e-14));

    // Hand product for the two-variable chain.
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
    b(1, 0) = -0.7;
    const Eigen::MatrixXd sigma =
        sigma_model(b, Eigen::MatrixXd::Zero(2, 0), 0.0, Eigen::VectorXd::Constant(2, 0.5));
    CHECK(sigma(0, 0) == Approx(0.5));
    CHECK(sigma(1, 0) == Approx(-0.35));
    CHECK(sigma(1, 1) == Approx(0.745));

    // b = 0, one latent column, psi = 1: identity plus twice the outer product.
    Eigen::MatrixXd gamma(3, 1);
    gamma << 0.3, -0.2, 0.5;
    const Eigen::MatrixXd lifted =
        sigma_model(Eigen::MatrixXd::Zero(3, 3), gamma, 1.0, Eigen::VectorXd::Ones(3));
    CHECK((lifted - Eigen::MatrixXd::Identity(3, 3) - 2.0 * gamma * gamma.transpose()).norm() ==
          Approx(0.0).margin(1e-14));
}

TEST_CASE("sigma_model eigenvalues dominate the damped noise floor", "[model]") {
    // The smallest eigenvalue is bounded below by min(w) divided by the
    // squared spectral norm of (I - B); the undamped bound min(w) alone fails
    // for strong connectivity.
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int p = 4;
        Dag d = sample_er_dag(p, 0.3, rng);
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(p, p);
        for (const auto& [j, i] : d.edges()) b(i, j) = rng.uniform(-1.0, 1.0);
        Eigen::MatrixXd gamma(p, 2);
        for (int i = 0; i < p; ++i)
            for (int c = 0; c < 2; ++c) gamma(i, c) = rng.uniform(-0.5, 0.5);
        Eigen::VectorXd w(p);
        for (int i = 0; i < p; ++i) w(i) = rng.uniform(0.2, 2.0);
        const double psi = rng.uniform(0.0, 1.0);
        const Eigen::MatrixXd sigma = sigma_model(b, gamma, psi, w);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
        const double smax = (Eigen::MatrixXd::Identity(p, p) - b).jacobiSvd().singularValues()(0);
        CHECK(es.eigenvalues().minCoeff() >= w.minCoeff() / (smax * smax) - 1e-10);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("simulate recovers the identity covariance in the large-sample limit", "[model]") {
    ScmParams params;
    const int p = 3;
    params.b = Eigen::MatrixXd::Zero(p, p);
    params.gamma = Eigen::MatrixXd::Zero(p, 0);
    params.w1 = Eigen::VectorXd::Ones(p);
    EnvSpec obs;
    obs.w = params.w1;
    params.envs = {obs};
    const auto sims =
        simulate(params, {1000000}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(0, 0), 0.0, 31);
    CHECK((sims[0].data.cov - Eigen::MatrixXd::Identity(p, p)).lpNorm<Eigen::Infinity>() < 0.01);
}

TEST_CASE("simulate matches the model covariance entrywise", "[model]") {
    ScmParams params;
    const int p = 4;
    params.b = Eigen::MatrixXd::Zero(p, p);
    params.b(1, 0) = -0.7;
    params.b(2, 1) = 0.5;
    params.b(3, 2) = -0.4;
    params.gamma = Eigen::MatrixXd(p, 1);
    params.gamma << 0.4, 0.0, 0.3, -0.2;
    params.w1 = Eigen::VectorXd::Constant(p, 0.5);
    EnvSpec obs, shifted;
    obs.w = params.w1;
    shifted.w = (params.w1.array() + 2.0).matrix();
    shifted.psi = 0.5;
    params.envs = {obs, shifted};

    const long n = 100000;
    const auto sims = simulate(params, {n, n}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(1, 1), 0.0, 93);
    for (size_t e = 0; e < sims.size(); ++e) {
        const Eigen::MatrixXd expected =
            sigma_model(params.b, params.gamma, params.envs[e].psi, params.envs[e].w);
        const double bound = 5.0 * std::sqrt(std::log(static_cast<double>(p)) / n) *
                             expected.diagonal().maxCoeff();
        CHECK((sims[e].data.cov - expected).lpNorm<Eigen::Infinity>() < bound);
    }
}

TEST_CASE("simulate is deterministic and permutation-symmetric", "[model]") {
    ScmParams params = two_env_chain();
    const auto a = simulate(params, {50, 60}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(1, 1), 0.0, 17);
    const auto b = simulate(params, {50, 60}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(1, 1), 0.0, 17);
    CHECK(a[0].samples == b[0].samples);  // bitwise
    CHECK(a[1].samples == b[1].samples);

    // Relabeling the variables commutes with simulation: permute parameters,
    // simulate, and compare against permuting the sampled columns.
    ScmParams swapped = params;
    swapped.b.setZero();
    swapped.b(0, 1) = -0.7;  // edge 1 -> 0 after swapping labels
    const auto c = simulate(swapped, {50, 60}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(1, 1), 0.0, 17);
    CHECK((c[0].samples.col(0) - a[0].samples.col(1)).norm() == Approx(0.0).margin(1e-12));
    CHECK((c[0].samples.col(1) - a[0].samples.col(0)).norm() == Approx(0.0).margin(1e-12));
}

TEST_CASE("do-interventions pin columns and sever propagation", "[model]") {
    ScmParams params = two_env_chain();
    params.envs[1].do_values[0] = 5.0;
    const auto sims = simulate(params, {40, 40}, NoiseKind::Gaussian, Eigen::MatrixXd::Identity(1, 1), 0.0, 4);
    CHECK((sims[1].samples.col(0).array() == 5.0).all());
    CHECK(sims[1].data.cov(0, 0) == Approx(0.0).margin(1e-12));
    // Children still read the pinned value: the mean of x1 is near -0.7 * 5.
    CHECK(sims[1].samples.col(1).mean() == Approx(-3.5).margin(0.5));
}

TEST_CASE("laplace noise has the configured variances", "[model]") {
    ScmParams params;
    params.b = Eigen::MatrixXd::Zero(1, 1);
    params.gamma = Eigen::MatrixXd::Zero(1, 0);
    params.w1 = Eigen::VectorXd::Constant(1, 0.5);
    EnvSpec obs, shifted;
    obs.w = params.w1;
    shifted.w = Eigen::VectorXd::Constant(1, 0.5 + 2.0 * 25.0);  // extra scale 5
    params.envs = {obs, shifted};
    const auto sims =
        simulate(params, {200000, 200000}, NoiseKind::Laplace, Eigen::MatrixXd::Identity(0, 0), 0.0, 8);
    CHECK(sims[0].data.cov(0, 0) == Approx(0.5).epsilon(0.05));
    CHECK(sims[1].data.cov(0, 0) == Approx(50.5).epsilon(0.05));
}

TEST_CASE("population_env_data produces exact covariances", "[model]") {
    ScmParams iso;
    iso.b = Eigen::MatrixXd::Zero(2, 2);
    iso.gamma = Eigen::MatrixXd::Zero(2, 0);
    iso.w1 = Eigen::VectorXd::Ones(2);
    EnvSpec only;
    only.w = iso.w1;
    iso.envs = {only};
    const auto data = population_env_data(iso);
    CHECK((data[0].cov - Eigen::MatrixXd::Identity(2, 2)).norm() == Approx(0.0).margin(1e-14));
    CHECK(data[0].n == 0);

    // Two-node chain, second environment shifted by 5: the difference is
    // 5 (I-B)^-1 (I-B)^-T.
    ScmParams chain = two_env_chain();
    const auto envs = population_env_data(chain);
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2) - chain.b;
    const Eigen::MatrixXd lhs = envs[1].cov - envs[0].cov;
    const Eigen::MatrixXd rhs = 5.0 * a.inverse() * a.inverse().transpose();
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() == Approx(0.0).margin(1e-12));

    // Latent perturbation contributes (psi2) (I-B)^-1 Gamma Gamma^T (I-B)^-T
    // on top of the unscaled observational covariance.
    ScmParams lat = two_env_chain();
    lat.gamma = Eigen::MatrixXd(2, 1);
    lat.gamma << 0.5, -0.3;
    lat.envs[1].w = lat.w1;
    lat.envs[1].psi = 0.5;
    const auto lenvs = population_env_data(lat);
    const Eigen::MatrixXd extra =
        0.5 * a.inverse() * lat.gamma * lat.gamma.transpose() * a.inverse().transpose();
    CHECK((lenvs[1].cov - lenvs[0].cov - extra).lpNorm<Eigen::Infinity>() == Approx(0.0).margin(1e-12));
}

TEST_CASE("parameter validation", "[model]") {
    ScmParams params = two_env_chain();
    params.b(0, 0) = 0.1;
    CHECK_THROWS_AS(params.validate(), InputError);

    params = two_env_chain();
    params.w1(0) = 0.0;
    CHECK_THROWS_AS(params.validate(), InputError);

    params = two_env_chain();
    params.envs[0].psi = 0.5;  // observational environment must be unperturbed
    CHECK_THROWS_AS(params.validate(), InputError);

    params = two_env_chain();
    params.envs[1].w(0) = 0.1;  // below the base level
    CHECK_THROWS_AS(params.validate(), InputError);
}
