#include <doctest.h>

#include <random>

#include "dbnmon/baselines.hpp"
#include "dbnmon/plant.hpp"
#include "oracles.hpp"

using namespace dbnmon;

namespace {

std::vector<std::map<std::string, double>> sensor_evidence(const Tbn& m,
                                                           const Trajectory& traj) {
    std::vector<std::map<std::string, double>> ev;
    for (const auto& vals : traj.values) {
        std::map<std::string, double> e;
        for (const auto& s : m.sensor_names()) e[s] = vals.at(s);
        ev.push_back(std::move(e));
    }
    return ev;
}

Eigen::VectorXd evidence_vector(const Tbn& m, const std::map<std::string, double>& e) {
    Eigen::VectorXd y(m.sensor_names().size());
    for (size_t i = 0; i < m.sensor_names().size(); ++i) y[i] = e.at(m.sensor_names()[i]);
    return y;
}

}  // namespace

TEST_CASE("EKF equals the Kalman recursion on a linear model") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    const int steps = 100;
    std::vector<Modes> modes(steps);
    Trajectory traj = forward_sample(m, init, modes, steps, 21);
    auto evidence = sensor_evidence(m, traj);

    StepProgram prog(m);
    oracles::LinearSystem sys = oracles::extract_linear(prog);

    Gaussian bel = init;
    Eigen::VectorXd mean = init.mean();
    Eigen::MatrixXd cov = init.cov();
    for (int t = 0; t < steps; ++t) {
        BaselineStep bs = ekf_step(bel, prog, modes[t], evidence[t]);
        oracles::KalmanState ks =
            oracles::kalman_step(sys, mean, cov, evidence_vector(m, evidence[t]));
        mean = ks.mean;
        cov = ks.cov;
        // Central differences are exact on an affine map up to roundoff.
        CHECK((bs.belief.mean() - mean).cwiseAbs().maxCoeff() < 1e-7);
        CHECK((bs.belief.cov() - cov).cwiseAbs().maxCoeff() < 1e-7);
        CHECK(std::abs(bs.log_likelihood - ks.loglik) < 1e-6);
        bel = bs.belief;
    }
}

TEST_CASE("monolithic UF equals the Kalman recursion and counts 2d+1 points") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    const int steps = 100;
    std::vector<Modes> modes(steps);
    Trajectory traj = forward_sample(m, init, modes, steps, 22);
    auto evidence = sensor_evidence(m, traj);

    StepProgram prog(m);
    oracles::LinearSystem sys = oracles::extract_linear(prog);

    Gaussian bel = init;
    Eigen::VectorXd mean = init.mean();
    Eigen::MatrixXd cov = init.cov();
    for (int t = 0; t < steps; ++t) {
        UfStep us = monolithic_uf_step(bel, prog, modes[t], evidence[t]);
        CHECK(us.sigma_point_evals == 2 * prog.state_dim() + 1);
        CHECK(us.noise_evals == 2 * prog.noise_dim());
        oracles::KalmanState ks =
            oracles::kalman_step(sys, mean, cov, evidence_vector(m, evidence[t]));
        mean = ks.mean;
        cov = ks.cov;
        CHECK((us.belief.mean() - mean).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((us.belief.cov() - cov).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(us.log_likelihood - ks.loglik) < 1e-8);
        bel = us.belief;
    }
}

TEST_CASE("particle filter init and no-evidence step keep uniform weights") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    StepProgram prog(m);
    std::mt19937_64 rng(31);
    const int n = 5000;
    ParticleSet ps = particle_filter_init(init, m.persistent(), n, rng);
    CHECK(ps.count() == n);
    CHECK(ps.ess == doctest::Approx(n));
    CHECK(ps.max_weight == doctest::Approx(1.0 / n));
    // Sample moments of the init cloud match the initial Gaussian.
    Eigen::VectorXd mc = ps.particles.colwise().mean();
    CHECK((mc - init.mean()).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(double(n)));

    ParticleSet after = particle_filter_step(ps, prog, {}, {}, rng);
    CHECK(after.max_weight == doctest::Approx(1.0 / n));
    CHECK(after.ess == doctest::Approx(double(n)));
    CHECK(after.log_likelihood == doctest::Approx(0.0));
}

TEST_CASE("particle filter tracks the Kalman posterior on a linear model") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    const int steps = 30;
    std::vector<Modes> modes(steps);
    Trajectory traj = forward_sample(m, init, modes, steps, 23);
    auto evidence = sensor_evidence(m, traj);

    StepProgram prog(m);
    oracles::LinearSystem sys = oracles::extract_linear(prog);

    std::mt19937_64 rng(77);
    const int n = 20000;
    ParticleSet ps = particle_filter_init(init, m.persistent(), n, rng);
    Eigen::VectorXd mean = init.mean();
    Eigen::MatrixXd cov = init.cov();
    double pf_ll = 0.0, kf_ll = 0.0, err_sum = 0.0;
    for (int t = 0; t < steps; ++t) {
        ps = particle_filter_step(ps, prog, modes[t], evidence[t], rng);
        oracles::KalmanState ks =
            oracles::kalman_step(sys, mean, cov, evidence_vector(m, evidence[t]));
        mean = ks.mean;
        cov = ks.cov;
        pf_ll += ps.log_likelihood;
        kf_ll += ks.loglik;
        // Resampling correlates particles across steps, so the per-step bound
        // is loose; the time average below is the sharp check.
        CHECK((ps.weighted_mean - mean).cwiseAbs().maxCoeff() < 0.2);
        err_sum += (ps.weighted_mean - mean).cwiseAbs().maxCoeff();
        // Resampling preserves the weighted mean up to sampling noise.
        Eigen::VectorXd rs_mean = ps.particles.colwise().mean();
        CHECK((rs_mean - ps.weighted_mean).cwiseAbs().maxCoeff() < 0.1);
    }
    CHECK(err_sum / steps < 0.05);
    CHECK(std::abs(pf_ll - kf_ll) / steps < 0.05);
}

TEST_CASE("particle filter rejects noiseless sensors") {
    TbnBuilder b;
    b.variable("x", Role::State).variable("s", Role::Sensor);
    b.linear("x", {{prev("x"), 0.9}}, 0.0, 0.1);
    b.linear("s", {{cur("x"), 1.0}}, 0.0, 0.0);
    Tbn m = b.build();
    StepProgram prog(m);
    Gaussian init({"x"}, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    std::mt19937_64 rng(1);
    ParticleSet ps = particle_filter_init(init, m.persistent(), 100, rng);
    CHECK_THROWS_AS(particle_filter_step(ps, prog, {}, {{"s", 0.0}}, rng),
                    std::invalid_argument);
}
