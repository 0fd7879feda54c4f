#include <doctest.h>

#include <cmath>

#include "dbnmon/quadrature.hpp"
#include "oracles.hpp"

using namespace dbnmon;

TEST_CASE("exactness and point counts") {
    for (int d = 1; d <= 5; ++d) {
        CubatureRule r3 = build_rule(3, d);
        CHECK(r3.count() == 2 * d + 1);
        CHECK(max_monomial_error(r3) <= 1e-9);
        CubatureRule r5 = build_rule(5, d);
        CHECK(r5.count() == 2 * d * d + 1);
        CHECK(max_monomial_error(r5) <= 1e-9);
        CHECK(std::abs(r3.weights.sum() - 1.0) < 1e-12);
        CHECK(std::abs(r5.weights.sum() - 1.0) < 1e-12);
    }
    for (int d = 1; d <= 4; ++d) {
        CubatureRule r7 = build_rule(7, d);
        CHECK(r7.count() == (4 * d * d * d + 8 * d + 3) / 3);
        CHECK(max_monomial_error(r7) <= 1e-9);
        CHECK(std::abs(r7.weights.sum() - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(build_rule(4, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_rule(3, 0), std::invalid_argument);
}

TEST_CASE("precision 3 is the unscented point set") {
    const int d = 2;
    const double kappa = 1.0;
    CubatureRule r = build_rule(3, d, kappa);
    REQUIRE(r.count() == 5);
    CHECK(r.weights[0] == doctest::Approx(kappa / (d + kappa)));
    const double s = std::sqrt(d + kappa);
    // One point per axis direction at +/- sqrt(d+kappa), weight 1/(2(d+kappa)).
    int hits = 0;
    for (int j = 0; j < r.count(); ++j) {
        Eigen::Vector2d p = r.points.row(j);
        if (p.norm() < 1e-14) continue;
        CHECK(r.weights[j] == doctest::Approx(1.0 / (2.0 * (d + kappa))));
        CHECK(std::abs(p.cwiseAbs().maxCoeff() - s) < 1e-12);
        CHECK(p.cwiseAbs().minCoeff() < 1e-14);
        ++hits;
    }
    CHECK(hits == 4);
    // Default kappa = 3 - d.
    CubatureRule rdef = build_rule(3, 5);
    CHECK(rdef.weights[0] == doctest::Approx((3.0 - 5.0) / 3.0));
    CHECK_THROWS_AS(build_rule(3, 4, -4.0), std::invalid_argument);
}

TEST_CASE("negative center weight still integrates linear maps exactly") {
    // d = 4 with the default kappa = -1 puts negative weight on the center.
    CubatureRule r = build_rule(3, 4);
    CHECK(r.weights[0] < 0.0);
    Gaussian g({"a", "b", "c", "d"}, Eigen::Vector4d(1, 2, 3, 4),
               Eigen::MatrixXd(Eigen::Vector4d(0.5, 1.0, 0.2, 2.0).asDiagonal()));
    Eigen::MatrixXd w(2, 4);
    w << 1, -1, 0.5, 0, 0, 2, 0, -0.25;
    auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd { return w * y; };
    LocalMoments lm = estimate_local_moments(g, f, Eigen::MatrixXd(), r);
    Eigen::VectorXd ref_mean = w * g.mean();
    Eigen::MatrixXd ref_cov = w * g.cov() * w.transpose();
    CHECK((lm.mean - ref_mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((lm.cov - ref_cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((lm.cross - w * g.cov()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("moment estimation: quadratic function, additive noise, eval count") {
    Gaussian g({"y"}, Eigen::VectorXd::Constant(1, 0.5),
               Eigen::MatrixXd::Constant(1, 1, 2.0));
    auto f = [](const Eigen::VectorXd& y) {
        return Eigen::VectorXd::Constant(1, y[0] * y[0]);
    };
    Eigen::MatrixXd noise = Eigen::MatrixXd::Constant(1, 1, 0.3);
    CubatureRule r = build_rule(5, 1);
    LocalMoments lm = estimate_local_moments(g, f, noise, r);
    CHECK(lm.evals == r.count());
    // X = Y^2, Y ~ N(m, s): E[X] = m^2 + s, Var[X] = 4 m^2 s + 2 s^2,
    // Cov(X, Y) = 2 m s.
    const double m = 0.5, s = 2.0;
    CHECK(lm.mean[0] == doctest::Approx(m * m + s).epsilon(1e-10));
    CHECK(lm.cov(0, 0) == doctest::Approx(4 * m * m * s + 2 * s * s + 0.3).epsilon(1e-10));
    CHECK(lm.cross(0, 0) == doctest::Approx(2 * m * s).epsilon(1e-10));

    auto bad = [](const Eigen::VectorXd& y) {
        return Eigen::VectorXd::Constant(1, std::log(y[0]));  // NaN for y < 0
    };
    CHECK_THROWS_AS(estimate_local_moments(g, bad, Eigen::MatrixXd(), r),
                    std::runtime_error);
}

TEST_CASE("norm of a correlated pair: rule precision ordering (Fig. 3a shape)") {
    // Y1 ~ N(2, 4), Y2 | Y1 ~ N(0.5 Y1 - 1, 3); X = sqrt(Y1^2 + Y2^2).
    Eigen::Vector2d mu(2.0, 0.0);
    Eigen::Matrix2d sig;
    sig << 4.0, 2.0, 2.0, 4.0;
    auto g = [](double a, double b) { return std::sqrt(a * a + b * b); };
    const double oracle_mean = oracles::gh_expect2(g, mu, sig, 50);
    const double oracle_m2 = oracles::gh_expect2(
        [&](double a, double b) { return a * a + b * b; }, mu, sig, 50);
    const double oracle_sd = std::sqrt(oracle_m2 - oracle_mean * oracle_mean);

    Gaussian joint({"y1", "y2"}, mu, sig);
    auto fx = [&](const Eigen::VectorXd& y) {
        return Eigen::VectorXd::Constant(1, g(y[0], y[1]));
    };
    double err3 = std::abs(
        estimate_local_moments(joint, fx, {}, build_rule(3, 2)).mean[0] - oracle_mean);
    double err5 = std::abs(
        estimate_local_moments(joint, fx, {}, build_rule(5, 2)).mean[0] - oracle_mean);
    double err7 = std::abs(
        estimate_local_moments(joint, fx, {}, build_rule(7, 2)).mean[0] - oracle_mean);
    // EKF analog: first-order linearization predicts X at the mean point.
    double err_lin = std::abs(g(mu[0], mu[1]) - oracle_mean);

    CHECK(err_lin > err3);
    CHECK(err3 >= err5);
    CHECK(err5 >= err7 * 0.999);  // p7 may only tie p5 on this integrand
    CHECK(err5 < 0.02 * oracle_sd);
}

TEST_CASE("transform_points reproduces the parent moments") {
    Gaussian g = Gaussian({"a", "b"}, Eigen::Vector2d(1.0, -1.0),
                          (Eigen::Matrix2d() << 1.2, 0.4, 0.4, 0.9).finished());
    CubatureRule r = build_rule(5, 2);
    Eigen::MatrixXd pts = transform_points(r, g);
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (int j = 0; j < r.count(); ++j) {
        mean += r.weights[j] * pts.row(j).transpose();
    }
    for (int j = 0; j < r.count(); ++j) {
        Eigen::Vector2d d = pts.row(j).transpose() - mean;
        cov += r.weights[j] * d * d.transpose();
    }
    CHECK((mean - g.mean()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cov - g.cov()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gauss_hermite matches the independent construction") {
    Eigen::VectorXd nodes, weights;
    gauss_hermite(5, nodes, weights);
    std::vector<double> rn, rw;
    oracles::hermite_rule(5, rn, rw);
    REQUIRE(nodes.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(nodes[i] == doctest::Approx(rn[i]).epsilon(1e-9));
        CHECK(weights[i] == doctest::Approx(rw[i]).epsilon(1e-9));
    }
    // Degree-9 exactness: E[x^8] = 105 for one extra check beyond the rule tests.
    double m8 = 0.0;
    for (int i = 0; i < 5; ++i) m8 += weights[i] * std::pow(nodes[i], 8);
    CHECK(m8 == doctest::Approx(105.0).epsilon(1e-9));
}
