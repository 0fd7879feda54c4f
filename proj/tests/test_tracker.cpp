#include <doctest.h>

#include "dbnmon/plant.hpp"
#include "dbnmon/tracker.hpp"
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

}  // namespace

TEST_CASE("structured filter equals the Kalman recursion on a linear model") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    const int steps = 200;
    std::vector<Modes> modes(steps);
    Trajectory traj = forward_sample(m, init, modes, steps, 17);
    auto evidence = sensor_evidence(m, traj);

    StepProgram prog(m);
    oracles::LinearSystem sys = oracles::extract_linear(prog);

    for (int precision : {3, 5}) {
        Tracker tracker(m, RulePolicy{precision});
        BeliefTrace trace = tracker.track_sequence(init, modes, evidence);
        REQUIRE(!trace.error);
        Eigen::VectorXd mean = init.mean();
        Eigen::MatrixXd cov = init.cov();
        for (int t = 0; t < steps; ++t) {
            Eigen::VectorXd y(m.sensor_names().size());
            for (size_t i = 0; i < m.sensor_names().size(); ++i)
                y[i] = evidence[t].at(m.sensor_names()[i]);
            oracles::KalmanState ks = oracles::kalman_step(sys, mean, cov, y);
            mean = ks.mean;
            cov = ks.cov;
            Gaussian bel = trace.beliefs[t + 1].marginalize(m.persistent());
            CHECK((bel.mean() - mean).cwiseAbs().maxCoeff() < 1e-9);
            CHECK((bel.cov() - cov).cwiseAbs().maxCoeff() < 1e-9);
            CHECK(std::abs(trace.steps[t].log_likelihood - ks.loglik) < 1e-8);
        }
    }
}

TEST_CASE("encapsulated linear stages equal the direct linear CPD") {
    auto build = [](bool staged) {
        TbnBuilder b;
        b.variable("x", Role::State).variable("y", Role::State).variable("z", Role::State);
        b.linear("x", {{prev("x"), 0.9}}, 0.1, 0.05);
        b.linear("y", {{prev("y"), 0.8}}, 0.0, 0.04);
        if (staged) {
            // z = 2 x + 3 y + 1 computed through a temp t = x + y.
            NonlinearCpd cpd;
            cpd.parents = {cur("x"), cur("y")};
            Stage s1;
            s1.outputs = {"t"};
            s1.inputs = {"x", "y"};
            s1.f = [](const Eigen::VectorXd& in, const Modes&) {
                return Eigen::VectorXd::Constant(1, in[0] + in[1]);
            };
            Stage s2;
            s2.outputs = {"z"};
            s2.inputs = {"t", "y"};
            s2.f = [](const Eigen::VectorXd& in, const Modes&) {
                return Eigen::VectorXd::Constant(1, 2.0 * in[0] + in[1] + 1.0);
            };
            s2.noise_cov = Eigen::MatrixXd::Constant(1, 1, 0.02);
            cpd.stages = {s1, s2};
            b.nonlinear({"z"}, std::move(cpd));
        } else {
            b.linear("z", {{cur("x"), 2.0}, {cur("y"), 3.0}}, 1.0, 0.02);
        }
        return b.build();
    };
    Tbn staged = build(true), direct = build(false);
    Gaussian init({"x", "y", "z"}, Eigen::Vector3d(1.0, -1.0, 0.0),
                  (Eigen::Vector3d(0.3, 0.2, 0.5)).asDiagonal());
    Tracker ta(staged, RulePolicy{3}), tb(direct, RulePolicy{3});
    auto ra = ta.filter_step(init, {}, {});
    auto rb = tb.filter_step(init, {}, {});
    Gaussian ga = ra.belief.marginalize({"x", "y", "z"});
    Gaussian gb = rb.belief.marginalize({"x", "y", "z"});
    CHECK((ga.mean() - gb.mean()).cwiseAbs().maxCoeff() < 1e-10);
    // The deterministic temp makes the local joint singular, so its
    // extension goes through the epsilon repair; agreement is to ~epsilon.
    CHECK((ga.cov() - gb.cov()).cwiseAbs().maxCoeff() < 1e-7);
    // The temp never reaches the belief state.
    CHECK_FALSE(ra.belief.has("t"));
}

TEST_CASE("no evidence: log-likelihood zero, belief is the propagated prior") {
    Tbn m = build_linear6_model();
    Gaussian init = linear6_initial_belief();
    Tracker tracker(m, RulePolicy{3});
    auto res = tracker.filter_step(init, {}, {});
    CHECK(res.record.log_likelihood == 0.0);
    StepProgram prog(m);
    oracles::LinearSystem sys = oracles::extract_linear(prog);
    Gaussian bel = res.belief.marginalize(m.persistent());
    CHECK((bel.mean() - (sys.A * init.mean() + sys.b)).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::MatrixXd pp = sys.A * init.cov() * sys.A.transpose() + sys.G * sys.G.transpose();
    CHECK((bel.cov() - pp).cwiseAbs().maxCoeff() < 1e-10);
    // Sensor predictions are still produced.
    CHECK(res.record.sensor_predictions.size() == m.sensor_names().size());
    CHECK_THROWS_AS(tracker.filter_step(init, {}, {{"x1", 0.0}}), std::invalid_argument);
}

TEST_CASE("bias-subtracted sensor prediction") {
    Tbn m = build_linear6_model();
    Eigen::VectorXd mean(6);
    mean << 1.0, 0, 0, 0, 0, 0.25;  // x6 is the bias on y1
    Gaussian init({"x1", "x2", "x3", "x4", "x5", "x6"}, mean,
                  Eigen::MatrixXd::Identity(6, 6) * 0.1);
    Tracker tracker(m, RulePolicy{3});
    auto res = tracker.filter_step(init, {}, {});
    const auto& sp = res.record.sensor_predictions.at("y1");
    // y1 = x1' + x6'; prediction subtracts the propagated bias mean.
    CHECK(sp.mean - sp.mean_unbiased == doctest::Approx(0.97 * 0.25).epsilon(1e-9));
    const auto& sp2 = res.record.sensor_predictions.at("y2");
    CHECK(sp2.mean == sp2.mean_unbiased);
}

TEST_CASE("function evaluation accounting per node") {
    TbnBuilder b;
    b.variable("a", Role::State).variable("c", Role::State).variable("q", Role::State);
    b.linear("a", {{prev("a"), 0.9}}, 0.0, 0.1);
    // Nonlinear node: stage over (prev.a, prev.c) plus one noise input, d = 3.
    NonlinearCpd nl;
    nl.parents = {prev("a"), prev("c")};
    Stage st;
    st.outputs = {"c"};
    st.inputs = {"prev.a", "prev.c"};
    st.noise_inputs = 1;
    st.f = [](const Eigen::VectorXd& in, const Modes&) {
        return Eigen::VectorXd::Constant(1, std::tanh(in[0]) + 0.5 * in[1] + 0.01 * in[2]);
    };
    nl.stages = {std::move(st)};
    b.nonlinear({"c"}, std::move(nl));
    // Fixed point with two parents, d = 2.
    FixedPointCpd fp;
    fp.parents = {cur("a"), cur("c")};
    fp.update = [](const Eigen::VectorXd& z, const Eigen::VectorXd& p, const Modes&) {
        return Eigen::VectorXd::Constant(1, 0.5 * z[0] + 0.1 * p[0] + 0.2 * p[1]);
    };
    fp.nominal_z = Eigen::VectorXd::Zero(1);
    fp.noise_cov = Eigen::MatrixXd::Constant(1, 1, 0.01);
    b.fixed_point({"q"}, std::move(fp));
    Tbn m = b.build();
    REQUIRE(m.validate().empty());

    Gaussian init({"a", "c", "q"}, Eigen::Vector3d::Zero(),
                  Eigen::Matrix3d::Identity() * 0.2);
    for (int precision : {3, 5}) {
        Tracker tracker(m, RulePolicy{precision});
        auto res = tracker.filter_step(init, {}, {});
        long audited = build_rule(precision, 3).count()   // nonlinear stage
                       + build_rule(precision, 2).count();  // fixed point
        CHECK(res.record.function_evals == audited);
    }
}

TEST_CASE("degenerate child is repaired and counted") {
    TbnBuilder b;
    b.variable("a", Role::State).variable("u", Role::State).variable("v", Role::State);
    b.linear("a", {{prev("a"), 0.9}}, 0.0, 0.1);
    NonlinearCpd nl;
    nl.parents = {prev("a")};
    Stage st;
    st.outputs = {"u", "v"};
    st.inputs = {"prev.a"};
    st.f = [](const Eigen::VectorXd& in, const Modes&) {
        // v is an exact copy of u: the extension is only PSD, not PD.
        return Eigen::Vector2d(std::sin(in[0]), std::sin(in[0]));
    };
    nl.stages = {std::move(st)};
    b.nonlinear({"u", "v"}, std::move(nl));
    Tbn m = b.build();
    Gaussian init({"a", "u", "v"}, Eigen::Vector3d(0.3, 0, 0),
                  Eigen::Matrix3d::Identity());
    Tracker tracker(m, RulePolicy{3});
    auto res = tracker.filter_step(init, {}, {});
    CHECK(res.record.repairs >= 1);
    Gaussian bel = res.belief.marginalize({"u", "v"});
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bel.cov());
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
}

TEST_CASE("tracking failure returns a partial trace with the failing step") {
    TbnBuilder b;
    b.variable("x", Role::State);
    NonlinearCpd nl;
    nl.parents = {prev("x")};
    Stage st;
    st.outputs = {"x"};
    st.inputs = {"prev.x"};
    st.f = [](const Eigen::VectorXd& in, const Modes& modes) {
        if (modes.count("boom")) return Eigen::VectorXd::Constant(1, std::nan(""));
        return Eigen::VectorXd::Constant(1, 0.9 * in[0]);
    };
    st.noise_cov = Eigen::MatrixXd::Constant(1, 1, 0.1);
    nl.stages = {std::move(st)};
    b.nonlinear({"x"}, std::move(nl));
    Tbn m = b.build();
    Gaussian init({"x"}, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
    std::vector<Modes> modes(5);
    modes[3]["boom"] = 1.0;
    Tracker tracker(m, RulePolicy{3});
    BeliefTrace trace =
        tracker.track_sequence(init, modes, std::vector<std::map<std::string, double>>(5));
    REQUIRE(trace.error);
    CHECK(trace.failed_step == 3);
    CHECK(trace.beliefs.size() == 4);  // initial + three completed steps
    CHECK(trace.error->find("'x'") != std::string::npos);
}
