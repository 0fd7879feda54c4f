#include "dbnmon/plant.hpp"

#include <cmath>
#include <stdexcept>

namespace dbnmon {

namespace {

using FpUpdate = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                               const Modes&)>;

// z = (p_loop, f_rec, f_vent, f_feed, dp_mem)
// parents = (c_h2, c_co2, c_co, p_sup, k_mem_h2, k_mem_cox, prev.p_loop)
FpUpdate make_fp_update(const PlantConfig& cfg) {
    const double a = cfg.comp_a, b = cfg.comp_b;
    const double rho_m = cfg.rho_m, rho_v = cfg.rho_v, dp0 = cfg.dp0;
    const double theta_f = cfg.theta_f, eta_p = cfg.eta_p;
    return [=](const Eigen::VectorXd& z, const Eigen::VectorXd& p, const Modes& modes) {
        double comp_on = 1.0;
        if (auto it = modes.find("comp_on"); it != modes.end()) comp_on = it->second;
        const double perm = p[4] * p[0] + p[5] * (p[1] + 0.7 * p[2]);
        Eigen::VectorXd zn(5);
        zn[1] = comp_on > 0.5 ? std::max(a - b * z[4], 0.0) : 0.0;
        zn[4] = rho_m * z[1] + rho_v * (z[3] - z[2]) + dp0;
        zn[2] = perm * std::max(z[4], 0.0);
        zn[3] = theta_f * (p[3] - z[0]);
        zn[0] = p[6] + eta_p * (z[3] - z[2]);
        return zn;
    };
}

struct Nominal {
    double c_h2, c_co2, c_co;
    Eigen::VectorXd z;
};

/// Cross-step steady state of the flow balance at nominal compositions:
/// the within-step fixed point, iterated with prev.p_loop fed back.
Nominal nominal_point(const PlantConfig& cfg) {
    Nominal n;
    n.c_h2 = 0.5 * (cfg.m_ref + cfg.b_ref);
    n.c_co2 = 0.5 * (cfg.m_ref - cfg.b_ref);
    n.c_co = 1.0 - cfg.m_ref;

    FpUpdate update = make_fp_update(cfg);
    Modes modes{{"comp_on", 1.0}};
    Eigen::VectorXd p(7);
    p << n.c_h2, n.c_co2, n.c_co, cfg.p_sup_ref, cfg.k_h2, cfg.k_cox, cfg.p_sup_ref;

    Eigen::VectorXd z(5);
    z << cfg.p_sup_ref, 0.5 * cfg.comp_a, 1.0, 1.0, 1.0;
    for (int outer = 0; outer < 500; ++outer) {
        for (int inner = 0; inner < cfg.fp_max_iters; ++inner) {
            Eigen::VectorXd next = update(z, p, modes);
            double resid = (next - z).cwiseAbs().maxCoeff();
            z = next;
            if (resid <= 1e-12) break;
        }
        if (std::abs(z[0] - p[6]) <= 1e-11) {
            n.z = z;
            return n;
        }
        p[6] = z[0];
    }
    throw std::runtime_error(
        "build_plant_model: flow balance has no steady state at the nominal point; "
        "check the loop gains");
}

}  // namespace

Tbn build_plant_model(const PlantConfig& cfg) {
    Nominal nom = nominal_point(cfg);

    TbnBuilder b;
    b.variable("c_h2", Role::State, "frac")
        .variable("c_co2", Role::State, "frac")
        .variable("c_co", Role::State, "frac")
        .variable("p_loop", Role::State, "bar")
        .variable("f_rec", Role::State, "slm")
        .variable("f_vent", Role::State, "slm")
        .variable("f_feed", Role::State, "slm")
        .variable("dp_mem", Role::State, "bar")
        .variable("p_sup", Role::State, "bar")
        .variable("bias_p3", Role::Bias, "bar")
        .variable("bias_p4", Role::Bias, "bar")
        .variable("bias_fvent", Role::Bias, "slm")
        .variable("bias_frec", Role::Bias, "slm")
        .variable("k_mem_h2", Role::State)
        .variable("k_mem_cox", Role::State)
        .variable("tank_level", Role::State, "pct")
        .variable("react_eff", Role::State)
        .variable("mem_temp", Role::State, "K")
        .variable("s_p3", Role::Sensor, "bar", "bias_p3")
        .variable("s_p4", Role::Sensor, "bar", "bias_p4")
        .variable("s_fvent", Role::Sensor, "slm", "bias_fvent")
        .variable("s_frec", Role::Sensor, "slm", "bias_frec")
        .variable("s_ffeed", Role::Sensor, "slm")
        .variable("s_ll", Role::Sensor, "pct");

    // Auxiliary AR(1) states.
    b.linear("react_eff", {{prev("react_eff"), 1.0 - cfg.react_rate}},
             cfg.react_rate * cfg.react_ref, cfg.react_noise_sd * cfg.react_noise_sd);
    b.linear("mem_temp", {{prev("mem_temp"), 1.0 - cfg.temp_rate}}, 0.0,
             cfg.temp_noise_sd * cfg.temp_noise_sd);
    b.linear("k_mem_h2", {{prev("k_mem_h2"), 1.0 - cfg.k_rate}}, cfg.k_rate * cfg.k_h2,
             cfg.k_noise_sd * cfg.k_noise_sd);
    b.linear("k_mem_cox", {{prev("k_mem_cox"), 1.0 - cfg.k_rate}}, cfg.k_rate * cfg.k_cox,
             cfg.k_noise_sd * cfg.k_noise_sd);

    // Supply pressure relaxes toward its reference; a dump raises the target.
    {
        LinearGaussianCpd cpd;
        cpd.params = {{{prev("p_sup"), 1.0 - cfg.p_sup_rate}},
                      cfg.p_sup_rate * cfg.p_sup_ref,
                      cfg.p_sup_noise_sd * cfg.p_sup_noise_sd};
        cpd.mode_key = "dump";
        cpd.variants[1] = {{{prev("p_sup"), 1.0 - cfg.p_sup_rate}},
                           cfg.p_sup_rate * (cfg.p_sup_ref + cfg.dump_mag),
                           cfg.p_sup_noise_sd * cfg.p_sup_noise_sd};
        b.linear("p_sup", std::move(cpd));
    }

    // Tank fills steadily and is emptied by a dump.
    {
        LinearGaussianCpd cpd;
        cpd.params = {{{prev("tank_level"), 1.0}}, cfg.tank_inflow,
                      cfg.tank_noise_sd * cfg.tank_noise_sd};
        cpd.mode_key = "dump";
        cpd.variants[1] = {{{prev("tank_level"), cfg.tank_keep}}, 0.0,
                           cfg.tank_noise_sd * cfg.tank_noise_sd};
        b.linear("tank_level", std::move(cpd));
    }

    // Compositions in balance coordinates; the simplex constraint is kept
    // exactly by construction and the noise enters through two inputs only.
    {
        NonlinearCpd cpd;
        cpd.parents = {prev("c_h2"), prev("c_co2"), prev("react_eff")};
        Stage st;
        st.outputs = {"c_h2", "c_co2", "c_co"};
        st.inputs = {"prev.c_h2", "prev.c_co2", "prev.react_eff"};
        st.noise_inputs = 2;
        const double s = cfg.comp_pull, b_ref = cfg.b_ref;
        const double mr = cfg.m_rate, m_ref = cfg.m_ref;
        const double b_sd = cfg.b_noise_sd, m_sd = cfg.m_noise_sd;
        st.f = [=](const Eigen::VectorXd& in, const Modes&) {
            const double bal = in[0] - in[1];
            const double tot = in[0] + in[1];
            const double bal2 = bal - s * (bal - b_ref) + b_sd * in[3];
            const double tot2 = tot - mr * (tot - m_ref * in[2]) + m_sd * in[4];
            Eigen::Vector3d out;
            out << 0.5 * (tot2 + bal2), 0.5 * (tot2 - bal2), 1.0 - tot2;
            return out;
        };
        cpd.stages = {std::move(st)};
        b.nonlinear({"c_h2", "c_co2", "c_co"}, std::move(cpd));
    }

    // Flow balance: compressor, membrane vent, feed valve, and loop pressure
    // solved jointly to a fixed point each step.
    {
        FixedPointCpd fp;
        fp.parents = {cur("c_h2"),      cur("c_co2"),    cur("c_co"),
                      cur("p_sup"),     cur("k_mem_h2"), cur("k_mem_cox"),
                      prev("p_loop")};
        fp.update = make_fp_update(cfg);
        fp.nominal_z = nom.z;
        fp.tol = cfg.fp_tol;
        fp.max_iters = cfg.fp_max_iters;
        Eigen::VectorXd sd(5);
        sd << cfg.zn_p, cfg.zn_fr, cfg.zn_fv, cfg.zn_ff, cfg.zn_dp;
        fp.noise_cov = sd.cwiseProduct(sd).asDiagonal();
        b.fixed_point({"p_loop", "f_rec", "f_vent", "f_feed", "dp_mem"}, std::move(fp));
    }

    // Sensor biases.
    b.bias("bias_p3", cfg.bias_gamma, cfg.bias_drift_var);
    b.bias("bias_p4", cfg.bias_gamma, cfg.bias_drift_var);
    b.bias("bias_fvent", cfg.bias_gamma, cfg.bias_drift_var);
    b.bias("bias_frec", cfg.bias_gamma, cfg.bias_drift_var);

    // Pressure, feed-flow and level sensors are linear in the state.
    b.linear("s_p3", {{cur("p_loop"), 1.0}, {cur("bias_p3"), 1.0}}, 0.0, cfg.p_sensor_var);
    b.linear("s_p4", {{cur("p_loop"), 0.9}, {cur("bias_p4"), 1.0}}, 0.5, cfg.p_sensor_var);
    b.linear("s_ffeed", {{cur("f_feed"), 1.0}}, 0.0, cfg.ffeed_var);
    b.linear("s_ll", {{cur("tank_level"), 1.0}}, 0.0, cfg.ll_var);

    // Flow sensors respond to the component flows, not the bulk flow; the
    // per-component products are encapsulated intermediate stages.
    auto flow_sensor = [&](const std::string& name, const std::string& comp,
                           const std::string& flow, const std::string& bias_name,
                           double gain_a, double gain_b) {
        NonlinearCpd cpd;
        cpd.parents = {cur(comp), cur(flow), cur("mem_temp"), cur(bias_name)};
        Stage split;
        split.outputs = {name + ".t_main", name + ".t_rest"};
        split.inputs = {comp, flow};
        split.f = [](const Eigen::VectorXd& in, const Modes&) {
            Eigen::Vector2d out;
            out << in[0] * in[1], (1.0 - in[0]) * in[1];
            return out;
        };
        Stage mix;
        mix.outputs = {name};
        mix.inputs = {name + ".t_main", name + ".t_rest", "mem_temp", bias_name};
        const double tc = cfg.temp_coeff;
        mix.f = [=](const Eigen::VectorXd& in, const Modes&) {
            Eigen::VectorXd out(1);
            out[0] = gain_a * in[0] + gain_b * in[1] + tc * in[2] + in[3];
            return out;
        };
        mix.noise_cov = Eigen::MatrixXd::Constant(1, 1, cfg.flow_sensor_var);
        cpd.stages = {std::move(split), std::move(mix)};
        b.nonlinear({name}, std::move(cpd));
    };
    flow_sensor("s_fvent", "c_h2", "f_vent", "bias_fvent", 1.1, 0.95);
    flow_sensor("s_frec", "c_co2", "f_rec", "bias_frec", 1.05, 0.9);

    return b.build();
}

Gaussian plant_initial_belief(const PlantConfig& cfg) {
    Nominal nom = nominal_point(cfg);
    std::vector<std::string> labels = {
        "c_h2",    "c_co2",   "c_co",       "p_loop",    "f_rec",      "f_vent",
        "f_feed",  "dp_mem",  "p_sup",      "bias_p3",   "bias_p4",    "bias_fvent",
        "bias_frec", "k_mem_h2", "k_mem_cox", "tank_level", "react_eff", "mem_temp"};
    Eigen::VectorXd mean(18);
    mean << nom.c_h2, nom.c_co2, nom.c_co, nom.z[0], nom.z[1], nom.z[2], nom.z[3], nom.z[4],
        cfg.p_sup_ref, 0, 0, 0, 0, cfg.k_h2, cfg.k_cox, 0.5, cfg.react_ref, 0.0;
    Eigen::VectorXd var(18);
    var << 4e-4, 4e-4, 4e-4, 0.01, 0.05, 0.02, 0.02, 0.01, 0.01, 0.04, 0.04, 0.04, 0.04,
        0.01, 0.01, 1.0, 1e-4, 0.01;
    return Gaussian(labels, mean, var.asDiagonal());
}

std::vector<Modes> plant_modes(int steps, const PlantConfig& cfg) {
    std::vector<Modes> modes(steps);
    for (int t = 0; t < steps; ++t) {
        modes[t]["comp_on"] = 1.0;
        bool dump = cfg.dump_period > 0 &&
                    t % cfg.dump_period >= cfg.dump_period - cfg.dump_length;
        modes[t]["dump"] = dump ? 1.0 : 0.0;
    }
    return modes;
}

FittedParams fit_parameters(const Trajectory& traj) {
    std::vector<Eigen::Vector2d> comp_rows, mem_rows;
    std::vector<double> comp_y, mem_y;
    for (const auto& v : traj.values) {
        const double fr = v.at("f_rec");
        const double dp = v.at("dp_mem");
        const double fv = v.at("f_vent");
        if (fr > 1e-9) {
            comp_rows.push_back({1.0, -dp});
            comp_y.push_back(fr);
        }
        const double dpp = std::max(dp, 0.0);
        mem_rows.push_back({v.at("c_h2") * dpp, (v.at("c_co2") + 0.7 * v.at("c_co")) * dpp});
        mem_y.push_back(fv);
    }

    auto solve2 = [](const std::vector<Eigen::Vector2d>& rows, const std::vector<double>& y,
                     const char* what) {
        Eigen::MatrixXd a(rows.size(), 2);
        Eigen::VectorXd rhs(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            a.row(i) = rows[i].transpose();
            rhs[i] = y[i];
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (rows.size() < 2 ||
            svd.singularValues()[1] <= 1e-10 * svd.singularValues()[0])
            throw std::runtime_error(std::string("fit_parameters: ") + what +
                                     " regression is rank deficient; the trajectory has "
                                     "no identifying transients");
        return Eigen::Vector2d(svd.solve(rhs));
    };

    Eigen::Vector2d comp = solve2(comp_rows, comp_y, "compressor");
    Eigen::Vector2d mem = solve2(mem_rows, mem_y, "membrane");
    return {comp[0], comp[1], mem[0], mem[1]};
}

// ---------------------------------------------------------------------------

Tbn build_linear6_model() {
    TbnBuilder b;
    b.variable("x1", Role::State)
        .variable("x2", Role::State)
        .variable("x3", Role::State)
        .variable("x4", Role::State)
        .variable("x5", Role::State)
        .variable("x6", Role::Bias)
        .variable("y1", Role::Sensor, "", "x6")
        .variable("y2", Role::Sensor)
        .variable("y3", Role::Sensor);
    b.linear("x1", {{prev("x1"), 0.9}, {prev("x2"), 0.1}}, 0.0, 0.01);
    b.linear("x2", {{prev("x1"), -0.2}, {prev("x2"), 0.8}, {prev("x3"), 0.05}}, 0.0, 0.02);
    b.linear("x3", {{prev("x3"), 0.85}, {prev("x4"), 0.1}}, 0.1, 0.015);
    b.linear("x4", {{prev("x1"), -0.05}, {prev("x4"), 0.9}}, 0.0, 0.01);
    b.linear("x5", {{prev("x3"), 0.05}, {prev("x5"), 0.95}}, 0.0, 0.02);
    b.bias("x6", 0.97, 2e-4);
    b.linear("y1", {{cur("x1"), 1.0}, {cur("x6"), 1.0}}, 0.0, 0.05);
    b.linear("y2", {{cur("x2"), 1.0}, {cur("x4"), -0.5}}, 0.0, 0.04);
    b.linear("y3", {{cur("x3"), 1.0}, {cur("x5"), 0.3}}, 0.0, 0.05);
    return b.build();
}

Gaussian linear6_initial_belief() {
    std::vector<std::string> labels = {"x1", "x2", "x3", "x4", "x5", "x6"};
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
    Eigen::MatrixXd cov = 0.5 * Eigen::MatrixXd::Identity(6, 6);
    return Gaussian(labels, mean, cov);
}

// ---------------------------------------------------------------------------

PlantConfig plant_config_from(const Config& cfg) {
    PlantConfig c;
    auto d = [&](const char* key, double& field) { field = cfg.get(key, field); };
    auto i = [&](const char* key, int& field) {
        field = static_cast<int>(cfg.get(key, static_cast<long>(field)));
    };
    d("comp_pull", c.comp_pull);
    d("b_ref", c.b_ref);
    d("m_ref", c.m_ref);
    d("m_rate", c.m_rate);
    d("b_noise_sd", c.b_noise_sd);
    d("m_noise_sd", c.m_noise_sd);
    d("react_rate", c.react_rate);
    d("react_ref", c.react_ref);
    d("react_noise_sd", c.react_noise_sd);
    d("temp_rate", c.temp_rate);
    d("temp_noise_sd", c.temp_noise_sd);
    d("k_h2", c.k_h2);
    d("k_cox", c.k_cox);
    d("k_rate", c.k_rate);
    d("k_noise_sd", c.k_noise_sd);
    d("p_sup_ref", c.p_sup_ref);
    d("p_sup_rate", c.p_sup_rate);
    d("p_sup_noise_sd", c.p_sup_noise_sd);
    d("dump_mag", c.dump_mag);
    d("tank_inflow", c.tank_inflow);
    d("tank_noise_sd", c.tank_noise_sd);
    d("tank_keep", c.tank_keep);
    d("comp_a", c.comp_a);
    d("comp_b", c.comp_b);
    d("rho_m", c.rho_m);
    d("rho_v", c.rho_v);
    d("dp0", c.dp0);
    d("theta_f", c.theta_f);
    d("eta_p", c.eta_p);
    d("fp_tol", c.fp_tol);
    i("fp_max_iters", c.fp_max_iters);
    d("zn_p", c.zn_p);
    d("zn_fr", c.zn_fr);
    d("zn_fv", c.zn_fv);
    d("zn_ff", c.zn_ff);
    d("zn_dp", c.zn_dp);
    d("bias_gamma", c.bias_gamma);
    d("bias_drift_var", c.bias_drift_var);
    d("p_sensor_var", c.p_sensor_var);
    d("flow_sensor_var", c.flow_sensor_var);
    d("ll_var", c.ll_var);
    d("ffeed_var", c.ffeed_var);
    d("temp_coeff", c.temp_coeff);
    i("dump_period", c.dump_period);
    i("dump_length", c.dump_length);
    return c;
}

std::vector<std::string> model_names() { return {"plant", "linear6"}; }

ModelBundle make_model(const std::string& name, const Config& cfg, int steps) {
    if (name == "plant") {
        PlantConfig pc = plant_config_from(cfg);
        return {build_plant_model(pc), plant_initial_belief(pc), plant_modes(steps, pc), pc};
    }
    if (name == "linear6")
        return {build_linear6_model(), linear6_initial_belief(),
                std::vector<Modes>(steps), PlantConfig{}};
    throw std::invalid_argument("unknown model '" + name + "'; known: plant, linear6");
}

}  // namespace dbnmon
