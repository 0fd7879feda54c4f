#ifndef DBNMON_PLANT_HPP
#define DBNMON_PLANT_HPP

#include <string>
#include <vector>

#include "dbnmon/config.hpp"
#include "dbnmon/gaussian.hpp"
#include "dbnmon/model.hpp"

namespace dbnmon {

/// Parameters of the synthetic recirculating gas loop: a membrane separator
/// vents product gas, a compressor drives the recycle stream, and a feed
/// valve tops the loop up from a supply tank that is refilled in periodic
/// dumps. Compositions evolve as a slow random walk around the reactor
/// operating point.
struct PlantConfig {
    // Composition dynamics, in balance coordinates b = c_h2 - c_co2 and
    // m = c_h2 + c_co2 (c_co = 1 - m).
    double comp_pull = 0.02;   // pull of b toward b_ref; 0 gives a pure random walk
    double b_ref = 0.05;
    double m_ref = 0.70;
    double m_rate = 0.02;      // relaxation of m toward m_ref * react_eff
    double b_noise_sd = 0.008;
    double m_noise_sd = 0.004;

    // Auxiliary process states.
    double react_rate = 0.01;
    double react_ref = 1.0;
    double react_noise_sd = 0.002;
    double temp_rate = 0.05;   // membrane temperature, AR(1) around 0
    double temp_noise_sd = 0.01;
    double k_h2 = 2.0;         // membrane permeation gains (H2 and CO-family)
    double k_cox = 0.8;
    double k_rate = 0.01;
    double k_noise_sd = 1e-3;

    // Supply pressure and tank.
    double p_sup_ref = 10.0;
    double p_sup_rate = 0.2;
    double p_sup_noise_sd = 0.02;
    double dump_mag = 1.5;     // supply-pressure target offset during a dump
    double tank_inflow = 0.02;
    double tank_noise_sd = 0.01;
    double tank_keep = 0.05;   // fraction of the tank level kept by a dump

    // Flow-balance fixed point z = (p_loop, f_rec, f_vent, f_feed, dp_mem).
    double comp_a = 50.0;      // compressor curve f_rec = a - b * dp_mem
    double comp_b = 10.0;
    double rho_m = 0.05;       // membrane pressure drop per unit recycle flow
    double rho_v = 0.02;       // pressure drop from the net vent imbalance
    double dp0 = 0.1;
    double theta_f = 5.0;      // feed valve gain on (p_sup - p_loop)
    double eta_p = 0.1;        // loop pressure response to the net inflow
    double fp_tol = 1e-8;
    int fp_max_iters = 200;
    double zn_p = 0.04;        // additive process noise sd per z component
    double zn_fr = 0.2;
    double zn_fv = 0.1;
    double zn_ff = 0.1;
    double zn_dp = 0.04;

    // Sensor biases and noise.
    double bias_gamma = 0.97;
    double bias_drift_var = 2e-4;
    double p_sensor_var = 1e-4;
    double flow_sensor_var = 1e-4;
    double ll_var = 4.0;       // tank level sensor; intentionally poor
    double ffeed_var = 1e-4;
    double temp_coeff = 0.02;  // membrane temperature leakage into flow readings

    // Forcing schedule.
    int dump_period = 100;
    int dump_length = 5;
};

/// PlantConfig with any matching keys overridden from a Config.
PlantConfig plant_config_from(const Config& cfg);

/// 18 persistent variables, 6 sensors. Throws if the flow-balance fixed point
/// fails to converge at the nominal operating point.
Tbn build_plant_model(const PlantConfig& cfg = {});

/// Broad diagonal prior centered on the nominal operating point.
Gaussian plant_initial_belief(const PlantConfig& cfg = {});

/// Per-step mode signals: compressor on throughout, tank dumps of
/// dump_length steps at the end of every dump_period.
std::vector<Modes> plant_modes(int steps, const PlantConfig& cfg = {});

/// Compressor curve and membrane permeation gains recovered from a sampled
/// trajectory by least squares. Throws when the regression is rank deficient
/// (no transients to identify from).
struct FittedParams {
    double comp_a = 0.0;
    double comp_b = 0.0;
    double k_h2 = 0.0;
    double k_cox = 0.0;
};
FittedParams fit_parameters(const Trajectory& traj);

/// Six-state linear-Gaussian model with three sensors; every CPD is linear
/// or a bias, so a Kalman recursion over the same matrices is exact.
Tbn build_linear6_model();
Gaussian linear6_initial_belief();

/// Named model registry for the command-line tools.
struct ModelBundle {
    Tbn model;
    Gaussian initial;
    std::vector<Modes> modes;  // one entry per step
    PlantConfig plant;         // meaningful for the plant model only
};
ModelBundle make_model(const std::string& name, const Config& cfg, int steps);
std::vector<std::string> model_names();

}  // namespace dbnmon

#endif
