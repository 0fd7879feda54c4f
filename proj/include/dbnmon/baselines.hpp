#ifndef DBNMON_BASELINES_HPP
#define DBNMON_BASELINES_HPP

#include <map>
#include <random>
#include <string>
#include <vector>

#include "dbnmon/gaussian.hpp"
#include "dbnmon/model.hpp"

namespace dbnmon {

struct BaselineStep {
    Gaussian belief;
    double log_likelihood = 0.0;
    std::map<std::string, std::pair<double, double>> sensor_predictions;  // mean, var
    long function_evals = 0;  // transition-function evaluations this step
};

/// Full-state EKF: central-difference linearization of the whole transition
/// (noise inputs included in the augmented state) about the belief mean.
BaselineStep ekf_step(const Gaussian& belief, const StepProgram& prog, const Modes& modes,
                      const std::map<std::string, double>& evidence);

/// Monolithic Unscented Filter: one precision-3 rule at full belief
/// dimension over the whole transition; process noise folded in through a
/// finite-difference pass over the noise inputs.
struct UfStep {
    Gaussian belief;
    double log_likelihood = 0.0;
    long sigma_point_evals = 0;  // 2 d + 1, the rule point count
    long noise_evals = 0;        // extra evaluations for the noise columns
};
UfStep monolithic_uf_step(const Gaussian& belief, const StepProgram& prog, const Modes& modes,
                          const std::map<std::string, double>& evidence,
                          double kappa = std::numeric_limits<double>::quiet_NaN());

// ---------------------------------------------------------------------------
// Bootstrap particle filter

struct ParticleSet {
    Eigen::MatrixXd particles;  // N x state_dim, ordered as Tbn::persistent()
    // Pre-resampling diagnostics and estimate from the most recent step:
    Eigen::VectorXd weighted_mean;
    Eigen::MatrixXd weighted_cov;
    double max_weight = 0.0;  // max normalized weight
    double ess = 0.0;         // effective sample size 1 / sum w^2
    double log_likelihood = 0.0;  // log mean unnormalized weight

    int count() const { return static_cast<int>(particles.rows()); }
};

ParticleSet particle_filter_init(const Gaussian& initial,
                                 const std::vector<std::string>& order, int n,
                                 std::mt19937_64& rng);

/// Propagate, weight by the sensor likelihoods, record degeneracy stats,
/// then resample systematically. Deterministic given the RNG state.
ParticleSet particle_filter_step(const ParticleSet& ps, const StepProgram& prog,
                                 const Modes& modes,
                                 const std::map<std::string, double>& evidence,
                                 std::mt19937_64& rng);

}  // namespace dbnmon

#endif
