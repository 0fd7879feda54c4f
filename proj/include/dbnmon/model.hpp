#ifndef DBNMON_MODEL_HPP
#define DBNMON_MODEL_HPP

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "dbnmon/gaussian.hpp"

namespace dbnmon {

/// Known discrete inputs for one step (switch positions, event flags).
using Modes = std::map<std::string, double>;

enum class Role { State, Bias, Sensor, Transient };

enum class Slice { Prev, Cur };

/// Reference to a parent variable: either the slice-t copy of a persistent
/// variable or an earlier slice-(t+1) variable.
struct ParentRef {
    std::string name;
    Slice slice = Slice::Prev;
};

inline ParentRef prev(std::string name) { return {std::move(name), Slice::Prev}; }
inline ParentRef cur(std::string name) { return {std::move(name), Slice::Cur}; }

/// Label of a parent inside a step joint ("prev." prefix for slice t).
std::string joint_label(const ParentRef& ref);

struct Variable {
    std::string name;
    Role role = Role::State;
    std::string units;
    std::string bias_of;  // for sensors: name of the bias variable baked into
                          // the reading, if any (used for bias-subtracted predictions)
};

// ---------------------------------------------------------------------------
// CPD variants

struct LinearParams {
    std::vector<std::pair<ParentRef, double>> weights;
    double intercept = 0.0;
    double noise_var = 0.0;
};

/// Linear-Gaussian CPD, optionally with parameter sets selected by a known
/// discrete mode signal.
struct LinearGaussianCpd {
    LinearParams params;
    std::string mode_key;                  // empty: no switching
    std::map<long, LinearParams> variants;  // by rounded mode value

    const LinearParams& select(const Modes& modes) const;
};

/// Persistent sensor bias: Bias' = gamma * Bias + V.
struct BiasCpd {
    std::string prev_name;  // slice-t bias variable
    double gamma = 0.97;
    double drift_var = 0.0;
};

/// One stage of a (possibly decomposed) nonlinear CPD. Inputs are joint
/// labels ("prev.X" / "X") or names of temporaries produced by earlier
/// stages. The function receives the input values followed by
/// `noise_inputs` standard-normal draws.
struct Stage {
    std::vector<std::string> outputs;
    std::vector<std::string> inputs;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Modes&)> f;
    int noise_inputs = 0;
    Eigen::MatrixXd noise_cov;  // additive on the outputs; empty means zero
};

/// Nonlinear CPD: a single stage, or an encapsulated decomposition whose
/// intermediate outputs never enter the belief state.
struct NonlinearCpd {
    std::vector<ParentRef> parents;
    std::vector<Stage> stages;  // last stage outputs are the children
    int rule_precision = 0;     // 0: use the tracker's default
    double kappa = std::numeric_limits<double>::quiet_NaN();
};

/// Procedural CPD: the children are the converged solution of
/// z <- update(z, parents) plus additive noise.
struct FixedPointCpd {
    std::vector<ParentRef> parents;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& z, const Eigen::VectorXd& parents,
                                  const Modes&)>
        update;
    Eigen::VectorXd nominal_z;  // initial guess when no warm start is available
    double tol = 1e-8;          // max-norm on the residual
    int max_iters = 500;
    Eigen::MatrixXd noise_cov;
    int rule_precision = 0;
    double kappa = std::numeric_limits<double>::quiet_NaN();
};

using Cpd = std::variant<LinearGaussianCpd, BiasCpd, NonlinearCpd, FixedPointCpd>;

/// A CPD together with the slice-(t+1) variables it produces.
struct CpdEntry {
    std::vector<std::string> children;
    Cpd cpd;
};

/// Parents of a CPD, for any variant.
std::vector<ParentRef> cpd_parents(const Cpd& cpd);

/// Run a fixed-point CPD to convergence. Throws on non-convergence.
Eigen::VectorXd solve_fixed_point(const FixedPointCpd& fp, const Eigen::VectorXd& parents,
                                  const Modes& modes, const Eigen::VectorXd& initial);

// ---------------------------------------------------------------------------
// The 2TBN

class Tbn {
public:
    Tbn(std::vector<Variable> variables, std::vector<CpdEntry> cpds);

    const std::vector<Variable>& variables() const { return vars_; }
    const std::vector<CpdEntry>& cpds() const { return cpds_; }
    const Variable& variable(const std::string& name) const;

    /// Persistent (State + Bias) variable names in declaration order.
    const std::vector<std::string>& persistent() const { return persistent_; }
    const std::vector<std::string>& sensor_names() const { return sensor_names_; }

    /// CPD entries ordered so that every intra-slice parent precedes its
    /// child; ties broken by declaration order. Throws on a cycle, listing it.
    const std::vector<int>& topological_order() const { return topo_; }

    /// Diagnostics; empty iff the model is well formed. Construction only
    /// throws on structural problems that make the object unusable.
    std::vector<std::string> validate() const;

private:
    std::vector<Variable> vars_;
    std::vector<CpdEntry> cpds_;
    std::vector<std::string> persistent_;
    std::vector<std::string> sensor_names_;
    std::map<std::string, int> var_index_;
    std::map<std::string, int> cpd_of_child_;
    std::vector<int> topo_;

    void compute_topo();
    friend class TbnBuilder;
};

/// Incremental construction helper.
class TbnBuilder {
public:
    TbnBuilder& variable(std::string name, Role role, std::string units = "",
                         std::string bias_of = "");
    TbnBuilder& linear(const std::string& child, LinearGaussianCpd cpd);
    TbnBuilder& linear(const std::string& child,
                       std::vector<std::pair<ParentRef, double>> weights, double intercept,
                       double noise_var);
    TbnBuilder& bias(const std::string& child, double gamma, double drift_var);
    TbnBuilder& nonlinear(std::vector<std::string> children, NonlinearCpd cpd);
    TbnBuilder& fixed_point(std::vector<std::string> children, FixedPointCpd cpd);
    Tbn build();

private:
    std::vector<Variable> vars_;
    std::vector<CpdEntry> cpds_;
};

// ---------------------------------------------------------------------------
// Exact forward sampling

struct Trajectory {
    /// values[t] holds every slice-(t+1) variable for step t (1-based in
    /// time; index 0 is the first transition). Sensor entries include their
    /// sampled noise.
    std::vector<std::map<std::string, double>> values;
    /// Persistent state vectors, one per step, ordered as Tbn::persistent().
    std::vector<Eigen::VectorXd> states;
    Eigen::VectorXd initial_state;
};

/// Ancestral sampling through the 2TBN; reproducible given seed.
Trajectory forward_sample(const Tbn& m, const Gaussian& initial,
                          const std::vector<Modes>& modes, int steps, std::uint64_t seed);

/// Compiled single-step evaluator over the 2TBN: slot-indexed, with noise
/// Cholesky factors precomputed. One instance serves exact sampling (per
/// particle or trajectory) and the deterministic skeleton used by the
/// whole-state baselines.
class StepProgram {
public:
    explicit StepProgram(const Tbn& m);

    int state_dim() const { return state_dim_; }
    int sensor_dim() const { return static_cast<int>(sensor_slots_.size()); }
    /// Standard-normal inputs consumed by the non-sensor CPDs.
    int noise_dim() const { return noise_dim_; }

    /// Exact transition sample. Next persistent state into x_out (ordered as
    /// Tbn::persistent()), sensors into s_out (ordered as Tbn::sensor_names()).
    /// Sensors are noise-free means unless sensor_noise is set.
    void sample(const Eigen::VectorXd& x, const Modes& modes, std::mt19937_64& rng,
                Eigen::VectorXd& x_out, Eigen::VectorXd& s_out,
                bool sensor_noise = false) const;

    /// Deterministic transition with an explicit noise vector (size
    /// noise_dim()); sensors are evaluated noise-free.
    void eval(const Eigen::VectorXd& x, const Eigen::VectorXd& w, const Modes& modes,
              Eigen::VectorXd& x_out, Eigen::VectorXd& s_out) const;

    /// Additive noise variance of a sensor under the given modes.
    double sensor_noise_var(int sensor_index, const Modes& modes) const;

    /// Value of every slice-(t+1) variable from the last sample()/eval() call
    /// on the scratch passed in; exposed via the label list for trajectory
    /// reconstruction.
    const std::vector<std::string>& slot_labels() const { return slot_labels_; }
    /// Slots written by the most recent sample()/eval(). Not thread-safe
    /// across concurrent calls on the same instance.
    const std::vector<double>& last_slots() const { return slots_; }

    const Tbn& model() const { return model_; }

private:
    struct ResolvedLinParams {
        std::vector<std::pair<int, double>> weights;  // slot (see slot encoding), coeff
        double intercept = 0.0;
        double noise_sd = 0.0;
        double noise_var = 0.0;
    };
    struct LinOp {
        ResolvedLinParams base;
        std::string mode_key;
        std::map<long, ResolvedLinParams> variants;
        int out_slot;

        const ResolvedLinParams& select(const Modes& modes) const;
    };
    struct BiasOp {
        int parent_slot;
        double gamma, drift_sd;
        int out_slot;
    };
    struct StageOp {
        std::vector<int> input_slots;
        const Stage* stage;
        Eigen::MatrixXd chol;  // of the additive noise
        std::vector<int> out_slots;
    };
    struct FixedOp {
        std::vector<int> parent_slots;
        const FixedPointCpd* cpd;
        Eigen::MatrixXd chol;
        std::vector<int> out_slots;
        std::vector<int> warm_slots;  // prev-state slots for the warm start, or -1
    };
    struct Op {
        int kind;  // 0 linear, 1 bias, 2 stage, 3 fixed point
        bool sensor;
        size_t index;  // into the per-kind vectors
    };

    void run(const Eigen::VectorXd& x, const Modes& modes, std::mt19937_64* rng,
             const Eigen::VectorXd* w, bool sensor_noise, Eigen::VectorXd& x_out,
             Eigen::VectorXd& s_out) const;
    int slot_of(const std::string& joint_name) const;

    const Tbn& model_;
    int state_dim_ = 0;
    int noise_dim_ = 0;
    std::vector<std::string> slot_labels_;        // cur-slice slots only
    std::map<std::string, int> cur_slot_;         // name -> slot
    std::map<std::string, int> prev_index_;       // persistent name -> x index
    std::vector<int> persistent_slots_;
    std::vector<int> sensor_slots_;
    std::vector<Op> ops_;
    std::vector<LinOp> lin_ops_;
    std::vector<BiasOp> bias_ops_;
    std::vector<StageOp> stage_ops_;
    std::vector<FixedOp> fixed_ops_;
    std::vector<std::function<double(const Modes&)>> sensor_noise_var_;
    mutable std::vector<double> slots_;
};

}  // namespace dbnmon

#endif
