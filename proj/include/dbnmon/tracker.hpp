#ifndef DBNMON_TRACKER_HPP
#define DBNMON_TRACKER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dbnmon/gaussian.hpp"
#include "dbnmon/model.hpp"
#include "dbnmon/quadrature.hpp"

namespace dbnmon {

/// Cubature rule selection for the structured filter. Per-CPD overrides on
/// the CPD itself take priority over the global default.
struct RulePolicy {
    int precision = 3;
    double kappa = std::numeric_limits<double>::quiet_NaN();  // NaN: 3 - d
};

struct SensorPrediction {
    double mean = 0.0;       // raw predicted sensor mean (bias included)
    double variance = 0.0;
    double mean_unbiased = 0.0;  // mean minus the filtered bias mean, when a
                                 // bias variable is attached; else == mean
};

struct StepRecord {
    std::map<std::string, SensorPrediction> sensor_predictions;
    double log_likelihood = 0.0;
    long function_evals = 0;
    int repairs = 0;
    int eigenvalue_clips = 0;
};

struct BeliefTrace {
    std::vector<Gaussian> beliefs;  // beliefs[0] is the initial belief
    std::vector<StepRecord> steps;
    /// Set when tracking aborted early; the trace up to the failure is kept.
    std::optional<std::string> error;
    std::optional<int> failed_step;
};

/// Mutable per-run state for the structured filter (fixed-point warm starts,
/// rule cache, counters).
class Tracker {
public:
    Tracker(const Tbn& model, RulePolicy policy);

    /// Extend `joint` by the children of one CPD entry. Exposed for tests.
    Gaussian propagate_node(const Gaussian& joint, const CpdEntry& entry,
                            const Modes& modes, StepRecord& rec);

    struct StepResult {
        Gaussian belief;
        StepRecord record;
    };

    /// One tracking step: propagate node by node, record pre-evidence sensor
    /// predictions, marginalize out slice t and transients, condition on the
    /// given (possibly partial) sensor evidence.
    StepResult filter_step(const Gaussian& belief, const Modes& modes,
                           const std::map<std::string, double>& evidence);

    BeliefTrace track_sequence(const Gaussian& initial, const std::vector<Modes>& modes,
                               const std::vector<std::map<std::string, double>>& evidence);

    const CubatureRule& rule_for(int precision, int d, double kappa);

private:
    const Tbn& model_;
    RulePolicy policy_;
    std::map<std::string, Eigen::VectorXd> warm_starts_;  // per fixed-point entry
    std::map<std::string, CubatureRule> rule_cache_;

    Gaussian propagate_stages(const Gaussian& joint, const std::vector<Stage>& stages,
                              const Modes& modes, int precision, double kappa,
                              StepRecord& rec);
    Gaussian append_with_repair(const Gaussian& joint,
                                const std::vector<std::string>& parent_labels,
                                const std::vector<std::string>& child_labels,
                                const LocalMoments& lm, StepRecord& rec);
};

}  // namespace dbnmon

#endif
