#ifndef DBNMON_GAUSSIAN_HPP
#define DBNMON_GAUSSIAN_HPP

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace dbnmon {

/// Jitter added to a near-singular block before inversion: 1e-9 * trace/dim.
Eigen::MatrixXd jittered(const Eigen::MatrixXd& m);

/// Symmetrize (M + M^T)/2.
Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m);

/// Immutable labeled multivariate normal. All operations return new values.
class Gaussian {
public:
    Gaussian(std::vector<std::string> labels, Eigen::VectorXd mean,
             Eigen::MatrixXd cov);

    const std::vector<std::string>& labels() const { return labels_; }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& cov() const { return cov_; }
    int dim() const { return static_cast<int>(labels_.size()); }

    bool has(const std::string& label) const;
    /// Index of a label; throws std::invalid_argument naming the label.
    int index_of(const std::string& label) const;

    double mean_of(const std::string& label) const { return mean_[index_of(label)]; }
    double var_of(const std::string& label) const {
        int i = index_of(label);
        return cov_(i, i);
    }

    /// Sub-Gaussian over `keep`, in the order given.
    Gaussian marginalize(const std::vector<std::string>& keep) const;

    /// Condition on observed values. Remaining labels keep their order.
    /// Empty map returns *this with log-likelihood 0.
    struct Conditioned;
    Conditioned condition(const std::map<std::string, double>& obs) const;

    /// Extend by a linear-Gaussian child: child = sum(w_i * parent_i) + intercept + V,
    /// V ~ N(0, noise_var).
    Gaussian extend_linear(const std::string& child,
                           const std::vector<std::pair<std::string, double>>& weights,
                           double intercept, double noise_var) const;

    /// Join a local Gaussian whose labels split into parents (already present
    /// here) and children (new). The implied conditional P(children | parents)
    /// of `local` is extracted and appended; the marginal over existing labels
    /// is unchanged.
    Gaussian append_conditional(const Gaussian& local) const;

private:
    std::vector<std::string> labels_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
    std::map<std::string, int> index_;
};

struct Gaussian::Conditioned {
    Gaussian posterior;
    double log_likelihood;  // log density of the observations under the marginal
};

}  // namespace dbnmon

#endif
