#ifndef DBNMON_PSD_REPAIR_HPP
#define DBNMON_PSD_REPAIR_HPP

#include <Eigen/Dense>

namespace dbnmon {

/// Projection of an estimated covariance extension (u, v) for a new scalar
/// child onto the set where the extended matrix stays positive definite:
/// minimize ||u - u_bar||^2 + (v - v_bar)^2 subject to
/// u^T Sigma_YY^-1 u - v + epsilon <= 0.
struct RepairProblem {
    Eigen::MatrixXd sigma_yy;  // parent covariance, positive definite
    Eigen::VectorXd u_bar;     // estimated Cov(Y, X)
    double v_bar = 0.0;        // estimated Var(X)
    double epsilon = 0.0;      // > 0; see default_epsilon
};

struct RepairResult {
    Eigen::VectorXd u;
    double v = 0.0;
    double lambda = 0.0;  // 0 when the input was already feasible
};

double default_epsilon(double v_bar, const Eigen::MatrixXd& sigma_yy);

/// Feasibility margin u^T Sigma^-1 u - v + epsilon (<= 0 means feasible).
double constraint_value(const RepairProblem& p, const Eigen::VectorXd& u, double v);

RepairResult repair(const RepairProblem& p);

}  // namespace dbnmon

#endif
