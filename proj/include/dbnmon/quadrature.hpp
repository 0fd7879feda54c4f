#ifndef DBNMON_QUADRATURE_HPP
#define DBNMON_QUADRATURE_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "dbnmon/gaussian.hpp"

namespace dbnmon {

/// Fully-symmetric Gaussian-weight cubature rule in unit (standard normal)
/// coordinates. Exact for all monomials of total degree <= precision.
struct CubatureRule {
    int dimension = 0;
    int precision = 0;
    Eigen::MatrixXd points;   // N x d
    Eigen::VectorXd weights;  // N, sums to 1

    int count() const { return static_cast<int>(weights.size()); }
};

/// Build a rule of precision 3, 5 or 7. kappa only applies to precision 3
/// (the unscented point set); NaN selects the default 3 - d.
/// Precision 5 and 7 weights are solved by moment matching on symmetric
/// orbits and validated for exactness; a residual above 1e-9 is an error.
CubatureRule build_rule(int precision, int d,
                        double kappa = std::numeric_limits<double>::quiet_NaN());

/// Map unit points into the frame of g: mu + L x_j with L the symmetric PSD
/// square root of g.cov (rotation invariant, tolerates singular covariances).
/// Returns an N x d matrix.
Eigen::MatrixXd transform_points(const CubatureRule& rule, const Gaussian& g);

/// First two joint moments of a nonlinear child given Gaussian parents.
struct LocalMoments {
    Eigen::VectorXd mean;   // E[X]
    Eigen::MatrixXd cov;    // E[XX^T] - E[X]E[X]^T + noise_cov
    Eigen::MatrixXd cross;  // Cov(X, Y): child x parent
    long evals = 0;         // function evaluations (== rule point count)
};

LocalMoments estimate_local_moments(
    const Gaussian& parents,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::MatrixXd& noise_cov, const CubatureRule& rule);

/// Worst absolute error over all Gaussian monomial moments of total degree
/// <= rule.precision. Used by the self-validation and the exactness tests.
double max_monomial_error(const CubatureRule& rule);

/// Probabilists' Gauss-Hermite nodes and weights (weight e^{-x^2/2}/sqrt(2 pi)),
/// via the Golub-Welsch eigenvalue method.
void gauss_hermite(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

}  // namespace dbnmon

#endif
