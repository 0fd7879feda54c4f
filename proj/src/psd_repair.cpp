#include "dbnmon/psd_repair.hpp"

#include <cmath>
#include <stdexcept>

namespace dbnmon {

double default_epsilon(double v_bar, const Eigen::MatrixXd& sigma_yy) {
    const int d = static_cast<int>(sigma_yy.rows());
    double scale = std::max(v_bar, d > 0 ? sigma_yy.trace() / d : 0.0);
    return std::max(1e-8 * scale, 1e-12);
}

double constraint_value(const RepairProblem& p, const Eigen::VectorXd& u, double v) {
    Eigen::LLT<Eigen::MatrixXd> llt(p.sigma_yy);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("psd_repair: sigma_yy is not positive definite");
    return u.dot(llt.solve(u)) - v + p.epsilon;
}

RepairResult repair(const RepairProblem& p) {
    if (p.epsilon <= 0.0)
        throw std::invalid_argument("psd_repair: epsilon must be positive");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.sigma_yy);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw std::invalid_argument("psd_repair: sigma_yy is not positive definite");
    const Eigen::VectorXd sig = es.eigenvalues();
    const Eigen::VectorXd c = es.eigenvectors().transpose() * p.u_bar;  // rotated u_bar

    // Stationarity: u(lambda) = (I + lambda Sigma^-1)^-1 u_bar,
    // v(lambda) = v_bar + lambda/2. In the eigenbasis,
    // u_i = c_i sigma_i / (sigma_i + lambda) and
    // u^T Sigma^-1 u = sum c_i^2 sigma_i / (sigma_i + lambda)^2.
    auto g = [&](double lambda) {
        double q = 0.0;
        for (int i = 0; i < sig.size(); ++i) {
            double r = sig[i] / (sig[i] + lambda);
            q += c[i] * c[i] * r * r / sig[i];
        }
        return q - (p.v_bar + 0.5 * lambda) + p.epsilon;
    };

    if (g(0.0) <= 0.0) return {p.u_bar, p.v_bar, 0.0};  // already feasible

    // g is strictly decreasing; double the bracket until it goes negative.
    double lo = 0.0, hi = 1.0;
    int guard = 0;
    while (g(hi) > 0.0) {
        hi *= 2.0;
        if (++guard > 200)
            throw std::runtime_error("psd_repair: failed to bracket the dual root");
    }
    while (hi - lo > 1e-12 * std::max(1.0, hi)) {
        double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
    }
    double lambda = 0.5 * (lo + hi);

    Eigen::VectorXd uc(c.size());
    for (int i = 0; i < c.size(); ++i) uc[i] = c[i] * sig[i] / (sig[i] + lambda);
    RepairResult r;
    r.u = es.eigenvectors() * uc;
    r.v = p.v_bar + 0.5 * lambda;
    r.lambda = lambda;
    return r;
}

}  // namespace dbnmon
