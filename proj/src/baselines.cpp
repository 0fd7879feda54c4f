#include "dbnmon/baselines.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dbnmon/quadrature.hpp"

namespace dbnmon {

namespace {

// Labels and joint assembly shared by EKF and UF: joint over persistent'
// then sensors, with additive sensor noise on the diagonal.
std::vector<std::string> output_labels(const StepProgram& prog) {
    std::vector<std::string> labels = prog.model().persistent();
    for (const auto& s : prog.model().sensor_names()) labels.push_back(s);
    return labels;
}

Eigen::MatrixXd add_sensor_noise(Eigen::MatrixXd cov, const StepProgram& prog,
                                 const Modes& modes) {
    const int dx = prog.state_dim();
    for (int i = 0; i < prog.sensor_dim(); ++i)
        cov(dx + i, dx + i) += prog.sensor_noise_var(i, modes);
    return cov;
}

BaselineStep condition_joint(const Gaussian& joint, const StepProgram& prog,
                             const std::map<std::string, double>& evidence,
                             long evals) {
    BaselineStep out{joint, 0.0, {}, evals};
    for (const auto& s : prog.model().sensor_names())
        out.sensor_predictions[s] = {joint.mean_of(s), joint.var_of(s)};
    auto cond = joint.condition(evidence);
    out.log_likelihood = cond.log_likelihood;
    out.belief = cond.posterior.marginalize(prog.model().persistent());
    return out;
}

Eigen::VectorXd reorder_to_persistent(const Gaussian& belief, const StepProgram& prog) {
    const auto& names = prog.model().persistent();
    Eigen::VectorXd x(names.size());
    for (size_t i = 0; i < names.size(); ++i) x[i] = belief.mean_of(names[i]);
    return x;
}

}  // namespace

BaselineStep ekf_step(const Gaussian& belief, const StepProgram& prog, const Modes& modes,
                      const std::map<std::string, double>& evidence) {
    const int dx = prog.state_dim();
    const int dw = prog.noise_dim();
    const int m = dx + prog.sensor_dim();

    Gaussian bel = belief.marginalize(prog.model().persistent());
    const Eigen::VectorXd mu = bel.mean();
    const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(dw);

    Eigen::VectorXd x_out, s_out;
    long evals = 0;
    auto eval = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
        prog.eval(x, w, modes, x_out, s_out);
        ++evals;
        Eigen::VectorXd y(m);
        y.head(dx) = x_out;
        y.tail(m - dx) = s_out;
        if (!y.allFinite())
            throw std::runtime_error("ekf_step: non-finite transition output");
        return y;
    };

    Eigen::VectorXd y0 = eval(mu, w0);

    Eigen::MatrixXd jx(m, dx), jw(m, dw);
    for (int i = 0; i < dx; ++i) {
        double h = std::max(1e-5, 1e-5 * std::abs(mu[i]));
        Eigen::VectorXd xp = mu, xm = mu;
        xp[i] += h;
        xm[i] -= h;
        jx.col(i) = (eval(xp, w0) - eval(xm, w0)) / (2.0 * h);
    }
    for (int i = 0; i < dw; ++i) {
        const double h = 1e-5;
        Eigen::VectorXd wp = w0, wm = w0;
        wp[i] += h;
        wm[i] -= h;
        jw.col(i) = (eval(mu, wp) - eval(mu, wm)) / (2.0 * h);
    }
    if (!jx.allFinite() || !jw.allFinite())
        throw std::runtime_error("ekf_step: non-finite Jacobian entries");

    Eigen::MatrixXd cov = jx * bel.cov() * jx.transpose() + jw * jw.transpose();
    cov = add_sensor_noise(symmetrized(cov), prog, modes);
    Gaussian joint(output_labels(prog), y0, cov);
    return condition_joint(joint, prog, evidence, evals);
}

UfStep monolithic_uf_step(const Gaussian& belief, const StepProgram& prog, const Modes& modes,
                          const std::map<std::string, double>& evidence, double kappa) {
    const int dx = prog.state_dim();
    const int dw = prog.noise_dim();
    const int m = dx + prog.sensor_dim();

    Gaussian bel = belief.marginalize(prog.model().persistent());
    CubatureRule rule = build_rule(3, dx, kappa);
    Eigen::MatrixXd pts = transform_points(rule, bel);
    const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(dw);

    Eigen::VectorXd x_out, s_out;
    auto eval = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
        prog.eval(x, w, modes, x_out, s_out);
        Eigen::VectorXd y(m);
        y.head(dx) = x_out;
        y.tail(m - dx) = s_out;
        if (!y.allFinite())
            throw std::runtime_error("monolithic_uf_step: non-finite transition output");
        return y;
    };

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd eyy = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < rule.count(); ++j) {
        Eigen::VectorXd y = eval(pts.row(j).transpose(), w0);
        mean += rule.weights[j] * y;
        eyy += rule.weights[j] * y * y.transpose();
    }
    Eigen::MatrixXd cov = eyy - mean * mean.transpose();

    // Process noise enters linearly in most nodes; fold it in through a
    // central-difference pass over the noise inputs at the belief mean.
    Eigen::MatrixXd jw(m, dw);
    long noise_evals = 0;
    for (int i = 0; i < dw; ++i) {
        const double h = 1e-5;
        Eigen::VectorXd wp = w0, wm = w0;
        wp[i] += h;
        wm[i] -= h;
        jw.col(i) = (eval(bel.mean(), wp) - eval(bel.mean(), wm)) / (2.0 * h);
        noise_evals += 2;
    }
    cov += jw * jw.transpose();
    cov = add_sensor_noise(symmetrized(cov), prog, modes);

    Gaussian joint(output_labels(prog), mean, cov);
    BaselineStep bs = condition_joint(joint, prog, evidence, rule.count() + noise_evals);
    return {bs.belief, bs.log_likelihood, rule.count(), noise_evals};
}

// ---------------------------------------------------------------------------

ParticleSet particle_filter_init(const Gaussian& initial,
                                 const std::vector<std::string>& order, int n,
                                 std::mt19937_64& rng) {
    Gaussian g = initial.marginalize(order);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.cov());
    Eigen::MatrixXd L =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    std::normal_distribution<double> stdnorm(0.0, 1.0);

    ParticleSet ps;
    ps.particles.resize(n, g.dim());
    Eigen::VectorXd z(g.dim());
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < g.dim(); ++k) z[k] = stdnorm(rng);
        ps.particles.row(i) = (g.mean() + L * z).transpose();
    }
    ps.weighted_mean = g.mean();
    ps.weighted_cov = g.cov();
    ps.max_weight = 1.0 / n;
    ps.ess = n;
    return ps;
}

ParticleSet particle_filter_step(const ParticleSet& ps, const StepProgram& prog,
                                 const Modes& modes,
                                 const std::map<std::string, double>& evidence,
                                 std::mt19937_64& rng) {
    const int n = ps.count();
    const int dx = prog.state_dim();
    const auto& sensor_names = prog.model().sensor_names();

    std::vector<int> obs_idx;
    std::vector<double> obs_val, obs_var;
    for (size_t i = 0; i < sensor_names.size(); ++i) {
        auto it = evidence.find(sensor_names[i]);
        if (it == evidence.end()) continue;
        obs_idx.push_back(static_cast<int>(i));
        obs_val.push_back(it->second);
        double var = prog.sensor_noise_var(static_cast<int>(i), modes);
        if (var <= 0.0)
            throw std::invalid_argument("particle_filter_step: sensor '" + sensor_names[i] +
                                        "' has no noise; its likelihood is degenerate");
        obs_var.push_back(var);
    }

    Eigen::MatrixXd prop(n, dx);
    Eigen::VectorXd logw(n);
    Eigen::VectorXd x_out, s_out;
    for (int i = 0; i < n; ++i) {
        prog.sample(ps.particles.row(i).transpose(), modes, rng, x_out, s_out);
        prop.row(i) = x_out.transpose();
        double lw = 0.0;
        for (size_t k = 0; k < obs_idx.size(); ++k) {
            double r = obs_val[k] - s_out[obs_idx[k]];
            lw += -0.5 * (std::log(2.0 * std::numbers::pi * obs_var[k]) +
                          r * r / obs_var[k]);
        }
        logw[i] = lw;
    }

    // Normalize in log space via max shift.
    double shift = logw.maxCoeff();
    if (!std::isfinite(shift))
        throw std::runtime_error(
            "particle_filter_step: all weights underflowed; evidence is inconsistent "
            "with every particle");
    Eigen::VectorXd wts = (logw.array() - shift).exp();
    // Flush negligible weights to exact zero: they change nothing within
    // double precision, and subnormal weights make the moment products
    // pathologically slow.
    wts = (wts.array() < 1e-20).select(0.0, wts);
    double total = wts.sum();
    wts /= total;

    ParticleSet out;
    out.max_weight = wts.maxCoeff();
    out.ess = 1.0 / wts.squaredNorm();
    out.log_likelihood = shift + std::log(total / n);
    out.weighted_mean = prop.transpose() * wts;
    Eigen::MatrixXd centered = prop.rowwise() - out.weighted_mean.transpose();
    // Materialize the weighted copy so the product runs as a plain GEMM; the
    // diagonal-in-the-middle expression falls off Eigen's fast path.
    Eigen::MatrixXd scaled = centered.array().colwise() * wts.array();
    out.weighted_cov = symmetrized(centered.transpose() * scaled);

    // Systematic resampling.
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u0 = unif(rng) / n;
    out.particles.resize(n, dx);
    double cum = wts[0];
    int j = 0;
    for (int i = 0; i < n; ++i) {
        double u = u0 + static_cast<double>(i) / n;
        while (u > cum && j + 1 < n) cum += wts[++j];
        out.particles.row(i) = prop.row(j);
    }
    return out;
}

}  // namespace dbnmon
