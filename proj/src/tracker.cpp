#include "dbnmon/tracker.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dbnmon/psd_repair.hpp"

namespace dbnmon {

Tracker::Tracker(const Tbn& model, RulePolicy policy) : model_(model), policy_(policy) {}

const CubatureRule& Tracker::rule_for(int precision, int d, double kappa) {
    if (precision == 3 && std::isnan(kappa)) kappa = 3.0 - d;
    std::ostringstream key;
    key << precision << '|' << d;
    if (precision == 3) key << '|' << kappa;
    auto it = rule_cache_.find(key.str());
    if (it == rule_cache_.end())
        it = rule_cache_.emplace(key.str(), build_rule(precision, d, kappa)).first;
    return it->second;
}

namespace {

Gaussian append_standard_normals(const Gaussian& g, int count) {
    if (count == 0) return g;
    const int n = g.dim();
    std::vector<std::string> labels = g.labels();
    for (int i = 0; i < count; ++i) labels.push_back("__noise" + std::to_string(i));
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n + count);
    mu.head(n) = g.mean();
    Eigen::MatrixXd sig = Eigen::MatrixXd::Identity(n + count, n + count);
    sig.topLeftCorner(n, n) = g.cov();
    return Gaussian(labels, mu, sig);
}

}  // namespace

Gaussian Tracker::append_with_repair(const Gaussian& joint,
                                     const std::vector<std::string>& parent_labels,
                                     const std::vector<std::string>& child_labels,
                                     const LocalMoments& lm, StepRecord& rec) {
    const int p = static_cast<int>(parent_labels.size());
    const int c = static_cast<int>(child_labels.size());
    Gaussian parents = joint.marginalize(parent_labels);

    // Local joint over (parents, children), children appended one at a time
    // with a feasibility check against the already-extended block.
    Eigen::VectorXd mu(p + c);
    Eigen::MatrixXd sig(p + c, p + c);
    mu.head(p) = parents.mean();
    sig.topLeftCorner(p, p) = parents.cov();

    for (int k = 0; k < c; ++k) {
        const int n = p + k;  // current block size
        Eigen::VectorXd u(n);
        u.head(p) = lm.cross.row(k).head(p);
        for (int j = 0; j < k; ++j) u[p + j] = lm.cov(k, j);
        double v = lm.cov(k, k);

        Eigen::MatrixXd syy = symmetrized(sig.topLeftCorner(n, n));
        Eigen::LLT<Eigen::MatrixXd> llt(syy);
        if (llt.info() != Eigen::Success) {
            syy = jittered(syy);
            llt.compute(syy);
            if (llt.info() != Eigen::Success)
                throw std::runtime_error("propagate_node: extended parent block of '" +
                                         child_labels[k] + "' is singular");
        }
        double eps = default_epsilon(v, syy);
        double margin = u.dot(llt.solve(u)) - v + eps;
        if (margin > 0.0) {
            RepairProblem prob{syy, u, v, eps};
            RepairResult res = repair(prob);
            u = res.u;
            v = res.v;
            ++rec.repairs;
        }
        mu[n] = lm.mean[k];
        sig.block(0, n, n, 1) = u;
        sig.block(n, 0, 1, n) = u.transpose();
        sig(n, n) = v;
    }

    std::vector<std::string> local_labels = parent_labels;
    for (const auto& ch : child_labels) local_labels.push_back(ch);
    Gaussian local(local_labels, mu, symmetrized(sig));
    return joint.append_conditional(local);
}

Gaussian Tracker::propagate_stages(const Gaussian& joint_in,
                                   const std::vector<Stage>& stages, const Modes& modes,
                                   int precision, double kappa, StepRecord& rec) {
    Gaussian joint = joint_in;
    std::vector<std::string> temps;
    for (size_t s = 0; s < stages.size(); ++s) {
        const Stage& st = stages[s];
        Gaussian marg = joint.marginalize(st.inputs);
        Gaussian aug = append_standard_normals(marg, st.noise_inputs);
        const CubatureRule& rule = rule_for(precision, aug.dim(), kappa);
        auto f = [&st, &modes](const Eigen::VectorXd& x) { return st.f(x, modes); };
        LocalMoments lm = estimate_local_moments(aug, f, st.noise_cov, rule);
        rec.function_evals += lm.evals;
        // Drop cross terms to the appended noise dimensions: that marginalizes
        // the noise out of the local joint.
        lm.cross = lm.cross.leftCols(st.inputs.size()).eval();
        joint = append_with_repair(joint, st.inputs, st.outputs, lm, rec);
        if (s + 1 < stages.size())
            for (const auto& o : st.outputs) temps.push_back(o);
    }
    if (!temps.empty()) {
        std::set<std::string> drop(temps.begin(), temps.end());
        std::vector<std::string> keep;
        for (const auto& l : joint.labels())
            if (!drop.count(l)) keep.push_back(l);
        joint = joint.marginalize(keep);
    }
    return joint;
}

Gaussian Tracker::propagate_node(const Gaussian& joint, const CpdEntry& entry,
                                 const Modes& modes, StepRecord& rec) {
    try {
        if (const auto* lin = std::get_if<LinearGaussianCpd>(&entry.cpd)) {
            const LinearParams& p = lin->select(modes);
            std::vector<std::pair<std::string, double>> w;
            for (const auto& [r, coeff] : p.weights) w.emplace_back(joint_label(r), coeff);
            return joint.extend_linear(entry.children.front(), w, p.intercept, p.noise_var);
        }
        if (const auto* b = std::get_if<BiasCpd>(&entry.cpd)) {
            return joint.extend_linear(entry.children.front(),
                                       {{"prev." + b->prev_name, b->gamma}}, 0.0,
                                       b->drift_var);
        }
        if (const auto* nl = std::get_if<NonlinearCpd>(&entry.cpd)) {
            int prec = nl->rule_precision > 0 ? nl->rule_precision : policy_.precision;
            double kappa = std::isnan(nl->kappa) ? policy_.kappa : nl->kappa;
            return propagate_stages(joint, nl->stages, modes, prec, kappa, rec);
        }
        const auto& fp = std::get<FixedPointCpd>(entry.cpd);
        int prec = fp.rule_precision > 0 ? fp.rule_precision : policy_.precision;
        double kappa = std::isnan(fp.kappa) ? policy_.kappa : fp.kappa;

        std::string key = entry.children.front();
        Eigen::VectorXd z0 = fp.nominal_z;
        auto ws = warm_starts_.find(key);
        if (ws != warm_starts_.end()) z0 = ws->second;

        Stage st;
        st.outputs = entry.children;
        for (const auto& r : fp.parents) st.inputs.push_back(joint_label(r));
        st.noise_cov = fp.noise_cov;
        st.f = [&fp, z0](const Eigen::VectorXd& pv, const Modes& m) {
            return solve_fixed_point(fp, pv, m, z0);
        };
        Gaussian out = propagate_stages(joint, {st}, modes, prec, kappa, rec);
        // warm start for the next step: the expected solution
        Eigen::VectorXd zmean(entry.children.size());
        for (size_t i = 0; i < entry.children.size(); ++i)
            zmean[i] = out.mean_of(entry.children[i]);
        warm_starts_[key] = zmean;
        return out;
    } catch (const std::exception& e) {
        throw std::runtime_error("while propagating '" + entry.children.front() +
                                 "': " + e.what());
    }
}

Tracker::StepResult Tracker::filter_step(const Gaussian& belief, const Modes& modes,
                                         const std::map<std::string, double>& evidence) {
    StepRecord rec;

    // Relabel the belief as slice t.
    std::vector<std::string> prev_labels;
    prev_labels.reserve(belief.dim());
    for (const auto& l : belief.labels()) prev_labels.push_back("prev." + l);
    Gaussian joint(prev_labels, belief.mean(), belief.cov());

    for (int idx : model_.topological_order())
        joint = propagate_node(joint, model_.cpds()[idx], modes, rec);

    // Pre-evidence sensor predictions, raw and bias-subtracted.
    for (const auto& s : model_.sensor_names()) {
        SensorPrediction pred;
        pred.mean = joint.mean_of(s);
        pred.variance = joint.var_of(s);
        pred.mean_unbiased = pred.mean;
        const auto& var = model_.variable(s);
        if (!var.bias_of.empty()) pred.mean_unbiased -= joint.mean_of(var.bias_of);
        rec.sensor_predictions[s] = pred;
    }

    // Keep slice-(t+1) persistent variables and sensors; drop slice t,
    // transients and anything else.
    std::vector<std::string> keep = model_.persistent();
    for (const auto& s : model_.sensor_names()) keep.push_back(s);
    Gaussian pred_joint = joint.marginalize(keep);

    for (const auto& [name, value] : evidence) {
        (void)value;
        if (model_.variable(name).role != Role::Sensor)
            throw std::invalid_argument("filter_step: evidence on non-sensor '" + name + "'");
    }
    auto cond = pred_joint.condition(evidence);
    rec.log_likelihood = cond.log_likelihood;

    Gaussian bel = cond.posterior.marginalize(model_.persistent());

    // Last-resort PSD fixup after conditioning.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bel.cov());
    double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < 0.0) {
        double tr = std::max(bel.cov().trace(), 0.0);
        if (min_eig < -1e-12 * std::max(tr, 1.0)) ++rec.eigenvalue_clips;
        double floor = 1e-10 * std::max(tr, 1e-300);
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
        Eigen::MatrixXd fixed =
            es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        bel = Gaussian(bel.labels(), bel.mean(), symmetrized(fixed));
    }
    return {bel, rec};
}

BeliefTrace Tracker::track_sequence(const Gaussian& initial, const std::vector<Modes>& modes,
                                    const std::vector<std::map<std::string, double>>& evidence) {
    BeliefTrace trace;
    trace.beliefs.push_back(initial.marginalize(model_.persistent()));
    const int steps = static_cast<int>(evidence.size());
    if (static_cast<int>(modes.size()) < steps)
        throw std::invalid_argument("track_sequence: not enough mode entries for all steps");
    for (int t = 0; t < steps; ++t) {
        try {
            auto res = filter_step(trace.beliefs.back(), modes[t], evidence[t]);
            trace.beliefs.push_back(std::move(res.belief));
            trace.steps.push_back(std::move(res.record));
        } catch (const std::exception& e) {
            trace.error = e.what();
            trace.failed_step = t;
            break;
        }
    }
    return trace;
}

}  // namespace dbnmon
