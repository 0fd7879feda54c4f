#include "dbnmon/model.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dbnmon {

std::string joint_label(const ParentRef& ref) {
    return ref.slice == Slice::Prev ? "prev." + ref.name : ref.name;
}

const LinearParams& LinearGaussianCpd::select(const Modes& modes) const {
    if (mode_key.empty()) return params;
    auto it = modes.find(mode_key);
    if (it == modes.end()) return params;
    auto vit = variants.find(std::lround(it->second));
    return vit == variants.end() ? params : vit->second;
}

std::vector<ParentRef> cpd_parents(const Cpd& cpd) {
    std::vector<ParentRef> out;
    auto add = [&out](const ParentRef& r) {
        for (const auto& e : out)
            if (e.name == r.name && e.slice == r.slice) return;
        out.push_back(r);
    };
    if (const auto* lin = std::get_if<LinearGaussianCpd>(&cpd)) {
        for (const auto& [r, w] : lin->params.weights) add(r);
        for (const auto& [mode, v] : lin->variants)
            for (const auto& [r, w] : v.weights) add(r);
    } else if (const auto* b = std::get_if<BiasCpd>(&cpd)) {
        add(prev(b->prev_name));
    } else if (const auto* nl = std::get_if<NonlinearCpd>(&cpd)) {
        for (const auto& r : nl->parents) add(r);
    } else if (const auto* fp = std::get_if<FixedPointCpd>(&cpd)) {
        for (const auto& r : fp->parents) add(r);
    }
    return out;
}

Eigen::VectorXd solve_fixed_point(const FixedPointCpd& fp, const Eigen::VectorXd& parents,
                                  const Modes& modes, const Eigen::VectorXd& initial) {
    // Semi-smooth Newton on g(z) = update(z) - z with a plain-iteration
    // fallback. The balance updates are affine within regions (kinks from
    // max terms), so one factorization usually lands on the solution; plain
    // iteration alone contracts too slowly for the per-particle workload.
    // max_iters is a budget on update evaluations.
    Eigen::VectorXd z = initial;
    Eigen::VectorXd gz = fp.update(z, parents, modes) - z;
    double resid = gz.allFinite() ? gz.cwiseAbs().maxCoeff()
                                  : std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(z.size());
    Eigen::MatrixXd jac(n, n);
    Eigen::VectorXd zp, gn;
    int budget = fp.max_iters - 1;
    while (true) {
        if (resid <= fp.tol) return z;
        if (budget <= 0) break;
        if (std::isfinite(resid) && budget >= n + 1) {
            const double h = 1e-7 * std::max(1.0, z.cwiseAbs().maxCoeff());
            for (int i = 0; i < n; ++i) {
                zp = z;
                zp[i] += h;
                jac.col(i) = (fp.update(zp, parents, modes) - zp - gz) / h;
            }
            budget -= n;
            Eigen::VectorXd dz = Eigen::PartialPivLU<Eigen::MatrixXd>(jac).solve(-gz);
            if (dz.allFinite()) {
                zp = z + dz;
                gn = fp.update(zp, parents, modes) - zp;
                --budget;
                double rn = gn.allFinite() ? gn.cwiseAbs().maxCoeff()
                                           : std::numeric_limits<double>::infinity();
                if (rn < resid) {
                    z.swap(zp);
                    gz.swap(gn);
                    resid = rn;
                    continue;
                }
            }
        }
        if (!std::isfinite(resid)) break;
        z += gz;
        gz = fp.update(z, parents, modes) - z;
        --budget;
        resid = gz.allFinite() ? gz.cwiseAbs().maxCoeff()
                               : std::numeric_limits<double>::infinity();
    }
    throw std::runtime_error("fixed-point CPD failed to converge within " +
                             std::to_string(fp.max_iters) + " update evaluations");
}

// ---------------------------------------------------------------------------

Tbn::Tbn(std::vector<Variable> variables, std::vector<CpdEntry> cpds)
    : vars_(std::move(variables)), cpds_(std::move(cpds)) {
    for (int i = 0; i < static_cast<int>(vars_.size()); ++i) {
        auto [it, inserted] = var_index_.emplace(vars_[i].name, i);
        if (!inserted)
            throw std::invalid_argument("Tbn: duplicate variable '" + vars_[i].name + "'");
        if (vars_[i].role == Role::State || vars_[i].role == Role::Bias)
            persistent_.push_back(vars_[i].name);
        if (vars_[i].role == Role::Sensor) sensor_names_.push_back(vars_[i].name);
    }
    for (int i = 0; i < static_cast<int>(cpds_.size()); ++i)
        for (const auto& ch : cpds_[i].children) {
            auto [it, inserted] = cpd_of_child_.emplace(ch, i);
            if (!inserted)
                throw std::invalid_argument("Tbn: variable '" + ch + "' has two CPDs");
        }
    compute_topo();
}

const Variable& Tbn::variable(const std::string& name) const {
    auto it = var_index_.find(name);
    if (it == var_index_.end())
        throw std::invalid_argument("Tbn: unknown variable '" + name + "'");
    return vars_[it->second];
}

void Tbn::compute_topo() {
    const int n = static_cast<int>(cpds_.size());
    std::vector<std::set<int>> deps(n);  // entry -> entries it waits for
    for (int i = 0; i < n; ++i)
        for (const auto& r : cpd_parents(cpds_[i].cpd))
            if (r.slice == Slice::Cur) {
                auto it = cpd_of_child_.find(r.name);
                if (it != cpd_of_child_.end() && it->second != i) deps[i].insert(it->second);
            }

    std::vector<bool> placed(n, false);
    topo_.clear();
    for (int round = 0; round < n; ++round) {
        int pick = -1;
        for (int i = 0; i < n; ++i) {
            if (placed[i]) continue;
            bool ready = true;
            for (int d : deps[i])
                if (!placed[d]) { ready = false; break; }
            if (ready) { pick = i; break; }  // declaration order tie-break
        }
        if (pick < 0) {
            // report one cycle among the unplaced entries
            std::ostringstream os;
            os << "Tbn: cyclic intra-slice dependencies among {";
            bool first = true;
            for (int i = 0; i < n; ++i)
                if (!placed[i]) {
                    for (const auto& ch : cpds_[i].children) {
                        os << (first ? "" : ", ") << ch;
                        first = false;
                    }
                }
            os << "}";
            throw std::invalid_argument(os.str());
        }
        placed[pick] = true;
        topo_.push_back(pick);
    }
}

std::vector<std::string> Tbn::validate() const {
    std::vector<std::string> diags;
    std::set<std::string> persistent_set(persistent_.begin(), persistent_.end());

    for (const auto& v : vars_) {
        if (!cpd_of_child_.count(v.name))
            diags.push_back("variable '" + v.name + "' has no CPD");
        if (!v.bias_of.empty()) {
            if (v.role != Role::Sensor)
                diags.push_back("variable '" + v.name + "' sets bias_of but is not a sensor");
            else if (!var_index_.count(v.bias_of) ||
                     variable(v.bias_of).role != Role::Bias)
                diags.push_back("sensor '" + v.name + "' references unknown bias '" +
                                v.bias_of + "'");
        }
    }

    for (const auto& entry : cpds_) {
        std::string who = entry.children.empty() ? "<empty>" : entry.children.front();
        if (entry.children.empty())
            diags.push_back("a CPD has no children");
        bool any_sensor = false, any_other = false;
        for (const auto& ch : entry.children) {
            if (!var_index_.count(ch)) {
                diags.push_back("CPD child '" + ch + "' is not a declared variable");
                continue;
            }
            (variable(ch).role == Role::Sensor ? any_sensor : any_other) = true;
        }
        if (any_sensor && any_other)
            diags.push_back("CPD of '" + who + "' mixes sensor and non-sensor children");

        for (const auto& r : cpd_parents(entry.cpd)) {
            if (!var_index_.count(r.name)) {
                diags.push_back("CPD of '" + who + "' references unknown parent '" + r.name +
                                "'");
                continue;
            }
            if (r.slice == Slice::Prev && !persistent_set.count(r.name))
                diags.push_back("CPD of '" + who + "' uses non-persistent '" + r.name +
                                "' as a slice-t parent");
        }

        if (const auto* lin = std::get_if<LinearGaussianCpd>(&entry.cpd)) {
            if (lin->params.noise_var < 0)
                diags.push_back("CPD of '" + who + "' has negative noise variance");
        } else if (const auto* b = std::get_if<BiasCpd>(&entry.cpd)) {
            if (b->gamma <= 0.0 || b->gamma > 1.0)
                diags.push_back("bias CPD of '" + who + "' has gamma outside (0, 1]");
            if (b->drift_var < 0)
                diags.push_back("bias CPD of '" + who + "' has negative drift variance");
        } else if (const auto* nl = std::get_if<NonlinearCpd>(&entry.cpd)) {
            if (nl->stages.empty()) {
                diags.push_back("nonlinear CPD of '" + who + "' has no stages");
            } else {
                std::set<std::string> known;
                for (const auto& r : nl->parents) known.insert(joint_label(r));
                for (const auto& st : nl->stages) {
                    for (const auto& in : st.inputs)
                        if (!known.count(in))
                            diags.push_back("nonlinear CPD of '" + who +
                                            "': stage input '" + in +
                                            "' is neither a parent nor an earlier temp");
                    for (const auto& o : st.outputs) known.insert(o);
                }
                if (nl->stages.back().outputs != entry.children)
                    diags.push_back("nonlinear CPD of '" + who +
                                    "': final stage outputs do not match the children");
            }
        } else if (const auto* fp = std::get_if<FixedPointCpd>(&entry.cpd)) {
            if (fp->nominal_z.size() != static_cast<int>(entry.children.size()))
                diags.push_back("fixed-point CPD of '" + who +
                                "': nominal_z dimension does not match children");
            if (fp->tol <= 0 || fp->max_iters <= 0)
                diags.push_back("fixed-point CPD of '" + who + "': bad tolerance settings");
        }
    }
    return diags;
}

// ---------------------------------------------------------------------------
// Builder

TbnBuilder& TbnBuilder::variable(std::string name, Role role, std::string units,
                                 std::string bias_of) {
    vars_.push_back({std::move(name), role, std::move(units), std::move(bias_of)});
    return *this;
}

TbnBuilder& TbnBuilder::linear(const std::string& child, LinearGaussianCpd cpd) {
    cpds_.push_back({{child}, std::move(cpd)});
    return *this;
}

TbnBuilder& TbnBuilder::linear(const std::string& child,
                               std::vector<std::pair<ParentRef, double>> weights,
                               double intercept, double noise_var) {
    LinearGaussianCpd cpd;
    cpd.params = {std::move(weights), intercept, noise_var};
    return linear(child, std::move(cpd));
}

TbnBuilder& TbnBuilder::bias(const std::string& child, double gamma, double drift_var) {
    cpds_.push_back({{child}, BiasCpd{child, gamma, drift_var}});
    return *this;
}

TbnBuilder& TbnBuilder::nonlinear(std::vector<std::string> children, NonlinearCpd cpd) {
    cpds_.push_back({std::move(children), std::move(cpd)});
    return *this;
}

TbnBuilder& TbnBuilder::fixed_point(std::vector<std::string> children, FixedPointCpd cpd) {
    cpds_.push_back({std::move(children), std::move(cpd)});
    return *this;
}

Tbn TbnBuilder::build() { return Tbn(std::move(vars_), std::move(cpds_)); }

// ---------------------------------------------------------------------------
// StepProgram

namespace {

Eigen::MatrixXd noise_chol(const Eigen::MatrixXd& cov, int dim) {
    if (cov.size() == 0) return Eigen::MatrixXd::Zero(dim, dim);
    if (cov.rows() != dim || cov.cols() != dim)
        throw std::invalid_argument("additive noise covariance has the wrong shape");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    // PSD-but-singular additive noise: fall back to an eigendecomposition.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

}  // namespace

const StepProgram::ResolvedLinParams& StepProgram::LinOp::select(const Modes& modes) const {
    if (mode_key.empty()) return base;
    auto it = modes.find(mode_key);
    if (it == modes.end()) return base;
    auto vit = variants.find(std::lround(it->second));
    return vit == variants.end() ? base : vit->second;
}

int StepProgram::slot_of(const std::string& joint_name) const {
    if (joint_name.rfind("prev.", 0) == 0) {
        auto it = prev_index_.find(joint_name.substr(5));
        if (it == prev_index_.end())
            throw std::runtime_error("StepProgram: unknown previous-slice value '" +
                                     joint_name + "'");
        return -it->second - 1;
    }
    auto it = cur_slot_.find(joint_name);
    if (it == cur_slot_.end())
        throw std::runtime_error("StepProgram: value '" + joint_name +
                                 "' not computed before use");
    return it->second;
}

StepProgram::StepProgram(const Tbn& m) : model_(m) {
    const auto& persistent = m.persistent();
    state_dim_ = static_cast<int>(persistent.size());
    for (int i = 0; i < state_dim_; ++i) prev_index_[persistent[i]] = i;

    auto new_slot = [this](const std::string& name) {
        int s = static_cast<int>(slot_labels_.size());
        slot_labels_.push_back(name);
        cur_slot_[name] = s;
        return s;
    };

    std::map<std::string, std::function<double(const Modes&)>> noise_var_of;

    auto resolve_lin = [this](const LinearParams& p) {
        ResolvedLinParams r;
        for (const auto& [ref, w] : p.weights) r.weights.emplace_back(slot_of(joint_label(ref)), w);
        r.intercept = p.intercept;
        r.noise_var = p.noise_var;
        r.noise_sd = std::sqrt(p.noise_var);
        return r;
    };

    for (int idx : m.topological_order()) {
        const CpdEntry& entry = m.cpds()[idx];
        bool is_sensor = m.variable(entry.children.front()).role == Role::Sensor;

        if (const auto* lin = std::get_if<LinearGaussianCpd>(&entry.cpd)) {
            LinOp op;
            op.base = resolve_lin(lin->params);
            op.mode_key = lin->mode_key;
            for (const auto& [mode, v] : lin->variants) op.variants[mode] = resolve_lin(v);
            op.out_slot = new_slot(entry.children.front());
            if (!is_sensor) ++noise_dim_;
            ops_.push_back({0, is_sensor, lin_ops_.size()});
            lin_ops_.push_back(std::move(op));
            if (is_sensor) {
                const LinearGaussianCpd* c = lin;
                noise_var_of[entry.children.front()] =
                    [c](const Modes& modes) { return c->select(modes).noise_var; };
            }
        } else if (const auto* b = std::get_if<BiasCpd>(&entry.cpd)) {
            BiasOp op;
            op.parent_slot = slot_of("prev." + b->prev_name);
            op.gamma = b->gamma;
            op.drift_sd = std::sqrt(b->drift_var);
            op.out_slot = new_slot(entry.children.front());
            ++noise_dim_;
            ops_.push_back({1, false, bias_ops_.size()});
            bias_ops_.push_back(op);
        } else if (const auto* nl = std::get_if<NonlinearCpd>(&entry.cpd)) {
            for (size_t s = 0; s < nl->stages.size(); ++s) {
                const Stage& st = nl->stages[s];
                StageOp op;
                op.stage = &st;
                for (const auto& in : st.inputs) op.input_slots.push_back(slot_of(in));
                op.chol = noise_chol(st.noise_cov, static_cast<int>(st.outputs.size()));
                for (const auto& o : st.outputs) op.out_slots.push_back(new_slot(o));
                if (!is_sensor)
                    noise_dim_ += st.noise_inputs + static_cast<int>(st.outputs.size());
                else if (st.noise_inputs > 0)
                    throw std::invalid_argument(
                        "StepProgram: sensor CPDs must use additive noise only");
                ops_.push_back({2, is_sensor, stage_ops_.size()});
                stage_ops_.push_back(std::move(op));
            }
            if (is_sensor) {
                const Stage& last = nl->stages.back();
                for (size_t k = 0; k < entry.children.size(); ++k) {
                    double var = last.noise_cov.size() > 0 ? last.noise_cov(k, k) : 0.0;
                    noise_var_of[entry.children[k]] = [var](const Modes&) { return var; };
                }
            }
        } else if (const auto* fp = std::get_if<FixedPointCpd>(&entry.cpd)) {
            FixedOp op;
            op.cpd = fp;
            for (const auto& r : fp->parents) op.parent_slots.push_back(slot_of(joint_label(r)));
            op.chol = noise_chol(fp->noise_cov, static_cast<int>(entry.children.size()));
            for (const auto& ch : entry.children) {
                op.out_slots.push_back(new_slot(ch));
                auto pit = prev_index_.find(ch);
                op.warm_slots.push_back(pit == prev_index_.end() ? -1 : pit->second);
            }
            if (is_sensor)
                throw std::invalid_argument("StepProgram: fixed-point sensors unsupported");
            noise_dim_ += static_cast<int>(entry.children.size());
            ops_.push_back({3, false, fixed_ops_.size()});
            fixed_ops_.push_back(std::move(op));
        }
    }

    for (const auto& name : persistent) persistent_slots_.push_back(cur_slot_.at(name));
    for (const auto& name : m.sensor_names()) {
        sensor_slots_.push_back(cur_slot_.at(name));
        sensor_noise_var_.push_back(noise_var_of.at(name));
    }
    slots_.resize(slot_labels_.size());
}

void StepProgram::run(const Eigen::VectorXd& x, const Modes& modes, std::mt19937_64* rng,
                      const Eigen::VectorXd* w, bool sensor_noise, Eigen::VectorXd& x_out,
                      Eigen::VectorXd& s_out) const {
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    int cursor = 0;
    auto draw = [&](bool for_sensor) -> double {
        if (for_sensor && !sensor_noise) return 0.0;
        if (rng) return stdnorm(*rng);
        if (for_sensor) return 0.0;  // deterministic path: sensors noise-free
        return (*w)[cursor++];
    };
    auto value = [&](int slot) { return slot >= 0 ? slots_[slot] : x[-slot - 1]; };

    for (const Op& o : ops_) {
        switch (o.kind) {
            case 0: {
                const LinOp& op = lin_ops_[o.index];
                const ResolvedLinParams& p = op.select(modes);
                double v = p.intercept;
                for (const auto& [slot, coeff] : p.weights) v += coeff * value(slot);
                if (p.noise_sd > 0.0 || (!o.sensor && !rng))
                    v += p.noise_sd * draw(o.sensor);
                slots_[op.out_slot] = v;
                break;
            }
            case 1: {
                const BiasOp& op = bias_ops_[o.index];
                slots_[op.out_slot] =
                    op.gamma * value(op.parent_slot) + op.drift_sd * draw(false);
                break;
            }
            case 2: {
                const StageOp& op = stage_ops_[o.index];
                const Stage& st = *op.stage;
                Eigen::VectorXd in(st.inputs.size() + st.noise_inputs);
                for (size_t i = 0; i < op.input_slots.size(); ++i)
                    in[i] = value(op.input_slots[i]);
                for (int i = 0; i < st.noise_inputs; ++i)
                    in[st.inputs.size() + i] = draw(false);
                Eigen::VectorXd v = st.f(in, modes);
                const int k = static_cast<int>(op.out_slots.size());
                if (st.noise_cov.size() > 0 && (!o.sensor || rng)) {
                    Eigen::VectorXd n(k);
                    for (int i = 0; i < k; ++i) n[i] = draw(o.sensor);
                    v += op.chol * n;
                }
                for (int i = 0; i < k; ++i) slots_[op.out_slots[i]] = v[i];
                break;
            }
            case 3: {
                const FixedOp& op = fixed_ops_[o.index];
                const FixedPointCpd& fp = *op.cpd;
                Eigen::VectorXd pv(op.parent_slots.size());
                for (size_t i = 0; i < op.parent_slots.size(); ++i)
                    pv[i] = value(op.parent_slots[i]);
                Eigen::VectorXd z0 = fp.nominal_z;
                for (size_t i = 0; i < op.warm_slots.size(); ++i)
                    if (op.warm_slots[i] >= 0) z0[i] = x[op.warm_slots[i]];
                Eigen::VectorXd z = solve_fixed_point(fp, pv, modes, z0);
                const int k = static_cast<int>(op.out_slots.size());
                if (fp.noise_cov.size() > 0) {
                    Eigen::VectorXd n(k);
                    for (int i = 0; i < k; ++i) n[i] = draw(false);
                    z += op.chol * n;
                }
                for (int i = 0; i < k; ++i) slots_[op.out_slots[i]] = z[i];
                break;
            }
        }
    }

    x_out.resize(state_dim_);
    for (int i = 0; i < state_dim_; ++i) x_out[i] = slots_[persistent_slots_[i]];
    s_out.resize(static_cast<int>(sensor_slots_.size()));
    for (size_t i = 0; i < sensor_slots_.size(); ++i) s_out[i] = slots_[sensor_slots_[i]];
}

void StepProgram::sample(const Eigen::VectorXd& x, const Modes& modes, std::mt19937_64& rng,
                         Eigen::VectorXd& x_out, Eigen::VectorXd& s_out,
                         bool sensor_noise) const {
    run(x, modes, &rng, nullptr, sensor_noise, x_out, s_out);
}

void StepProgram::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& w, const Modes& modes,
                       Eigen::VectorXd& x_out, Eigen::VectorXd& s_out) const {
    if (w.size() != noise_dim_)
        throw std::invalid_argument("StepProgram::eval: noise vector has wrong size");
    run(x, modes, nullptr, &w, false, x_out, s_out);
}

double StepProgram::sensor_noise_var(int sensor_index, const Modes& modes) const {
    return sensor_noise_var_.at(sensor_index)(modes);
}

// ---------------------------------------------------------------------------
// Sampling

Trajectory forward_sample(const Tbn& m, const Gaussian& initial,
                          const std::vector<Modes>& modes, int steps, std::uint64_t seed) {
    if (static_cast<int>(modes.size()) < steps)
        throw std::invalid_argument("forward_sample: not enough mode entries for all steps");
    StepProgram prog(m);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> stdnorm(0.0, 1.0);

    const auto& persistent = m.persistent();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(initial.cov());
    Eigen::MatrixXd L =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::VectorXd n0(initial.dim());
    for (int i = 0; i < initial.dim(); ++i) n0[i] = stdnorm(rng);
    Eigen::VectorXd sampled = initial.mean() + L * n0;
    Eigen::VectorXd x(persistent.size());
    for (size_t i = 0; i < persistent.size(); ++i)
        x[i] = sampled[initial.index_of(persistent[i])];

    Trajectory traj;
    traj.initial_state = x;
    Eigen::VectorXd x_next, s_next;
    for (int t = 0; t < steps; ++t) {
        try {
            prog.sample(x, modes[t], rng, x_next, s_next, /*sensor_noise=*/true);
        } catch (const std::exception& e) {
            throw std::runtime_error("forward_sample: step " + std::to_string(t) + ": " +
                                     e.what());
        }
        std::map<std::string, double> vals;
        for (size_t i = 0; i < prog.slot_labels().size(); ++i)
            vals[prog.slot_labels()[i]] = prog.last_slots()[i];
        traj.values.push_back(std::move(vals));
        traj.states.push_back(x_next);
        x = x_next;
    }
    return traj;
}

}  // namespace dbnmon
