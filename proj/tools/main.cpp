#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>

#include "dbnmon/baselines.hpp"
#include "dbnmon/config.hpp"
#include "dbnmon/plant.hpp"
#include "dbnmon/quadrature.hpp"
#include "dbnmon/tracker.hpp"

using json = nlohmann::ordered_json;
using namespace dbnmon;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct Options {
    std::string config_path;
    std::string model = "plant";
    std::uint64_t seed = 1;
    int steps = 200;
    std::string filters = "structured-p3";
    std::string out_dir = "out";
    int particles = 1000;
    int precision = 3;
    double kappa = std::numeric_limits<double>::quiet_NaN();
    std::string drop_sensors;
};

struct FilterOutput {
    std::vector<Eigen::VectorXd> means;  // per step, persistent order
    std::vector<Eigen::VectorXd> sds;
    double loglik_sum = 0.0;
    long function_evals = 0;
    long repairs = 0;
    long clips = 0;
    double wall_per_step = 0.0;
    bool is_pf = false;
    double frac_maxw_05 = 0.0, frac_maxw_09 = 0.0, frac_maxw_099 = 0.0;
};

std::vector<std::map<std::string, double>> evidence_from(const Trajectory& traj,
                                                         const Tbn& model,
                                                         const std::string& drop) {
    std::set<std::string> dropped;
    for (const auto& name : split_list(drop)) {
        bool known = false;
        for (const auto& s : model.sensor_names()) known |= (s == name);
        if (!known) throw std::invalid_argument("unknown sensor '" + name + "' in --drop-sensors");
        dropped.insert(name);
    }
    std::vector<std::map<std::string, double>> evidence;
    for (const auto& vals : traj.values) {
        std::map<std::string, double> e;
        for (const auto& s : model.sensor_names())
            if (!dropped.count(s)) e[s] = vals.at(s);
        evidence.push_back(std::move(e));
    }
    return evidence;
}

FilterOutput run_filter(const std::string& name, const Tbn& model, const Gaussian& initial,
                        const std::vector<Modes>& modes,
                        const std::vector<std::map<std::string, double>>& evidence,
                        const Options& opt) {
    const int steps = static_cast<int>(evidence.size());
    const auto& persistent = model.persistent();
    const int dx = static_cast<int>(persistent.size());
    FilterOutput out;
    out.means.reserve(steps);
    out.sds.reserve(steps);

    auto record = [&](const Gaussian& belief) {
        Eigen::VectorXd m(dx), sd(dx);
        for (int i = 0; i < dx; ++i) {
            m[i] = belief.mean_of(persistent[i]);
            sd[i] = std::sqrt(std::max(belief.var_of(persistent[i]), 0.0));
        }
        out.means.push_back(m);
        out.sds.push_back(sd);
    };

    auto t0 = std::chrono::steady_clock::now();
    if (name == "structured-p3" || name == "structured-p5" || name == "structured-p7" ||
        name == "structured") {
        RulePolicy policy;
        policy.precision = name == "structured" ? opt.precision : name.back() - '0';
        policy.kappa = opt.kappa;
        Tracker tracker(model, policy);
        BeliefTrace trace = tracker.track_sequence(initial, modes, evidence);
        if (trace.error)
            throw std::runtime_error("filter '" + name + "' failed at step " +
                                     std::to_string(trace.failed_step.value_or(-1)) + ": " +
                                     *trace.error);
        for (int t = 0; t < steps; ++t) {
            record(trace.beliefs[t + 1]);
            out.loglik_sum += trace.steps[t].log_likelihood;
            out.function_evals += trace.steps[t].function_evals;
            out.repairs += trace.steps[t].repairs;
            out.clips += trace.steps[t].eigenvalue_clips;
        }
    } else if (name == "ekf" || name == "uf") {
        StepProgram prog(model);
        Gaussian belief = initial.marginalize(persistent);
        for (int t = 0; t < steps; ++t) {
            try {
                if (name == "ekf") {
                    BaselineStep st = ekf_step(belief, prog, modes[t], evidence[t]);
                    belief = st.belief;
                    out.loglik_sum += st.log_likelihood;
                    out.function_evals += st.function_evals;
                } else {
                    UfStep st = monolithic_uf_step(belief, prog, modes[t], evidence[t], opt.kappa);
                    belief = st.belief;
                    out.loglik_sum += st.log_likelihood;
                    out.function_evals += st.sigma_point_evals + st.noise_evals;
                }
            } catch (const std::exception& e) {
                throw std::runtime_error("filter '" + name + "' failed at step " +
                                         std::to_string(t) + ": " + e.what());
            }
            record(belief);
        }
    } else if (name == "pf") {
        StepProgram prog(model);
        std::mt19937_64 rng(opt.seed + 0x9e3779b97f4a7c15ull);
        ParticleSet ps = particle_filter_init(initial, persistent, opt.particles, rng);
        int n05 = 0, n09 = 0, n099 = 0;
        for (int t = 0; t < steps; ++t) {
            try {
                ps = particle_filter_step(ps, prog, modes[t], evidence[t], rng);
            } catch (const std::exception& e) {
                throw std::runtime_error("filter 'pf' failed at step " + std::to_string(t) +
                                         ": " + e.what());
            }
            out.loglik_sum += ps.log_likelihood;
            out.function_evals += opt.particles;
            if (ps.max_weight > 0.5) ++n05;
            if (ps.max_weight > 0.9) ++n09;
            if (ps.max_weight > 0.99) ++n099;
            Eigen::VectorXd sd = ps.weighted_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
            out.means.push_back(ps.weighted_mean);
            out.sds.push_back(sd);
        }
        out.is_pf = true;
        if (steps > 0) {
            out.frac_maxw_05 = double(n05) / steps;
            out.frac_maxw_09 = double(n09) / steps;
            out.frac_maxw_099 = double(n099) / steps;
        }
    } else {
        throw std::invalid_argument("unknown filter '" + name +
                                    "'; known: structured-p3, structured-p5, structured-p7, "
                                    "ekf, uf, pf");
    }
    auto t1 = std::chrono::steady_clock::now();
    out.wall_per_step =
        steps > 0 ? std::chrono::duration<double>(t1 - t0).count() / steps : 0.0;
    return out;
}

void write_trace_csv(const std::string& path, const Tbn& model, const Trajectory& traj,
                     const FilterOutput& fo) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "step,variable,truth,estimate,std\n";
    const auto& persistent = model.persistent();
    for (size_t t = 0; t < fo.means.size(); ++t)
        for (size_t i = 0; i < persistent.size(); ++i)
            f << t << ',' << persistent[i] << ',' << fmt17(traj.states[t][i]) << ','
              << fmt17(fo.means[t][i]) << ',' << fmt17(fo.sds[t][i]) << '\n';
}

json report_entry(const Tbn& model, const Trajectory& traj, const FilterOutput& fo) {
    const auto& persistent = model.persistent();
    const int steps = static_cast<int>(fo.means.size());
    json rmse = json::object();
    long covered = 0, total = 0;
    for (size_t i = 0; i < persistent.size(); ++i) {
        double se = 0.0;
        for (int t = 0; t < steps; ++t) {
            double err = fo.means[t][i] - traj.states[t][i];
            se += err * err;
            if (std::abs(err) <= 2.0 * fo.sds[t][i]) ++covered;
            ++total;
        }
        rmse[persistent[i]] = steps > 0 ? std::sqrt(se / steps) : 0.0;
    }
    json entry;
    entry["rmse"] = rmse;
    entry["mean_log_likelihood"] = steps > 0 ? fo.loglik_sum / steps : 0.0;
    entry["coverage_2sd"] = total > 0 ? double(covered) / total : 0.0;
    entry["function_evals"] = fo.function_evals;
    entry["repairs"] = fo.repairs;
    entry["eigenvalue_clips"] = fo.clips;
    if (fo.is_pf) {
        entry["degeneracy"] = {{"max_weight_gt_0.5", fo.frac_maxw_05},
                               {"max_weight_gt_0.9", fo.frac_maxw_09},
                               {"max_weight_gt_0.99", fo.frac_maxw_099}};
    }
    return entry;
}

Config load_config(const Options& opt) {
    Config cfg;
    if (!opt.config_path.empty()) cfg = Config::load(opt.config_path);
    return cfg;
}

std::string model_name(const Options& opt, const Config& cfg) {
    return cfg.get("model", opt.model);
}

int cmd_simulate(const Options& opt) {
    Config cfg = load_config(opt);
    ModelBundle bundle = make_model(model_name(opt, cfg), cfg, opt.steps);
    Trajectory traj =
        forward_sample(bundle.model, bundle.initial, bundle.modes, opt.steps, opt.seed);
    std::filesystem::create_directories(opt.out_dir);
    std::string path = opt.out_dir + "/truth.csv";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + path + "'");
    f << "step,variable,value\n";
    for (size_t t = 0; t < traj.values.size(); ++t)
        for (const auto& [name, value] : traj.values[t])
            f << t << ',' << name << ',' << fmt17(value) << '\n';
    std::cout << "wrote " << path << " (" << opt.steps << " steps)\n";
    return 0;
}

int run_compare(const Options& opt, const std::vector<std::string>& filters) {
    Config cfg = load_config(opt);
    ModelBundle bundle = make_model(model_name(opt, cfg), cfg, opt.steps);
    Trajectory traj =
        forward_sample(bundle.model, bundle.initial, bundle.modes, opt.steps, opt.seed);
    auto evidence = evidence_from(traj, bundle.model, opt.drop_sensors);

    std::filesystem::create_directories(opt.out_dir);
    json report;
    report["model"] = model_name(opt, cfg);
    report["seed"] = opt.seed;
    report["steps"] = opt.steps;
    json per_filter = json::object();
    for (const auto& name : filters) {
        FilterOutput fo =
            run_filter(name, bundle.model, bundle.initial, bundle.modes, evidence, opt);
        write_trace_csv(opt.out_dir + "/" + name + ".csv", bundle.model, traj, fo);
        per_filter[name] = report_entry(bundle.model, traj, fo);
        // Timing stays off the report so outputs are reproducible byte for byte.
        std::cout << name << ": " << fmt17(fo.wall_per_step * 1e3) << " ms/step\n";
    }
    report["filters"] = per_filter;
    std::ofstream f(opt.out_dir + "/report.json", std::ios::binary);
    f << report.dump(2) << '\n';
    std::cout << "wrote " << opt.out_dir << "/report.json\n";
    return 0;
}

int cmd_calibrate(const Options& opt, const std::vector<std::string>& filters, int seeds) {
    Config cfg = load_config(opt);
    std::filesystem::create_directories(opt.out_dir);
    json report;
    report["model"] = model_name(opt, cfg);
    report["seeds"] = seeds;
    report["steps"] = opt.steps;
    json per_filter = json::object();
    for (const auto& name : filters) {
        // coverage[variable][seed]
        std::map<std::string, std::vector<double>> coverage;
        for (int s = 0; s < seeds; ++s) {
            Options o = opt;
            o.seed = opt.seed + s;
            ModelBundle bundle = make_model(model_name(opt, cfg), cfg, opt.steps);
            Trajectory traj =
                forward_sample(bundle.model, bundle.initial, bundle.modes, opt.steps, o.seed);
            auto evidence = evidence_from(traj, bundle.model, opt.drop_sensors);
            FilterOutput fo =
                run_filter(name, bundle.model, bundle.initial, bundle.modes, evidence, o);
            const auto& persistent = bundle.model.persistent();
            for (size_t i = 0; i < persistent.size(); ++i) {
                long hits = 0;
                for (size_t t = 0; t < fo.means.size(); ++t)
                    if (std::abs(fo.means[t][i] - traj.states[t][i]) <= 2.0 * fo.sds[t][i])
                        ++hits;
                coverage[persistent[i]].push_back(
                    fo.means.empty() ? 0.0 : double(hits) / fo.means.size());
            }
        }
        json vars = json::object();
        for (const auto& [var, vals] : coverage) {
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= vals.size();
            double sd = 0.0;
            for (double v : vals) sd += (v - mean) * (v - mean);
            sd = vals.size() > 1 ? std::sqrt(sd / (vals.size() - 1)) : 0.0;
            vars[var] = {{"mean_coverage_2sd", mean}, {"sd_across_seeds", sd}};
        }
        per_filter[name] = vars;
    }
    report["filters"] = per_filter;
    std::ofstream f(opt.out_dir + "/calibration.json", std::ios::binary);
    f << report.dump(2) << '\n';
    std::cout << "wrote " << opt.out_dir << "/calibration.json\n";
    return 0;
}

int cmd_quadtest() {
    std::printf("%-10s %-4s %-8s %-14s %s\n", "precision", "dim", "points", "max_error",
                "status");
    bool all_ok = true;
    for (int p : {3, 5, 7}) {
        for (int d = 1; d <= (p == 7 ? 4 : 5); ++d) {
            CubatureRule rule = build_rule(p, d);
            double err = max_monomial_error(rule);
            bool ok = err <= 1e-9;
            all_ok &= ok;
            std::printf("%-10d %-4d %-8d %-14.3e %s\n", p, d, rule.count(), err,
                        ok ? "PASS" : "FAIL");
        }
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"2TBN tracking with structured cubature filters"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "plain-text key=value config file");
        sub->add_option("--model", opt.model, "registered model name (plant, linear6)");
        sub->add_option("--seed", opt.seed, "RNG seed");
        sub->add_option("--steps", opt.steps, "number of steps");
        sub->add_option("--out", opt.out_dir, "output directory");
        sub->add_option("--particles", opt.particles, "particle count for pf");
        sub->add_option("--precision", opt.precision, "cubature precision for 'structured'")
            ->check(CLI::IsMember({3, 5, 7}));
        sub->add_option("--kappa", opt.kappa, "precision-3 center-weight parameter");
        sub->add_option("--drop-sensors", opt.drop_sensors,
                        "comma-separated sensors to ignore as evidence");
    };

    CLI::App* sim = app.add_subcommand("simulate", "sample a ground-truth trajectory");
    add_common(sim);
    CLI::App* track = app.add_subcommand("track", "run one filter on simulated evidence");
    add_common(track);
    std::string one_filter = "structured-p3";
    track->add_option("--filter", one_filter, "filter to run");
    CLI::App* compare = app.add_subcommand("compare", "run several filters on one trajectory");
    add_common(compare);
    compare->add_option("--filters", opt.filters, "comma-separated filter list");
    CLI::App* calibrate = app.add_subcommand("calibrate", "coverage across seeds");
    add_common(calibrate);
    calibrate->add_option("--filters", opt.filters, "comma-separated filter list");
    int seeds = 20;
    calibrate->add_option("--seeds", seeds, "number of independent seeds");
    app.add_subcommand("quadtest", "quadrature exactness table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(opt);
        if (track->parsed()) return run_compare(opt, {one_filter});
        if (compare->parsed()) return run_compare(opt, split_list(opt.filters));
        if (calibrate->parsed()) return cmd_calibrate(opt, split_list(opt.filters), seeds);
        return cmd_quadtest();
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
