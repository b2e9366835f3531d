#pragma once

// Experiment orchestration shared by the CLI and the integration tests:
// run Monte Carlo + the requested analyses, emit CSV/JSON artifacts.

#include "difest/adversary.hpp"
#include "difest/analysis.hpp"
#include "difest/config.hpp"
#include "difest/schedule_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace difest {

// Full-precision decimal rendering so downstream re-verification is exact.
inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConstraintError("cannot write '" + path + "'");
    for (const auto& line : lines) out << line << "\n";
}

struct RunResult {
    MonteCarloEstimate estimate;
    Json summary;
    bool all_checks_passed = true;
};

inline SimulationSetup setup_from_config(const ExperimentConfig& cfg) {
    SimulationSetup setup;
    setup.problem = cfg.problem;
    setup.topology = cfg.topology;
    setup.policy = cfg.policy;
    setup.strategy = cfg.strategy;
    setup.theta0 = cfg.theta0;
    return setup;
}

inline Vector stacked_initial_error(const ExperimentConfig& cfg) {
    if (cfg.adversary.e_theta0.size() > 0) return cfg.adversary.e_theta0;
    Vector e0(static_cast<Eigen::Index>(cfg.problem.n) * cfg.problem.m);
    for (int i = 0; i < cfg.problem.n; ++i)
        e0.segment(static_cast<Eigen::Index>(i) * cfg.problem.m, cfg.problem.m) =
            cfg.theta0[static_cast<std::size_t>(i)] - cfg.problem.theta;
    return e0;
}

inline void write_mc_csv(const MonteCarloEstimate& est, const std::string& path) {
    std::vector<std::string> lines{"k,mean_err_sq,std_err,overflow_count"};
    for (std::size_t k = 0; k < est.mean_err_sq.size(); ++k)
        lines.push_back(std::to_string(k) + "," + fmt17(est.mean_err_sq[k]) + "," +
                        fmt17(est.std_err[k]) + "," + std::to_string(est.overflow_count[k]));
    write_lines(path, lines);
}

inline void write_trajectory_csv(const TrajectoryRecord& rec, int n, const std::string& path) {
    std::vector<std::string> lines{"k,node,err_norm_sq,lambda_min_pinv,overflow_flag"};
    const bool has_lambda = !rec.lambda_min_pinv.empty();
    for (std::size_t k = 0; k < rec.err_norm_sq.size(); ++k) {
        const bool overflow = rec.overflow_step && static_cast<long>(k) >= *rec.overflow_step;
        for (int i = 0; i < n; ++i) {
            const double lam = has_lambda && k < rec.lambda_min_pinv.size()
                                   ? rec.lambda_min_pinv[k][static_cast<std::size_t>(i)]
                                   : std::numeric_limits<double>::quiet_NaN();
            lines.push_back(std::to_string(k) + "," + std::to_string(i) + "," +
                            fmt17(rec.err_norm_sq[k]) + "," + fmt17(lam) + "," +
                            (overflow ? "1" : "0"));
        }
    }
    write_lines(path, lines);
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
    RunResult result;
    SimulationSetup setup = setup_from_config(cfg);

    MonteCarloOptions mc_opts;
    mc_opts.workers = cfg.workers;
    mc_opts.checkpoints = cfg.analysis.checkpoints;
    result.estimate = monte_carlo(setup, cfg.horizon, cfg.trials, cfg.seed, mc_opts);

    Json summary;
    summary["schema_version"] = cfg.schema_version;
    summary["trials"] = cfg.trials;
    summary["horizon"] = cfg.horizon;
    const double final_mean = result.estimate.mean_err_sq.back();
    summary["final_mean_err_sq"] = final_mean;
    summary["final_std_err"] = result.estimate.std_err.back();
    summary["overflow_total"] = result.estimate.overflow_count.back();

    auto wants = [&](const std::string& name) {
        for (const auto& c : cfg.analysis.checks)
            if (c == name) return true;
        return false;
    };

    const bool needs_trajectory = wants("as_rate") || wants("rate_sum");
    TrajectoryRecord trajectory;
    if (needs_trajectory) {
        TrajectoryOptions opts;
        opts.record_lambda = true;
        opts.record_p_ratio = cfg.policy.kind == GainKind::rls && cfg.problem.m == 1;
        trajectory = simulate_trajectory(setup, cfg.horizon, derive_trial_seed(cfg.seed, 0), opts);
    }

    if (wants("a3")) {
        const auto rep = check_a3(cfg.problem.regressors, cfg.seed,
                                  std::min<long>(cfg.horizon, 512), cfg.analysis.h,
                                  cfg.analysis.alpha, cfg.analysis.c);
        summary["a3"] = {{"verdict", rep.verdict},
                         {"min_statistic", rep.min_statistic},
                         {"c", rep.c},
                         {"finite_horizon", rep.finite_horizon}};
        result.all_checks_passed &= rep.verdict;
    }

    if (wants("rate_ms")) {
        const auto spectral = spectral_constant_s(cfg.topology, cfg.analysis.h);
        const auto rate = rate_fit_ms(result.estimate, cfg.policy.beta, cfg.analysis.alpha,
                                      spectral.s_symmetric, cfg.analysis.c,
                                      cfg.problem.noise.bound_M, cfg.analysis.tail_fraction);
        summary["rate_ms"] = {{"pass", rate.pass},
                              {"tail_max_stat", rate.tail_max_stat},
                              {"bound", rate.bound},
                              {"ratio", rate.ratio},
                              {"argmax_k", rate.argmax_k},
                              {"trivially_satisfied", rate.trivially_satisfied},
                              {"s_symmetric", spectral.s_symmetric}};
        result.all_checks_passed &= rate.pass;
    }

    if (wants("as_rate")) {
        const auto as = as_rate_check(trajectory, cfg.analysis.epsilon);
        summary["as_rate"] = {{"pass", as.pass}, {"window_maxima", as.window_maxima}};
        result.all_checks_passed &= as.pass;
    }

    if (wants("rate_sum")) {
        const auto rs = scalar_rls_rate_sum(trajectory);
        summary["rate_sum"] = {{"cauchy_pass", rs.cauchy_pass},
                               {"weights_diverging", rs.weights_diverging},
                               {"final_sum", rs.partial_sums.back()},
                               {"final_weight_sum", rs.weight_sums.back()}};
        result.all_checks_passed &= rs.cauchy_pass && rs.weights_diverging;
    }

    if (wants("plateau")) {
        if (cfg.problem.m != 1 || !cfg.problem.regressors.deterministic())
            throw ConstraintError("plateau check needs a deterministic m=1 regressor schedule");
        std::vector<std::vector<double>> phis;
        for (long k = 0; k < cfg.horizon; ++k) {
            std::vector<double> step;
            for (int i = 0; i < cfg.problem.n; ++i)
                step.push_back(cfg.problem.regressors.phi(cfg.seed, k, i)(0));
            phis.push_back(std::move(step));
        }
        const Vector err0 = stacked_initial_error(cfg);
        const auto pi = limit_product_pi(cfg.topology, phis, err0);
        const double se = result.estimate.std_err.back();
        const double gap = std::abs(final_mean - pi.plateau);
        const bool pass = pi.plateau > 0.0 && gap <= 4.0 * std::max(se, 1e-12);
        summary["plateau"] = {{"pass", pass},
                              {"plateau", pi.plateau},
                              {"mc_final", final_mean},
                              {"gap", gap},
                              {"std_err", se}};
        result.all_checks_passed &= pass;
    }

    summary["checks_passed"] = result.all_checks_passed;
    result.summary = summary;

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    write_mc_csv(result.estimate, cfg.output_dir + "/mc.csv");
    if (needs_trajectory)
        write_trajectory_csv(trajectory, cfg.problem.n, cfg.output_dir + "/trajectory.csv");
    {
        std::ofstream out(cfg.output_dir + "/summary.json", std::ios::binary);
        out << summary.dump(2) << "\n";
        std::ofstream echo(cfg.output_dir + "/config_echo.json", std::ios::binary);
        echo << cfg.effective.dump(2) << "\n";
    }
    return result;
}

// Sweep over one declared parameter; one CSV row per grid cell.
inline Json sweep_experiment(const ExperimentConfig& base_cfg, const Json& base_json) {
    if (base_cfg.sweep.parameter.empty() || base_cfg.sweep.values.empty())
        throw ConstraintError("sweep requires sweep.parameter and sweep.values");
    namespace fs = std::filesystem;
    fs::create_directories(base_cfg.output_dir);

    std::vector<std::string> lines{"value,final_mean_err_sq,final_std_err,overflow_total"};
    Json cells = Json::array();
    for (double value : base_cfg.sweep.values) {
        Json patched = base_json;
        Json* cursor = &patched;
        std::string param = base_cfg.sweep.parameter;
        std::size_t pos;
        while ((pos = param.find('.')) != std::string::npos) {
            cursor = &(*cursor)[param.substr(0, pos)];
            param = param.substr(pos + 1);
        }
        (*cursor)[param] = value;
        patched.erase("sweep");
        ExperimentConfig cfg = parse_config(patched);
        cfg.output_dir = base_cfg.output_dir + "/cell_" + fmt17(value);
        const RunResult run = run_experiment(cfg);
        lines.push_back(fmt17(value) + "," + fmt17(run.estimate.mean_err_sq.back()) + "," +
                        fmt17(run.estimate.std_err.back()) + "," +
                        std::to_string(run.estimate.overflow_count.back()));
        Json cell = run.summary;
        cell["value"] = value;
        cells.push_back(cell);
    }
    write_lines(base_cfg.output_dir + "/sweep.csv", lines);
    Json out;
    out["parameter"] = base_cfg.sweep.parameter;
    out["cells"] = cells;
    std::ofstream js(base_cfg.output_dir + "/sweep.json", std::ios::binary);
    js << out.dump(2) << "\n";
    return out;
}

} // namespace difest
