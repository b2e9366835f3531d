#pragma once

// Experiment configuration: strict JSON parsing (unknown keys rejected),
// cross-field validation, defaults, and the effective-config echo.

#include "difest/common.hpp"
#include "difest/diffusion.hpp"
#include "difest/model.hpp"
#include "difest/topology.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace difest {

using Json = nlohmann::json;

struct AnalysisSpec {
    std::vector<std::string> checks;  // rate_ms, as_rate, rate_sum, plateau, a3
    double alpha = 0.0;
    double c = 0.1;
    int h = 1;
    double tail_fraction = 0.25;
    double epsilon = 0.2;
    std::vector<long> checkpoints;
};

struct AdversarySpec {
    int blocks = 3;
    int max_attempts = 10000;
    double tol = 1e-8;
    Vector e_theta0;  // empty: derived from theta0 - theta
    std::string schedule_file = "schedule.json";
};

struct SweepSpec {
    std::string parameter;
    std::vector<double> values;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    NetworkTopology topology;
    RegressionProblem problem;
    GainPolicy policy;
    Strategy strategy = Strategy::atc;
    std::vector<Vector> theta0;
    long horizon = 1000;
    long trials = 100;
    int workers = 0;
    AnalysisSpec analysis;
    AdversarySpec adversary;
    SweepSpec sweep;
    std::string output_dir = "out";
    Json effective;  // echo of the fully-defaulted config
};

namespace cfg_detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& allowed,
                           const std::string& scope) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConstraintError("unknown config key '" + scope + it.key() + "'");
}

template <class T>
T get_or(const Json& obj, const std::string& key, T fallback) {
    if (obj.contains(key)) return obj.at(key).get<T>();
    return fallback;
}

inline Matrix parse_row_major(const Json& arr, int rows, int cols, const std::string& what) {
    if (static_cast<int>(arr.size()) != rows * cols)
        throw ConstraintError(what + " must have " + std::to_string(rows * cols) + " entries");
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            m(i, j) = arr.at(static_cast<std::size_t>(i * cols + j)).get<double>();
    return m;
}

inline NetworkTopology parse_topology(const Json& t) {
    reject_unknown(t, {"kind", "n", "self_weight", "matrix", "edges"}, "topology.");
    const std::string kind = get_or<std::string>(t, "kind", "complete_uniform");
    const int n = get_or<int>(t, "n", 1);
    if (kind == "explicit") {
        if (!t.contains("matrix"))
            throw ConstraintError("explicit topology requires topology.matrix");
        NetworkTopology topo;
        topo.n = n;
        topo.adjacency = parse_row_major(t.at("matrix"), n, n, "topology.matrix");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (topo.adjacency(i, j) < 0.0)
                    throw ConstraintError("topology.matrix[" + std::to_string(i) + "," +
                                          std::to_string(j) + "] is negative");
        for (int i = 0; i < n; ++i)
            if (std::abs(topo.adjacency.row(i).sum() - 1.0) > 1e-9)
                throw ConstraintError("topology.matrix row " + std::to_string(i) +
                                      " does not sum to 1");
        return topo;
    }
    TopologyParams params;
    params.self_weight = get_or<double>(t, "self_weight", 0.5);
    if (t.contains("edges"))
        for (const auto& e : t.at("edges"))
            params.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    if (kind == "ring_self_loops")
        return build_standard_topology(TopologyKind::ring_self_loops, n, params);
    if (kind == "complete_uniform")
        return build_standard_topology(TopologyKind::complete_uniform, n, params);
    if (kind == "metropolis")
        return build_standard_topology(TopologyKind::metropolis, n, params);
    throw ConstraintError("unknown topology.kind '" + kind + "'");
}

inline RegressorSource parse_regressors(const Json& r, int m, int n) {
    reject_unknown(r,
                   {"kind", "variance", "magnitude", "active_node", "schedule", "schedule_file"},
                   "model.regressors.");
    RegressorSource src;
    src.m = m;
    src.n = n;
    const std::string kind = get_or<std::string>(r, "kind", "iid_gaussian");
    src.variance = get_or<double>(r, "variance", 1.0);
    src.magnitude = get_or<double>(r, "magnitude", 1.0);
    src.active_node = get_or<int>(r, "active_node", 0);
    if (kind == "iid_gaussian") src.kind = RegressorKind::iid_gaussian;
    else if (kind == "one_hot_rotating") src.kind = RegressorKind::one_hot_rotating;
    else if (kind == "single_informative_node") src.kind = RegressorKind::single_informative_node;
    else if (kind == "deterministic_schedule") src.kind = RegressorKind::deterministic_schedule;
    else if (kind == "adversarial") src.kind = RegressorKind::adversarial;
    else throw ConstraintError("unknown model.regressors.kind '" + kind + "'");
    if (src.active_node < 0 || src.active_node >= n)
        throw ConstraintError("model.regressors.active_node out of range");
    if (r.contains("schedule")) {
        for (const auto& step : r.at("schedule")) {
            std::vector<Vector> per_node;
            for (const auto& node : step) {
                Vector v(m);
                if (static_cast<int>(node.size()) != m)
                    throw ConstraintError("schedule regressor has wrong dimension");
                for (int q = 0; q < m; ++q) v(q) = node.at(static_cast<std::size_t>(q)).get<double>();
                per_node.push_back(std::move(v));
            }
            if (static_cast<int>(per_node.size()) != n)
                throw ConstraintError("schedule step has wrong node count");
            src.schedule.push_back(std::move(per_node));
        }
    }
    return src;
}

inline NoiseSource parse_noise(const Json& nj, int n) {
    reject_unknown(nj, {"kind", "sigma", "sigma_scale", "sigma_common", "variance", "bound_M"},
                   "model.noise.");
    NoiseSource noise;
    noise.n = n;
    std::string kind = get_or<std::string>(nj, "kind", "gaussian");
    if (kind == "gaussian_multivariate") kind = "gaussian";
    noise.bound_M = get_or<double>(nj, "bound_M", 1.0);
    if (kind == "gaussian") {
        noise.kind = NoiseKind::gaussian_multivariate;
        if (nj.contains("sigma"))
            noise.sigma = parse_row_major(nj.at("sigma"), n, n, "model.noise.sigma");
        else if (nj.contains("sigma_common"))
            noise.sigma = nj.at("sigma_common").get<double>() * Matrix::Ones(n, n);
        else
            noise.sigma = get_or<double>(nj, "sigma_scale", 1.0) * Matrix::Identity(n, n);
    } else if (kind == "independent_bounded") {
        noise.kind = NoiseKind::independent_bounded;
        noise.variance = get_or<double>(nj, "variance", noise.bound_M);
    } else {
        throw ConstraintError("unknown model.noise.kind '" + kind + "'");
    }
    noise.finalize();
    return noise;
}

} // namespace cfg_detail

inline ExperimentConfig parse_config(const Json& j) {
    using namespace cfg_detail;
    reject_unknown(j,
                   {"schema_version", "seed", "topology", "model", "algo", "run", "analysis",
                    "adversary", "sweep", "output"},
                   "");
    ExperimentConfig cfg;
    cfg.schema_version = get_or<int>(j, "schema_version", 1);
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);

    cfg.topology = parse_topology(j.value("topology", Json::object()));
    const int n = cfg.topology.n;

    const Json model = j.value("model", Json::object());
    reject_unknown(model, {"m", "theta", "regressors", "noise"}, "model.");
    const int m = get_or<int>(model, "m", 1);
    if (m < 1) throw ConstraintError("model.m must be positive");
    cfg.problem.m = m;
    cfg.problem.n = n;
    cfg.problem.theta = Vector::Zero(m);
    if (model.contains("theta")) {
        const auto& th = model.at("theta");
        if (static_cast<int>(th.size()) != m)
            throw ConstraintError("model.theta must have m entries");
        for (int q = 0; q < m; ++q) cfg.problem.theta(q) = th.at(static_cast<std::size_t>(q)).get<double>();
    }
    cfg.problem.regressors = parse_regressors(model.value("regressors", Json::object()), m, n);
    cfg.problem.noise = parse_noise(model.value("noise", Json::object()), n);

    const Json algo = j.value("algo", Json::object());
    reject_unknown(algo, {"kind", "beta", "strategy", "theta0"}, "algo.");
    const std::string kind = get_or<std::string>(algo, "kind", "rls");
    if (kind == "rls") cfg.policy.kind = GainKind::rls;
    else if (kind == "rm") cfg.policy.kind = GainKind::robbins_monro;
    else throw ConstraintError("unknown algo.kind '" + kind + "'");
    cfg.policy.beta = get_or<double>(algo, "beta", 0.75);
    const std::string strat = get_or<std::string>(algo, "strategy", "atc");
    if (strat == "atc") cfg.strategy = Strategy::atc;
    else if (strat == "cta") cfg.strategy = Strategy::cta;
    else throw ConstraintError("unknown algo.strategy '" + strat + "'");

    cfg.theta0.assign(static_cast<std::size_t>(n), Vector::Zero(m));
    if (algo.contains("theta0")) {
        const auto& t0 = algo.at("theta0");
        if (!t0.empty() && t0.at(0).is_array()) {
            if (static_cast<int>(t0.size()) != n)
                throw ConstraintError("algo.theta0 must list one vector per node");
            for (int i = 0; i < n; ++i) {
                if (static_cast<int>(t0.at(static_cast<std::size_t>(i)).size()) != m)
                    throw ConstraintError("algo.theta0 entries must have m coordinates");
                for (int q = 0; q < m; ++q)
                    cfg.theta0[static_cast<std::size_t>(i)](q) =
                        t0.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(q)).get<double>();
            }
        } else {  // broadcast
            if (static_cast<int>(t0.size()) != m)
                throw ConstraintError("broadcast algo.theta0 must have m coordinates");
            Vector v(m);
            for (int q = 0; q < m; ++q) v(q) = t0.at(static_cast<std::size_t>(q)).get<double>();
            for (auto& t : cfg.theta0) t = v;
        }
    }

    const Json run = j.value("run", Json::object());
    reject_unknown(run, {"horizon", "trials", "workers"}, "run.");
    cfg.horizon = get_or<long>(run, "horizon", 1000);
    cfg.trials = get_or<long>(run, "trials", 100);
    cfg.workers = get_or<int>(run, "workers", 0);
    if (cfg.horizon < 1) throw ConstraintError("run.horizon must be positive");

    const Json an = j.value("analysis", Json::object());
    reject_unknown(an, {"checks", "alpha", "c", "h", "tail_fraction", "epsilon", "checkpoints"},
                   "analysis.");
    cfg.analysis.alpha = get_or<double>(an, "alpha", 0.0);
    cfg.analysis.c = get_or<double>(an, "c", 0.1);
    cfg.analysis.h = get_or<int>(an, "h", 1);
    cfg.analysis.tail_fraction = get_or<double>(an, "tail_fraction", 0.25);
    cfg.analysis.epsilon = get_or<double>(an, "epsilon", 0.2);
    if (an.contains("checks"))
        for (const auto& c : an.at("checks")) cfg.analysis.checks.push_back(c.get<std::string>());
    if (an.contains("checkpoints"))
        for (const auto& c : an.at("checkpoints")) cfg.analysis.checkpoints.push_back(c.get<long>());

    if (cfg.analysis.alpha < 0.0 || cfg.analysis.alpha >= 0.5)
        throw ConstraintError("analysis.alpha must lie in [0, 1/2)");
    if (cfg.policy.kind == GainKind::robbins_monro) {
        if (cfg.policy.beta <= 0.5 || cfg.policy.beta >= 1.0 - cfg.analysis.alpha)
            throw ConstraintError("algo.beta must lie in (1/2, 1 - analysis.alpha) = (0.5, " +
                                  std::to_string(1.0 - cfg.analysis.alpha) + ")");
    }

    const Json adv = j.value("adversary", Json::object());
    reject_unknown(adv, {"blocks", "max_attempts", "tol", "e_theta0", "schedule_file"},
                   "adversary.");
    cfg.adversary.blocks = get_or<int>(adv, "blocks", 3);
    cfg.adversary.max_attempts = get_or<int>(adv, "max_attempts", 10000);
    cfg.adversary.tol = get_or<double>(adv, "tol", 1e-8);
    cfg.adversary.schedule_file = get_or<std::string>(adv, "schedule_file", "schedule.json");
    if (adv.contains("e_theta0")) {
        const auto& e0 = adv.at("e_theta0");
        if (static_cast<int>(e0.size()) != n * m)
            throw ConstraintError("adversary.e_theta0 must have n*m entries");
        cfg.adversary.e_theta0 = Vector(n * m);
        for (int q = 0; q < n * m; ++q)
            cfg.adversary.e_theta0(q) = e0.at(static_cast<std::size_t>(q)).get<double>();
    }

    const Json sweep = j.value("sweep", Json::object());
    reject_unknown(sweep, {"parameter", "values"}, "sweep.");
    cfg.sweep.parameter = get_or<std::string>(sweep, "parameter", "");
    if (sweep.contains("values"))
        for (const auto& v : sweep.at("values")) cfg.sweep.values.push_back(v.get<double>());

    const Json out = j.value("output", Json::object());
    reject_unknown(out, {"dir"}, "output.");
    cfg.output_dir = get_or<std::string>(out, "dir", "out");

    // Effective config echo: the input with all defaults materialized.
    Json echo = j;
    echo["schema_version"] = cfg.schema_version;
    echo["seed"] = cfg.seed;
    echo["run"] = {{"horizon", cfg.horizon}, {"trials", cfg.trials}, {"workers", cfg.workers}};
    if (!echo.contains("topology")) echo["topology"] = Json::object();
    echo["topology"]["n"] = n;
    if (!echo["topology"].contains("kind")) echo["topology"]["kind"] = "complete_uniform";
    if (!echo.contains("model")) echo["model"] = Json::object();
    echo["model"]["m"] = m;
    {
        std::vector<double> th(cfg.problem.theta.data(), cfg.problem.theta.data() + m);
        echo["model"]["theta"] = th;
    }
    if (!echo.contains("algo")) echo["algo"] = Json::object();
    echo["algo"]["kind"] = kind;
    echo["algo"]["beta"] = cfg.policy.beta;
    echo["algo"]["strategy"] = strat;
    if (!echo.contains("output")) echo["output"] = Json{{"dir", cfg.output_dir}};
    cfg.effective = echo;
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConstraintError("cannot open config file '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConstraintError("config parse error in '" + path + "': " + e.what());
    }
    return parse_config(j);
}

} // namespace difest
