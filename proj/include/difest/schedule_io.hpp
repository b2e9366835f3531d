#pragma once

// Versioned JSON serialization of adversarial schedules and their
// verification records.

#include "difest/adversary.hpp"
#include "difest/common.hpp"

#include <json.hpp>

#include <fstream>
#include <string>

namespace difest {

inline nlohmann::json block_to_json(const BlockRecord& b) {
    return {{"t_k", b.t_k},
            {"lambda_min_gram", b.lambda_min_gram},
            {"lambda_target", b.lambda_target},
            {"amp_value", b.amp_value},
            {"amp_target", b.amp_target},
            {"amp_bound16", b.amp_bound16},
            {"margin_ratio", b.margin_ratio},
            {"checkpoint_norm", b.checkpoint_norm},
            {"max_probe_radius", b.max_probe_radius}};
}

inline BlockRecord block_from_json(const nlohmann::json& j) {
    BlockRecord b;
    b.t_k = j.at("t_k").get<long>();
    b.lambda_min_gram = j.at("lambda_min_gram").get<double>();
    b.lambda_target = j.at("lambda_target").get<double>();
    b.amp_value = j.at("amp_value").get<double>();
    b.amp_target = j.at("amp_target").get<double>();
    b.amp_bound16 = j.at("amp_bound16").get<double>();
    b.margin_ratio = j.at("margin_ratio").get<double>();
    b.checkpoint_norm = j.at("checkpoint_norm").get<double>();
    b.max_probe_radius = j.value("max_probe_radius", 0.0);
    return b;
}

inline nlohmann::json schedule_to_json(const AdversarialSchedule& s) {
    nlohmann::json j;
    j["schema_version"] = s.schema_version;
    j["n"] = s.n;
    j["m"] = s.m;
    j["j_star"] = s.j_star;
    j["d"] = s.d;
    j["target_node"] = s.target_node;
    j["seed"] = s.seed;
    j["checkpoints"] = s.checkpoints;
    j["r_checkpoint_coordinate"] = s.r_checkpoint_coordinate;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step : s.phis) {
        // row-major: node-major concatenation of the per-node regressors
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(s.n) * s.m);
        for (const auto& v : step)
            for (int q = 0; q < s.m; ++q) flat.push_back(v(q));
        steps.push_back(flat);
    }
    j["phis"] = std::move(steps);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : s.builder_blocks) blocks.push_back(block_to_json(b));
    j["builder_blocks"] = std::move(blocks);
    return j;
}

inline AdversarialSchedule schedule_from_json(const nlohmann::json& j) {
    AdversarialSchedule s;
    s.schema_version = j.at("schema_version").get<int>();
    if (s.schema_version != 1)
        throw ConstraintError("unsupported schedule schema version " +
                              std::to_string(s.schema_version));
    s.n = j.at("n").get<int>();
    s.m = j.at("m").get<int>();
    s.j_star = j.at("j_star").get<int>();
    s.d = j.at("d").get<int>();
    s.target_node = j.at("target_node").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.checkpoints = j.at("checkpoints").get<std::vector<long>>();
    s.r_checkpoint_coordinate = j.at("r_checkpoint_coordinate").get<std::vector<double>>();
    for (const auto& flat : j.at("phis")) {
        if (static_cast<int>(flat.size()) != s.n * s.m)
            throw ConstraintError("schedule step has wrong length");
        std::vector<Vector> step;
        for (int i = 0; i < s.n; ++i) {
            Vector v(s.m);
            for (int q = 0; q < s.m; ++q)
                v(q) = flat.at(static_cast<std::size_t>(i * s.m + q)).get<double>();
            step.push_back(std::move(v));
        }
        s.phis.push_back(std::move(step));
    }
    if (j.contains("builder_blocks"))
        for (const auto& b : j.at("builder_blocks")) s.builder_blocks.push_back(block_from_json(b));
    return s;
}

inline nlohmann::json verification_to_json(const VerificationRecord& r) {
    nlohmann::json j;
    j["verdict"] = r.verdict;
    j["all_steps_outside"] = r.all_steps_outside;
    j["max_rel_disagreement"] = r.max_rel_disagreement;
    j["failure"] = r.failure;
    j["step_nonmembership"] = r.step_nonmembership;
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : r.blocks) blocks.push_back(block_to_json(b));
    j["blocks"] = std::move(blocks);
    return j;
}

inline void save_schedule(const AdversarialSchedule& s, const VerificationRecord* rec,
                          const std::string& path) {
    nlohmann::json j = schedule_to_json(s);
    if (rec) j["verification"] = verification_to_json(*rec);
    std::ofstream out(path);
    if (!out) throw ConstraintError("cannot write schedule file '" + path + "'");
    out << j.dump(2) << "\n";
}

inline AdversarialSchedule load_schedule(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConstraintError("cannot open schedule file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConstraintError(std::string("schedule parse error: ") + e.what());
    }
    return schedule_from_json(j);
}

} // namespace difest
