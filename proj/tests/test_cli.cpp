#include <catch2/catch_amalgamated.hpp>

#include "difest/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace difest;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

Json minimal_config() {
    return Json{{"seed", 3},
                {"topology", {{"kind", "complete_uniform"}, {"n", 2}}},
                {"model",
                 {{"m", 1},
                  {"theta", {1.0}},
                  {"regressors", {{"kind", "single_informative_node"}}},
                  {"noise", {{"kind", "gaussian"}, {"sigma_scale", 1.0}, {"bound_M", 1.0}}}}},
                {"algo", {{"kind", "rls"}}},
                {"run", {{"horizon", 50}, {"trials", 8}}}};
}

std::string write_temp(const Json& j, const std::string& name) {
    const std::string path = (fs::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << j.dump(2);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CLI_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("config loading", "[cli]") {
    SECTION("minimal config fills documented defaults") {
        ExperimentConfig cfg = parse_config(minimal_config());
        CHECK(cfg.policy.kind == GainKind::rls);
        CHECK(cfg.strategy == Strategy::atc);
        CHECK(cfg.policy.beta == 0.75);
        CHECK(cfg.theta0.size() == 2);
        CHECK(cfg.theta0[0].isZero());
        CHECK(cfg.analysis.tail_fraction == 0.25);
    }
    SECTION("rm beta outside (1/2, 1 - alpha) is named in the error") {
        Json j = minimal_config();
        j["algo"]["kind"] = "rm";
        j["algo"]["beta"] = 0.4;
        try {
            parse_config(j);
            FAIL("expected a constraint error");
        } catch (const ConstraintError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("algo.beta") != std::string::npos);
            CHECK(msg.find("1/2") != std::string::npos);
        }
    }
    SECTION("unknown keys rejected with their path") {
        Json j = minimal_config();
        j["model"]["regressors"]["typo_key"] = 1;
        try {
            parse_config(j);
            FAIL("expected a constraint error");
        } catch (const ConstraintError& e) {
            CHECK(std::string(e.what()).find("model.regressors.typo_key") != std::string::npos);
        }
    }
    SECTION("broadcast and per-node theta0") {
        Json j = minimal_config();
        j["algo"]["theta0"] = {0.5};
        auto cfg = parse_config(j);
        CHECK(cfg.theta0[0](0) == 0.5);
        CHECK(cfg.theta0[1](0) == 0.5);
        j["algo"]["theta0"] = {{0.5}, {-0.5}};
        cfg = parse_config(j);
        CHECK(cfg.theta0[1](0) == -0.5);
    }
    SECTION("effective config echo is a fixed point of load") {
        ExperimentConfig cfg = parse_config(minimal_config());
        ExperimentConfig cfg2 = parse_config(cfg.effective);
        CHECK(cfg2.effective == cfg.effective);
        CHECK(cfg2.seed == cfg.seed);
        CHECK(cfg2.horizon == cfg.horizon);
    }
    SECTION("non-PSD covariance rejected") {
        Json j = minimal_config();
        j["model"]["noise"]["sigma"] = {1.0, 2.0, 2.0, 1.0};
        j["model"]["noise"].erase("sigma_scale");
        CHECK_THROWS_AS(parse_config(j), StructuralError);
    }
}

TEST_CASE("run_experiment", "[cli]") {
    SECTION("zero noise at the truth reports zero error") {
        Json j = minimal_config();
        j["model"]["noise"]["sigma_scale"] = 0.0;
        j["algo"]["theta0"] = {1.0};
        j["output"] = {{"dir", (fs::temp_directory_path() / "difest_zero").string()}};
        auto cfg = parse_config(j);
        auto result = run_experiment(cfg);
        CHECK(result.summary["final_mean_err_sq"].get<double>() == 0.0);
        CHECK(result.all_checks_passed);
        CHECK(fs::exists(cfg.output_dir + "/mc.csv"));
        CHECK(fs::exists(cfg.output_dir + "/config_echo.json"));
        const Json echo = Json::parse(std::ifstream(cfg.output_dir + "/config_echo.json"));
        CHECK(echo.contains("schema_version"));
        fs::remove_all(cfg.output_dir);
    }
    SECTION("csv output is byte identical across runs and worker counts") {
        Json j = minimal_config();
        j["run"]["trials"] = 48;
        const std::string dir1 = (fs::temp_directory_path() / "difest_det1").string();
        const std::string dir2 = (fs::temp_directory_path() / "difest_det2").string();
        j["output"] = {{"dir", dir1}};
        auto cfg1 = parse_config(j);
        cfg1.workers = 1;
        run_experiment(cfg1);
        j["output"] = {{"dir", dir2}};
        auto cfg2 = parse_config(j);
        cfg2.workers = 7;
        run_experiment(cfg2);
        CHECK(slurp(dir1 + "/mc.csv") == slurp(dir2 + "/mc.csv"));
        fs::remove_all(dir1);
        fs::remove_all(dir2);
    }
}

TEST_CASE("cli subcommands and exit codes", "[cli]") {
    SECTION("validate-topology fails the identity matrix with exit 1") {
        Json j = minimal_config();
        j["topology"] = {{"kind", "explicit"},
                         {"n", 3},
                         {"matrix", {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}}};
        const std::string path = write_temp(j, "difest_identity.json");
        CHECK(run_cli("validate-topology --config " + path) == 1);
        fs::remove(path);
    }
    SECTION("validate-topology passes a ring with exit 0") {
        Json j = minimal_config();
        j["topology"] = {{"kind", "ring_self_loops"}, {"n", 4}};
        const std::string path = write_temp(j, "difest_ring.json");
        CHECK(run_cli("validate-topology --config " + path) == 0);
        fs::remove(path);
    }
    SECTION("config errors exit with 2") {
        Json j = minimal_config();
        j["algo"]["kind"] = "nonsense";
        const std::string path = write_temp(j, "difest_bad.json");
        CHECK(run_cli("run --config " + path) == 2);
        fs::remove(path);
        CHECK(run_cli("run --config /nonexistent/nope.json") == 2);
    }
    SECTION("zero-noise run exits 0") {
        Json j = minimal_config();
        j["model"]["noise"]["sigma_scale"] = 0.0;
        j["algo"]["theta0"] = {1.0};
        const std::string dir = (fs::temp_directory_path() / "difest_cli_run").string();
        j["output"] = {{"dir", dir}};
        const std::string path = write_temp(j, "difest_run.json");
        CHECK(run_cli("run --config " + path) == 0);
        fs::remove(path);
        fs::remove_all(dir);
    }
    SECTION("adversary build then verify round-trips with exit 0") {
        Json j;
        j["seed"] = 11;
        j["topology"] = {{"kind", "complete_uniform"}, {"n", 2}};
        j["model"] = {{"m", 2},
                      {"theta", {0.0, 0.0}},
                      {"regressors", {{"kind", "adversarial"}}},
                      {"noise", {{"kind", "gaussian"}, {"sigma_scale", 1.0}, {"bound_M", 1.0}}}};
        j["algo"] = {{"kind", "rls"}, {"theta0", {{1.0, 0.0}, {0.0, 0.0}}}};
        j["adversary"] = {{"blocks", 2}};
        const std::string dir = (fs::temp_directory_path() / "difest_cli_adv").string();
        j["output"] = {{"dir", dir}};
        const std::string path = write_temp(j, "difest_adv.json");
        REQUIRE(run_cli("adversary build --config " + path) == 0);
        CHECK(run_cli("adversary verify --config " + path + " --schedule " + dir +
                      "/schedule.json") == 0);
        fs::remove(path);
        fs::remove_all(dir);
    }
    SECTION("sweep emits one row per cell") {
        Json j = minimal_config();
        j["run"]["trials"] = 8;
        j["sweep"] = {{"parameter", "model.noise.sigma_scale"}, {"values", {0.5, 1.0}}};
        const std::string dir = (fs::temp_directory_path() / "difest_cli_sweep").string();
        j["output"] = {{"dir", dir}};
        const std::string path = write_temp(j, "difest_sweep.json");
        REQUIRE(run_cli("sweep --config " + path) == 0);
        std::ifstream csv(dir + "/sweep.csv");
        std::string line;
        int rows = 0;
        while (std::getline(csv, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 3);  // header + two cells
        CHECK(run_cli("report --out " + dir) == 0);
        fs::remove(path);
        fs::remove_all(dir);
    }
}
