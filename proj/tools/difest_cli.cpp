// Command line front end: topology validation, experiment runs, adversarial
// schedule construction/verification, parameter sweeps and report summaries.
//
// Exit codes: 0 success, 1 failed check, 2 config error, 3 search failure.

#include "difest/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace difest;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    long trials = 0;
    int workers = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--seed", flags.seed, "master seed override")
        ->each([&](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--trials", flags.trials, "trial count override");
    cmd->add_option("--workers", flags.workers, "Monte Carlo worker count");
}

ExperimentConfig load_with_overrides(const CommonFlags& flags) {
    ExperimentConfig cfg = load_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (flags.seed_set) {
        cfg.seed = flags.seed;
        cfg.effective["seed"] = flags.seed;
    }
    if (flags.trials > 0) {
        cfg.trials = flags.trials;
        cfg.effective["run"]["trials"] = flags.trials;
    }
    if (flags.workers >= 0) cfg.workers = flags.workers;
    return cfg;
}

int cmd_validate_topology(const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(flags);
    const ValidationReport rep = check_assumption_a1(cfg.topology);
    std::cout << "doubly_stochastic: " << (rep.doubly_stochastic ? "true" : "false") << "\n"
              << "irreducible: " << (rep.irreducible ? "true" : "false") << "\n"
              << "aperiodic: " << (rep.aperiodic ? "true" : "false") << "\n"
              << "ata_irreducible: " << (rep.ata_irreducible ? "true" : "false") << "\n"
              << "A1: " << (rep.a1 ? "true" : "false") << "\n"
              << "A1': " << (rep.a1_prime ? "true" : "false") << "\n";
    return rep.a1 ? 0 : 1;
}

int cmd_run(const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(flags);
    if (cfg.problem.regressors.kind == RegressorKind::adversarial &&
        cfg.problem.regressors.schedule.empty()) {
        std::string path = cfg.adversary.schedule_file;
        if (!std::filesystem::exists(path))
            path = cfg.output_dir + "/" + cfg.adversary.schedule_file;
        const auto sched = load_schedule(path);
        cfg.problem.regressors.schedule = sched.phis;
    }
    const RunResult result = run_experiment(cfg);
    std::cout << result.summary.dump(2) << "\n";
    return result.all_checks_passed ? 0 : 1;
}

int cmd_adversary_build(const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(flags);
    SearchParams params;
    params.seed = cfg.seed;
    params.max_attempts = cfg.adversary.max_attempts;
    params.nonmembership_tol = cfg.adversary.tol;
    const Vector e0 = stacked_initial_error(cfg);
    const AdversarialSchedule sched = build_divergent_schedule(
        cfg.topology, cfg.problem.m, e0, cfg.adversary.blocks, params);
    const VerificationRecord rec = verify_dd(sched, cfg.topology, e0, params.nonmembership_tol);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const std::string path = cfg.output_dir + "/" + cfg.adversary.schedule_file;
    save_schedule(sched, &rec, path);
    std::ofstream echo(cfg.output_dir + "/config_echo.json", std::ios::binary);
    echo << cfg.effective.dump(2) << "\n";
    std::cout << "schedule: " << path << "\n"
              << "steps: " << sched.phis.size() << "\n"
              << "verdict: " << (rec.verdict ? "true" : "false") << "\n";
    for (const auto& b : rec.blocks)
        std::cout << "t_k=" << b.t_k << " amp_value=" << fmt17(b.amp_value)
                  << " target=" << fmt17(b.amp_target) << " margin_ratio=" << b.margin_ratio
                  << " lambda_min=" << b.lambda_min_gram << "\n";
    return rec.verdict ? 0 : 1;
}

int cmd_adversary_verify(const CommonFlags& flags, const std::string& schedule_path) {
    ExperimentConfig cfg = load_with_overrides(flags);
    std::string path = schedule_path;
    if (path.empty()) path = cfg.output_dir + "/" + cfg.adversary.schedule_file;
    const AdversarialSchedule sched = load_schedule(path);
    const Vector e0 = stacked_initial_error(cfg);
    const VerificationRecord rec = verify_dd(sched, cfg.topology, e0, cfg.adversary.tol);
    std::cout << verification_to_json(rec).dump(2) << "\n";
    return rec.verdict ? 0 : 1;
}

int cmd_sweep(const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(flags);
    std::ifstream in(flags.config_path);
    Json base = Json::parse(in);
    if (!flags.out_dir.empty()) base["output"] = Json{{"dir", flags.out_dir}};
    if (flags.seed_set) base["seed"] = flags.seed;
    const Json out = sweep_experiment(cfg, base);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string& dir) {
    namespace fs = std::filesystem;
    bool any = false;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.path().filename() != "summary.json") continue;
        std::ifstream in(entry.path());
        Json j = Json::parse(in);
        any = true;
        std::cout << entry.path().string() << ": final_mean_err_sq="
                  << fmt17(j.value("final_mean_err_sq", 0.0))
                  << " overflow=" << j.value("overflow_total", 0L)
                  << " checks_passed=" << (j.value("checks_passed", true) ? "true" : "false")
                  << "\n";
    }
    if (!any) std::cout << "no summaries found under " << dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion estimation simulator"};
    app.require_subcommand(1);

    CommonFlags validate_flags, run_flags, build_flags, verify_flags, sweep_flags;
    std::string verify_schedule;
    std::string report_dir = "out";

    auto* validate = app.add_subcommand("validate-topology", "check assumptions A1/A1'");
    add_common(validate, validate_flags);

    auto* run = app.add_subcommand("run", "simulate and analyze");
    add_common(run, run_flags);

    auto* adversary = app.add_subcommand("adversary", "divergent schedule tools");
    adversary->require_subcommand(1);
    auto* build = adversary->add_subcommand("build", "construct a divergent schedule");
    add_common(build, build_flags);
    auto* verify = adversary->add_subcommand("verify", "re-check a schedule file");
    add_common(verify, verify_flags);
    verify->add_option("--schedule", verify_schedule, "schedule file path");

    auto* sweep = app.add_subcommand("sweep", "grid over one declared parameter");
    add_common(sweep, sweep_flags);

    auto* report = app.add_subcommand("report", "summarize prior outputs");
    report->add_option("--out", report_dir, "directory holding run outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (validate->parsed()) return cmd_validate_topology(validate_flags);
        if (run->parsed()) return cmd_run(run_flags);
        if (build->parsed()) return cmd_adversary_build(build_flags);
        if (verify->parsed()) return cmd_adversary_verify(verify_flags, verify_schedule);
        if (sweep->parsed()) return cmd_sweep(sweep_flags);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const SearchFailure& e) {
        std::cerr << "search failure: " << e.what() << "\n";
        return 3;
    } catch (const ConstraintError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const StructuralError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const PreconditionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
