// Command-line front end: run an experiment from a config file, validate a
// config, or inspect a results directory.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "fedhpl/config.hpp"
#include "fedhpl/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct RunOptions {
    std::string config_path;
    std::string out_dir;
    std::string policy;
    std::string upload_mode;
    std::int64_t seed = -1;
    std::int64_t rounds = -1;
    std::int64_t workers = -1;
};

int run_command(const RunOptions& opts) {
    fedhpl::ExperimentConfig cfg;
    try {
        cfg = fedhpl::parse_config(opts.config_path);
        if (opts.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(opts.seed);
        if (opts.rounds >= 0) cfg.rounds = static_cast<std::size_t>(opts.rounds);
        if (opts.workers >= 0) cfg.workers = static_cast<std::size_t>(opts.workers);
        if (!opts.policy.empty()) cfg.policy = fedhpl::policy_from_name(opts.policy);
        if (!opts.upload_mode.empty()) {
            cfg.upload_mode = fedhpl::upload_mode_from_name(opts.upload_mode);
        }
        if (opts.seed >= 0) {
            // A new master seed re-derives every unset stream seed.
            cfg.partition_seed_set = false;
            cfg.dataset.seed_set = false;
            for (auto& client : cfg.clients) client.seed_set = false;
        }
        if (cfg.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
        fedhpl::finalize_config(cfg);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        const auto result = fedhpl::run_experiment(cfg, opts.out_dir);
        if (!opts.out_dir.empty()) {
            fedhpl::emit_results(result.rounds, cfg, opts.out_dir);
            std::ofstream manifest(std::filesystem::path(opts.out_dir) / "partition.json");
            manifest << fedhpl::partition_manifest_json(result.partition) << "\n";
        }
        const auto& final_round = result.rounds.back();
        std::printf("completed %zu rounds over %zu clients\n", result.rounds.size(),
                    final_round.clients.size());
        std::printf("final accuracy  lowest %.4f  average %.4f  highest %.4f\n",
                    final_round.lowest_accuracy, final_round.average_accuracy,
                    final_round.highest_accuracy);
        return kExitOk;
    } catch (const fedhpl::RunError& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        if (!opts.out_dir.empty() && !e.partial_rounds.empty()) {
            fedhpl::emit_results(e.partial_rounds, cfg, opts.out_dir);
            std::cerr << "partial results for " << e.partial_rounds.size()
                      << " completed rounds written to " << opts.out_dir << "\n";
        }
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int validate_command(const std::string& config_path) {
    try {
        const auto cfg = fedhpl::parse_config(config_path);
        std::printf("ok: %zu clients, %zu rounds, policy %s, upload %s\n", cfg.clients.size(),
                    cfg.rounds, fedhpl::policy_name(cfg.policy).c_str(),
                    fedhpl::upload_mode_name(cfg.upload_mode).c_str());
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    }
}

int inspect_command(const std::string& results_dir) {
    const std::filesystem::path path = std::filesystem::path(results_dir) / "metrics.jsonl";
    std::ifstream in(path);
    if (!in) {
        std::cerr << "inspect: cannot open " << path.string() << "\n";
        return kExitRuntime;
    }
    std::printf("%-6s  %-8s  %-8s  %-8s\n", "round", "lowest", "average", "highest");
    std::string line;
    fedhpl::RoundMetrics last;
    bool any = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            last = fedhpl::round_metrics_from_json(line);
            any = true;
            std::printf("%-6d  %-8.4f  %-8.4f  %-8.4f\n", last.round, last.lowest_accuracy,
                        last.average_accuracy, last.highest_accuracy);
        }
    } catch (const std::exception& e) {
        std::cerr << "inspect: malformed metrics line: " << e.what() << "\n";
        return kExitRuntime;
    }
    if (!any) {
        std::cerr << "inspect: no rounds recorded in " << path.string() << "\n";
        return kExitRuntime;
    }
    std::printf("final   %.4f / %.4f / %.4f over %zu clients\n", last.lowest_accuracy,
                last.average_accuracy, last.highest_accuracy, last.clients.size());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated prompt-tuning simulator with weighted logit distillation"};
    app.require_subcommand(1);

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "Run an experiment from a config file");
    run->add_option("--config", run_opts.config_path, "Experiment config file")->required();
    run->add_option("--out", run_opts.out_dir, "Directory for metrics and config snapshot");
    run->add_option("--seed", run_opts.seed, "Override master seed");
    run->add_option("--policy", run_opts.policy,
                    "Override policy (local_only|fedhpl|fedhpl_plus_prompts|fedhpl_plus_heads)");
    run->add_option("--rounds", run_opts.rounds, "Override number of global rounds");
    run->add_option("--upload-mode", run_opts.upload_mode, "Override upload mode (full|summary)");
    run->add_option("--workers", run_opts.workers, "Override client worker count");

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Validate a config file");
    validate->add_option("--config", validate_path, "Experiment config file")->required();

    std::string results_dir;
    auto* inspect = app.add_subcommand("inspect", "Print the accuracy table of a results dir");
    inspect->add_option("--results", results_dir, "Directory written by run --out")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    if (run->parsed()) return run_command(run_opts);
    if (validate->parsed()) return validate_command(validate_path);
    return inspect_command(results_dir);
}
