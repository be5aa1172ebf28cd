#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedhpl/config.hpp"
#include "fedhpl/data.hpp"
#include "fedhpl/model.hpp"

namespace fedhpl {

struct ClientRoundMetrics {
    int client_id = 0;
    double train_loss = 0.0;
    double ce_loss = 0.0;
    double kd_loss = 0.0;
    double test_accuracy = 0.0;
    std::vector<std::optional<double>> per_class_accuracy;  // absent when class unseen
    std::uint64_t upload_bytes = 0;
};

struct RoundMetrics {
    int round = 0;
    std::vector<ClientRoundMetrics> clients;
    double lowest_accuracy = 0.0;
    double average_accuracy = 0.0;
    double highest_accuracy = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::optional<double>> per_class;
};

// Argmax accuracy (ties to the lowest index) plus per-class accuracies;
// classes with no samples are absent, not zero.
EvalResult evaluate(const ClientModel& model, const Dataset& ds);

// Same scoring against an arbitrary predictor (used by tests).
EvalResult evaluate_with(const std::function<std::vector<double>(const std::vector<double>&)>& fn,
                         const Dataset& ds);

struct RunResult {
    std::vector<RoundMetrics> rounds;
    Partition partition;  // index-level shard assignment, for audits
    std::vector<std::uint64_t> initial_backbone_hashes;
    std::vector<std::uint64_t> final_backbone_hashes;
};

// Failure inside a round; carries the metrics of the rounds that completed.
struct RunError : std::runtime_error {
    RunError(const std::string& message, int round, int client_id,
             std::vector<RoundMetrics> partial)
        : std::runtime_error(message), round(round), client_id(client_id),
          partial_rounds(std::move(partial)) {}

    int round = 0;
    int client_id = -1;
    std::vector<RoundMetrics> partial_rounds;
};

// Runs the full round loop: local prompt tuning per client, correct-logit
// collection, server aggregation, and optional homogeneous-parameter
// averaging. log_dir, when nonempty and cfg.log_rounds is set, receives a
// rounds.jsonl with every wire payload and response.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& log_dir = "");

std::string round_metrics_to_json(const RoundMetrics& metrics);
RoundMetrics round_metrics_from_json(const std::string& text);

// Writes metrics.jsonl, summary.csv and config.json (temp-file + rename).
void emit_results(const std::vector<RoundMetrics>& rounds, const ExperimentConfig& cfg,
                  const std::string& out_dir);

}  // namespace fedhpl
