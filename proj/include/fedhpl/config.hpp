#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedhpl/data.hpp"
#include "fedhpl/federation.hpp"
#include "fedhpl/losses.hpp"
#include "fedhpl/model.hpp"

namespace fedhpl {

enum class Policy { kLocalOnly, kFedhpl, kFedhplPlusPrompts, kFedhplPlusHeads };

std::string policy_name(Policy policy);
Policy policy_from_name(const std::string& name);

struct ClientConfig {
    BackboneSpec spec;
    InsertionMode mode = InsertionMode::kDeep;
    std::size_t prompt_len = 3;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t pretext_steps = 0;
};

struct DatasetConfig {
    enum class Source { kSynthetic, kCsv };
    Source source = Source::kSynthetic;
    std::size_t classes = 10;
    std::size_t per_class = 100;
    // Size of the shared balanced test set drawn beside the training pool;
    // 0 means no global test set and clients score on their held-out split.
    std::size_t test_per_class = 0;
    std::size_t patch_count = 4;
    std::size_t patch_dim = 12;
    double noise = 0.3;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string csv_path;
};

struct ExperimentConfig {
    std::size_t rounds = 10;        // T
    std::size_t local_epochs = 1;   // T_c
    std::size_t batch_size = 16;    // bs
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    LossConfig loss;
    Policy policy = Policy::kFedhpl;
    UploadMode upload_mode = UploadMode::kFull;
    double eval_split_fraction = 0.2;
    std::uint64_t master_seed = 1;
    std::size_t workers = 1;
    bool log_rounds = false;

    DatasetConfig dataset;
    PartitionSpec partition;
    bool partition_seed_set = false;
    std::vector<ClientConfig> clients;
};

// Parses the key = value / [section] experiment file, applies defaults,
// validates every invariant, and resolves derived seeds. Unknown keys are
// rejected with a spelling suggestion; every error names its key path.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Re-checks invariants after programmatic edits (CLI overrides) and
// re-resolves any unset derived seeds.
void finalize_config(ExperimentConfig& cfg);

// Resolved snapshot of the configuration, suitable for re-running.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace fedhpl
