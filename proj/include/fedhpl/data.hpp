#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fedhpl {

struct Sample {
    std::vector<double> features;
    int label = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    std::size_t n_c = 0;
    std::size_t feature_dim = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

enum class PartitionScheme { kIid, kDirOverlap, kNonIidDisjoint };

std::string partition_scheme_name(PartitionScheme scheme);
PartitionScheme partition_scheme_from_name(const std::string& name);

struct PartitionSpec {
    PartitionScheme scheme = PartitionScheme::kIid;
    std::size_t num_clients = 1;
    double alpha = 0.5;          // Dirichlet concentration (DirOverlap / NonIID)
    double min_fraction = 0.01;  // per-client floor as a fraction of |ds|
    std::uint64_t seed = 0;
};

// Index-level partition so shards can be audited and re-materialized.
struct Partition {
    std::vector<std::vector<std::size_t>> client_indices;
};

// Seeded Gaussian class blobs: class c gets a random mean, samples add
// isotropic noise. feature_dim must equal patch_count * input_dim.
Dataset gen_synthetic(std::size_t n_c, std::size_t per_class, std::size_t feature_dim,
                      std::size_t patch_count, std::size_t input_dim, double noise,
                      std::uint64_t seed);

// Held-out companion set: identical class means to gen_synthetic(seed) but an
// independent noise stream, so it never overlaps the training draw.
Dataset gen_synthetic_test(std::size_t n_c, std::size_t per_class, std::size_t feature_dim,
                           std::size_t patch_count, std::size_t input_dim, double noise,
                           std::uint64_t seed);

// CSV rows of comma-separated floats with a final integer label column.
// Features are normalized per column to zero mean / unit variance (std
// floored at 1e-12). Parse errors carry the 1-based row number.
Dataset load_csv(const std::string& path, std::size_t n_c);

Partition partition(const Dataset& ds, const PartitionSpec& spec);

std::vector<Dataset> materialize(const Dataset& ds, const Partition& parts);

// JSON manifest {"clients": [[indices...], ...]} for reproducibility audits.
std::string partition_manifest_json(const Partition& parts);

std::vector<std::size_t> class_counts(const Dataset& ds);

}  // namespace fedhpl
