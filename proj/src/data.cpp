#include "fedhpl/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "fedhpl/rng.hpp"

namespace fedhpl {

std::string partition_scheme_name(PartitionScheme scheme) {
    switch (scheme) {
        case PartitionScheme::kIid: return "iid";
        case PartitionScheme::kDirOverlap: return "dir";
        case PartitionScheme::kNonIidDisjoint: return "noniid";
    }
    return "iid";
}

PartitionScheme partition_scheme_from_name(const std::string& name) {
    if (name == "iid") return PartitionScheme::kIid;
    if (name == "dir") return PartitionScheme::kDirOverlap;
    if (name == "noniid") return PartitionScheme::kNonIidDisjoint;
    throw std::invalid_argument("unknown partition scheme '" + name +
                                "' (expected iid|dir|noniid)");
}

namespace {

Dataset gen_blobs(std::size_t n_c, std::size_t per_class, std::size_t feature_dim,
                  std::size_t patch_count, std::size_t input_dim, double noise,
                  std::uint64_t seed, std::string_view noise_tag) {
    if (per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be >= 1");
    if (n_c < 1) throw std::invalid_argument("gen_synthetic: n_c must be >= 1");
    if (feature_dim != patch_count * input_dim) {
        throw std::invalid_argument("gen_synthetic: feature_dim " + std::to_string(feature_dim) +
                                    " != patch_count*input_dim " +
                                    std::to_string(patch_count * input_dim));
    }
    Rng mean_rng(derive_seed(seed, "class-means"));
    std::vector<std::vector<double>> means(n_c, std::vector<double>(feature_dim));
    for (auto& m : means) {
        for (auto& v : m) v = mean_rng.normal();
    }
    Dataset ds;
    ds.n_c = n_c;
    ds.feature_dim = feature_dim;
    ds.samples.reserve(n_c * per_class);
    for (std::size_t c = 0; c < n_c; ++c) {
        Rng rng(derive_seed(seed, noise_tag, static_cast<std::uint64_t>(c)));
        for (std::size_t i = 0; i < per_class; ++i) {
            Sample s;
            s.label = static_cast<int>(c);
            s.features.resize(feature_dim);
            for (std::size_t d = 0; d < feature_dim; ++d) {
                s.features[d] = means[c][d] + noise * rng.normal();
            }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

}  // namespace

Dataset gen_synthetic(std::size_t n_c, std::size_t per_class, std::size_t feature_dim,
                      std::size_t patch_count, std::size_t input_dim, double noise,
                      std::uint64_t seed) {
    return gen_blobs(n_c, per_class, feature_dim, patch_count, input_dim, noise, seed,
                     "class-noise");
}

Dataset gen_synthetic_test(std::size_t n_c, std::size_t per_class, std::size_t feature_dim,
                           std::size_t patch_count, std::size_t input_dim, double noise,
                           std::uint64_t seed) {
    return gen_blobs(n_c, per_class, feature_dim, patch_count, input_dim, noise, seed,
                     "test-noise");
}

Dataset load_csv(const std::string& path, std::size_t n_c) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("load_csv: cannot open " + path);
    Dataset ds;
    ds.n_c = n_c;
    std::string line;
    std::size_t row = 0;
    while (std::getline(file, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double value = 0.0;
            try {
                value = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: row " + std::to_string(row) +
                                         ": non-numeric cell '" + cell + "'");
            }
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                ++used;
            if (used != cell.size()) {
                throw std::runtime_error("load_csv: row " + std::to_string(row) +
                                         ": non-numeric cell '" + cell + "'");
            }
            cells.push_back(value);
        }
        if (cells.size() < 2) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) +
                                     ": need at least one feature and a label");
        }
        const double raw_label = cells.back();
        cells.pop_back();
        if (raw_label != std::floor(raw_label) || raw_label < 0.0 ||
            raw_label >= static_cast<double>(n_c)) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) + ": label " +
                                     std::to_string(raw_label) + " outside [0, " +
                                     std::to_string(n_c) + ")");
        }
        if (ds.samples.empty()) {
            ds.feature_dim = cells.size();
        } else if (cells.size() != ds.feature_dim) {
            throw std::runtime_error("load_csv: row " + std::to_string(row) + ": expected " +
                                     std::to_string(ds.feature_dim) + " features, got " +
                                     std::to_string(cells.size()));
        }
        ds.samples.push_back(Sample{std::move(cells), static_cast<int>(raw_label)});
    }
    if (ds.samples.empty()) throw std::runtime_error("load_csv: " + path + " holds no samples");

    // Column-wise standardization over the whole file.
    for (std::size_t d = 0; d < ds.feature_dim; ++d) {
        double mean = 0.0;
        for (const auto& s : ds.samples) mean += s.features[d];
        mean /= static_cast<double>(ds.size());
        double var = 0.0;
        for (const auto& s : ds.samples) {
            const double delta = s.features[d] - mean;
            var += delta * delta;
        }
        var /= static_cast<double>(ds.size());
        const double denom = std::max(std::sqrt(var), 1e-12);
        for (auto& s : ds.samples) s.features[d] = (s.features[d] - mean) / denom;
    }
    return ds;
}

std::vector<std::size_t> class_counts(const Dataset& ds) {
    std::vector<std::size_t> counts(ds.n_c, 0);
    for (const auto& s : ds.samples) counts.at(static_cast<std::size_t>(s.label)) += 1;
    return counts;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> pools(ds.n_c);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        pools[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
    }
    return pools;
}

// Splits `total` into proportional integer counts that sum to total
// (floor allocation, remainders to the largest fractional parts).
std::vector<std::size_t> proportional_counts(const std::vector<double>& q, std::size_t total) {
    const std::size_t k = q.size();
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = q[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainders[i] = {exact - std::floor(exact), i};
        assigned += counts[i];
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
        counts[remainders[i % k].second] += 1;
    }
    return counts;
}

Partition partition_iid(const Dataset& ds, const PartitionSpec& spec, Rng& rng) {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Partition parts;
    parts.client_indices.resize(spec.num_clients);
    const std::size_t base = ds.size() / spec.num_clients;
    const std::size_t extra = ds.size() % spec.num_clients;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < spec.num_clients; ++k) {
        const std::size_t take = base + (k < extra ? 1 : 0);
        parts.client_indices[k].assign(order.begin() + cursor, order.begin() + cursor + take);
        cursor += take;
    }
    return parts;
}

Partition draw_dir_overlap(const Dataset& ds, const PartitionSpec& spec, Rng& rng) {
    const auto pools = indices_by_class(ds);
    const std::size_t target = ds.size() / spec.num_clients;
    Partition parts;
    parts.client_indices.resize(spec.num_clients);
    for (std::size_t k = 0; k < spec.num_clients; ++k) {
        const auto q = rng.dirichlet(spec.alpha, ds.n_c);
        for (std::size_t c = 0; c < ds.n_c; ++c) {
            const auto want = static_cast<std::size_t>(
                std::floor(q[c] * static_cast<double>(target)));
            const std::size_t take = std::min(want, pools[c].size());
            if (take == 0) continue;
            std::vector<std::size_t> pool = pools[c];
            rng.shuffle(pool);
            parts.client_indices[k].insert(parts.client_indices[k].end(), pool.begin(),
                                           pool.begin() + take);
        }
        std::sort(parts.client_indices[k].begin(), parts.client_indices[k].end());
    }
    return parts;
}

Partition draw_noniid(const Dataset& ds, const PartitionSpec& spec, Rng& rng) {
    const auto pools = indices_by_class(ds);
    Partition parts;
    parts.client_indices.resize(spec.num_clients);
    for (std::size_t c = 0; c < ds.n_c; ++c) {
        if (pools[c].empty()) continue;
        const auto q = rng.dirichlet(spec.alpha, spec.num_clients);
        const auto counts = proportional_counts(q, pools[c].size());
        std::vector<std::size_t> pool = pools[c];
        rng.shuffle(pool);
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < spec.num_clients; ++k) {
            parts.client_indices[k].insert(parts.client_indices[k].end(), pool.begin() + cursor,
                                           pool.begin() + cursor + counts[k]);
            cursor += counts[k];
        }
    }
    for (auto& shard : parts.client_indices) std::sort(shard.begin(), shard.end());
    return parts;
}

std::size_t min_shard(const Partition& parts) {
    std::size_t lo = std::numeric_limits<std::size_t>::max();
    for (const auto& shard : parts.client_indices) lo = std::min(lo, shard.size());
    return lo;
}

// Moves samples from the largest shards to deficient ones until every client
// holds at least min_count. Only used after the redraw budget is exhausted.
// Disjoint schemes stay disjoint (indices only change owners); for the
// overlap scheme the receiver never gains a duplicate.
void clamp_to_minimum(Partition& parts, std::size_t min_count, Rng& rng) {
    for (;;) {
        std::size_t needy = parts.client_indices.size();
        for (std::size_t k = 0; k < parts.client_indices.size(); ++k) {
            if (parts.client_indices[k].size() < min_count) {
                needy = k;
                break;
            }
        }
        if (needy == parts.client_indices.size()) return;
        std::size_t donor = 0;
        for (std::size_t k = 1; k < parts.client_indices.size(); ++k) {
            if (parts.client_indices[k].size() > parts.client_indices[donor].size()) donor = k;
        }
        if (parts.client_indices[donor].size() <= min_count) return;  // nothing left to move
        auto& from = parts.client_indices[donor];
        auto& to = parts.client_indices[needy];
        const std::size_t start = rng.uniform_index(from.size());
        std::size_t pick = from.size();
        for (std::size_t offset = 0; offset < from.size(); ++offset) {
            const std::size_t candidate = (start + offset) % from.size();
            if (std::find(to.begin(), to.end(), from[candidate]) == to.end()) {
                pick = candidate;
                break;
            }
        }
        if (pick == from.size()) return;  // donor holds nothing the receiver lacks
        to.push_back(from[pick]);
        from.erase(from.begin() + static_cast<std::ptrdiff_t>(pick));
    }
}

}  // namespace

Partition partition(const Dataset& ds, const PartitionSpec& spec) {
    if (ds.empty()) throw std::invalid_argument("partition: empty dataset");
    if (spec.num_clients < 1) throw std::invalid_argument("partition: need at least one client");
    if (spec.min_fraction < 0.0 ||
        static_cast<double>(spec.num_clients) * spec.min_fraction > 1.0) {
        throw std::invalid_argument("partition: impossible min_fraction " +
                                    std::to_string(spec.min_fraction) + " for " +
                                    std::to_string(spec.num_clients) + " clients");
    }
    if (spec.scheme != PartitionScheme::kIid && !(spec.alpha > 0.0)) {
        throw std::invalid_argument("partition: alpha must be positive");
    }
    const auto min_count =
        static_cast<std::size_t>(std::floor(spec.min_fraction * static_cast<double>(ds.size())));

    Rng rng(derive_seed(spec.seed, "partition"));
    Partition parts;
    for (int attempt = 0; attempt < 100; ++attempt) {
        switch (spec.scheme) {
            case PartitionScheme::kIid: parts = partition_iid(ds, spec, rng); break;
            case PartitionScheme::kDirOverlap: parts = draw_dir_overlap(ds, spec, rng); break;
            case PartitionScheme::kNonIidDisjoint: parts = draw_noniid(ds, spec, rng); break;
        }
        if (min_shard(parts) >= min_count) return parts;
    }
    clamp_to_minimum(parts, min_count, rng);
    return parts;
}

std::vector<Dataset> materialize(const Dataset& ds, const Partition& parts) {
    std::vector<Dataset> shards;
    shards.reserve(parts.client_indices.size());
    for (const auto& indices : parts.client_indices) {
        Dataset shard;
        shard.n_c = ds.n_c;
        shard.feature_dim = ds.feature_dim;
        shard.samples.reserve(indices.size());
        for (std::size_t i : indices) shard.samples.push_back(ds.samples.at(i));
        shards.push_back(std::move(shard));
    }
    return shards;
}

std::string partition_manifest_json(const Partition& parts) {
    nlohmann::json manifest;
    manifest["clients"] = parts.client_indices;
    return manifest.dump();
}

}  // namespace fedhpl
