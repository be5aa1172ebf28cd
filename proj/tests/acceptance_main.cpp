// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion pins its tolerance in code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedhpl/config.hpp"
#include "fedhpl/data.hpp"
#include "fedhpl/experiment.hpp"
#include "fedhpl/federation.hpp"
#include "fedhpl/losses.hpp"
#include "fedhpl/model.hpp"
#include "fedhpl/rng.hpp"
#include "fedhpl/tensor.hpp"

using namespace fedhpl;
namespace adx = fedhpl::ad;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void fail(const std::string& message) {
        pass = false;
        if (detail.empty()) detail = message;
    }
};

std::vector<double> random_logits(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-3.0, 3.0);
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return dot / std::sqrt(na * nb);
}

// ---- 1. compression equivalence ---------------------------------------------

Outcome compression_equivalence() {
    Outcome out;
    const std::vector<std::vector<std::size_t>> dim_pool = {
        {384}, {384, 768, 1024}, {384, 768, 1024, 768, 384}};
    Rng rng(derive_seed(1001, "acceptance-compression"));
    for (int trial = 0; trial < 200; ++trial) {
        const auto& dims = dim_pool[static_cast<std::size_t>(trial) % dim_pool.size()];
        const std::size_t n_c = 2 + rng.uniform_index(9);
        std::vector<std::vector<LogitRecord>> records(dims.size());
        std::vector<std::vector<ClassSummary>> summaries(dims.size());
        std::vector<ClientMeta> metas(dims.size());
        for (std::size_t j = 0; j < dims.size(); ++j) {
            metas[j].client_id = static_cast<int>(j);
            metas[j].embed_dim = dims[j];
            const std::size_t count = rng.uniform_index(40);
            for (std::size_t i = 0; i < count; ++i) {
                records[j].push_back(LogitRecord{static_cast<int>(j), random_logits(rng, n_c),
                                                 static_cast<int>(rng.uniform_index(n_c))});
            }
            summaries[j] = summarize(records[j], n_c);
        }
        const auto full = aggregate_full(records, metas, n_c);
        const auto compressed = aggregate_summaries(summaries, metas, n_c);
        for (std::size_t k = 0; k < dims.size(); ++k) {
            for (std::size_t c = 0; c < n_c; ++c) {
                const auto& a = full.per_client[k].rows[c];
                const auto& b = compressed.per_client[k].rows[c];
                if (a.present != b.present) {
                    out.fail("presence mismatch, trial " + std::to_string(trial));
                }
                for (std::size_t i = 0; i < n_c; ++i) {
                    if (std::abs(a.logits[i] - b.logits[i]) > 1e-9) {
                        out.fail("coordinate gap " + std::to_string(a.logits[i] - b.logits[i]) +
                                 " at trial " + std::to_string(trial));
                    }
                }
                if (cosine(a.logits, b.logits) < 1.0 - 1e-12) {
                    out.fail("cosine below bound at trial " + std::to_string(trial));
                }
            }
        }
    }
    if (out.pass) out.detail = "200 multisets, K in {1,3,5}, coordinate gap <= 1e-9";
    return out;
}

// ---- 2. distillation decomposition identity ----------------------------------

Outcome kd_decomposition_identity() {
    Outcome out;
    Rng rng(derive_seed(1002, "acceptance-kd"));
    const std::vector<double> temperatures = {1.5, 3.0, 4.5, 5.0};
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n_c = 2 + rng.uniform_index(9);
        const auto global = random_logits(rng, n_c);
        const auto local = random_logits(rng, n_c);
        const double temperature = temperatures[static_cast<std::size_t>(trial) % 4];
        const double direct = kd_loss(global, local, temperature);
        const auto parts = kd_decompose(global, local, temperature);
        const double gap = std::abs(direct - (parts.cross_entropy - parts.entropy));
        worst = std::max(worst, gap);
        if (gap > 1e-12) out.fail("gap " + std::to_string(gap) + " at trial " + std::to_string(trial));
    }
    if (out.pass) {
        std::ostringstream detail;
        detail << "10000 pairs, T in {1.5,3,4.5,5}, worst gap " << worst;
        out.detail = detail.str();
    }
    return out;
}

// ---- 3. end-to-end gradient correctness --------------------------------------

Outcome objective_gradient_check() {
    Outcome out;
    const std::size_t n_c = 4;
    BackboneSpec spec;
    spec.num_layers = 2;
    spec.embed_dim = 16;
    spec.num_heads = 2;
    spec.patch_count = 4;
    spec.input_dim = 3;
    auto model = init_client_model(spec, n_c, InsertionMode::kDeep, 3, 4242);
    Rng rng(derive_seed(1003, "acceptance-grad"));
    for (auto& v : model.head_weight.values()) v = 0.2 * rng.normal();
    for (auto& v : model.head_bias.values()) v = 0.05 * rng.normal();

    const auto data = gen_synthetic(n_c, 2, 12, 4, 3, 0.4, 31);
    ClientLogitTable table;
    table.rows.resize(n_c);
    for (std::size_t c = 0; c + 1 < n_c; ++c) {  // leave one class absent (fallback path)
        table.rows[c].present = true;
        table.rows[c].logits = random_logits(rng, n_c);
    }
    const LossConfig cfg{1.0, 4.5};

    std::vector<int> labels;
    for (const auto& s : data.samples) labels.push_back(s.label);
    const auto objective = [&](adx::Tape& tape) {
        std::vector<adx::Tensor> logits;
        for (const auto& s : data.samples) logits.push_back(forward(model, tape, s.features));
        return total_objective_node(tape, logits, labels, &table, cfg);
    };

    adx::Tape tape;
    tape.backward(objective(tape));

    double max_err = 0.0;
    const auto probe = [&](const adx::Tensor& target, std::size_t coords) {
        const auto analytic = target.grad();
        for (std::size_t p = 0; p < coords; ++p) {
            const std::size_t idx = rng.uniform_index(target.size());
            const double original = target.values()[idx];
            const double h = 1e-5;
            target.node()->values[idx] = original + h;
            adx::Tape up_tape;
            const double up = objective(up_tape).item();
            target.node()->values[idx] = original - h;
            adx::Tape down_tape;
            const double down = objective(down_tape).item();
            target.node()->values[idx] = original;
            const double fd = (up - down) / (2.0 * h);
            max_err = std::max(max_err,
                               std::abs(analytic[idx] - fd) / (std::abs(analytic[idx]) + 1e-12));
        }
    };
    probe(model.prompts[0], 5);
    probe(model.prompts[1], 5);
    probe(model.head_weight, 7);
    probe(model.head_bias, 3);

    std::ostringstream detail;
    detail << "20 coordinates on a 2-layer d=16 model, max relative error " << max_err;
    out.detail = detail.str();
    if (!(max_err < 1e-4)) {
        out.pass = false;
    }
    return out;
}

// ---- shared config for the round-loop criteria --------------------------------

ExperimentConfig desk_config(std::uint64_t master_seed, Policy policy) {
    auto cfg = parse_config_text(R"(
[experiment]
rounds = 10
local_epochs = 1
batch_size = 16
policy = fedhpl

[dataset]
source = synthetic
classes = 10
per_class = 100
test_per_class = 20
patch_count = 4
patch_dim = 12
noise = 1.0

[partition]
scheme = noniid
alpha = 0.5
min_fraction = 0.01

[client.1]
layers = 2
embed_dim = 16
heads = 2

[client.2]
layers = 2
embed_dim = 32
heads = 2

[client.3]
layers = 2
embed_dim = 48
heads = 2

[client.4]
layers = 2
embed_dim = 32
heads = 2

[client.5]
layers = 2
embed_dim = 16
heads = 2
)");
    cfg.master_seed = master_seed;
    cfg.policy = policy;
    cfg.partition_seed_set = false;
    cfg.dataset.seed_set = false;
    for (auto& client : cfg.clients) client.seed_set = false;
    finalize_config(cfg);
    return cfg;
}

// ---- 4. frozen backbone invariant ---------------------------------------------

Outcome frozen_backbone_run() {
    Outcome out;
    auto cfg = desk_config(21, Policy::kFedhpl);
    cfg.rounds = 5;
    const auto result = run_experiment(cfg);
    if (result.initial_backbone_hashes != result.final_backbone_hashes) {
        out.fail("a backbone hash changed during the run");
    }
    if (out.pass) out.detail = "5 clients x 5 rounds, all backbone hashes unchanged";
    return out;
}

// ---- 5. parameter-count formulas ----------------------------------------------

Outcome param_count_grid() {
    Outcome out;
    for (const std::size_t d : {16u, 32u, 384u}) {
        for (const std::size_t layers : {2u, 4u, 12u}) {
            for (const std::size_t n : {1u, 3u, 10u}) {
                for (const std::size_t n_c : {2u, 10u, 100u}) {
                    for (const auto mode : {InsertionMode::kShallow, InsertionMode::kDeep}) {
                        const auto formula = param_count_formula(d, layers, n, n_c, mode);
                        const auto extents = trainable_tensor_extents(d, layers, n, n_c, mode);
                        const std::size_t enumerated =
                            std::accumulate(extents.begin(), extents.end(), std::size_t{0});
                        if (formula.total != enumerated) {
                            out.fail("formula " + std::to_string(formula.total) +
                                     " != enumeration " + std::to_string(enumerated));
                        }
                    }
                }
            }
        }
    }
    // ViT-S/16 shallow instance: head 3850 plus 384 per prompt token.
    for (const std::size_t n : {1u, 3u, 10u}) {
        const auto count = param_count_formula(384, 12, n, 10, InsertionMode::kShallow);
        if (count.head_params != 3850 || count.prompt_params != 384 * n) {
            out.fail("ViT-S shallow instance mismatch at n=" + std::to_string(n));
        }
    }
    if (out.pass) out.detail = "162-cell grid matches enumeration; ViT-S shallow = 3850 + 384n";
    return out;
}

// ---- 6. directional collaboration benefit -------------------------------------

Outcome collaboration_benefit() {
    Outcome out;
    double fed_total = 0.0, local_total = 0.0;
    int fed_wins = 0;
    std::ostringstream detail;
    detail.precision(4);
    for (const std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        const auto fed = run_experiment(desk_config(seed, Policy::kFedhpl));
        const auto local = run_experiment(desk_config(seed, Policy::kLocalOnly));
        const double fed_acc = fed.rounds.back().average_accuracy;
        const double local_acc = local.rounds.back().average_accuracy;
        fed_total += fed_acc;
        local_total += local_acc;
        if (fed_acc >= local_acc) ++fed_wins;
        detail << " seed " << seed << ": fedhpl " << fed_acc << " vs local " << local_acc << ";";
    }
    const double fed_mean = fed_total / 3.0;
    const double local_mean = local_total / 3.0;
    if (!(fed_mean >= local_mean - 0.01)) {
        out.fail("mean accuracy dropped more than 1 point:" + detail.str());
    }
    if (fed_wins < 2) {
        out.fail("fedhpl >= local in only " + std::to_string(fed_wins) + "/3 seeds:" +
                 detail.str());
    }
    if (out.pass) {
        std::ostringstream summary;
        summary.precision(4);
        summary << "mean fedhpl " << fed_mean << " vs local " << local_mean << ", wins "
                << fed_wins << "/3;" << detail.str();
        out.detail = summary.str();
    }
    return out;
}

// ---- 7. partition statistics ---------------------------------------------------

Outcome partition_statistics() {
    Outcome out;
    const Dataset ds = gen_synthetic(10, 100, 48, 4, 12, 0.3, 77);

    // Exact disjointness.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PartitionSpec spec;
        spec.scheme = PartitionScheme::kNonIidDisjoint;
        spec.num_clients = 5;
        spec.alpha = 0.5;
        spec.min_fraction = 0.0;
        spec.seed = seed;
        const auto parts = partition(ds, spec);
        std::vector<bool> seen(ds.size(), false);
        std::size_t covered = 0;
        for (const auto& shard : parts.client_indices) {
            for (auto i : shard) {
                if (seen[i]) out.fail("index " + std::to_string(i) + " appears twice");
                seen[i] = true;
                ++covered;
            }
        }
        if (covered != ds.size()) out.fail("shards do not cover the dataset");
    }

    // Skew ordering over 50 seeds.
    const auto mean_max_proportion = [&](double alpha) {
        double total = 0.0;
        std::size_t measured = 0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            PartitionSpec spec;
            spec.scheme = PartitionScheme::kNonIidDisjoint;
            spec.num_clients = 5;
            spec.alpha = alpha;
            spec.min_fraction = 0.0;
            spec.seed = derive_seed(seed, "skew");
            const auto shards = materialize(ds, partition(ds, spec));
            for (const auto& shard : shards) {
                if (shard.empty()) continue;
                const auto counts = class_counts(shard);
                total += static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                         static_cast<double>(shard.size());
                ++measured;
            }
        }
        return total / static_cast<double>(measured);
    };
    const double skew_01 = mean_max_proportion(0.1);
    const double skew_10 = mean_max_proportion(10.0);
    if (!(skew_01 > skew_10)) {
        out.fail("mean max proportion at alpha 0.1 (" + std::to_string(skew_01) +
                 ") not above alpha 10 (" + std::to_string(skew_10) + ")");
    }
    if (out.pass) {
        std::ostringstream detail;
        detail.precision(4);
        detail << "disjoint shards; mean max class share " << skew_01 << " (alpha 0.1) > "
               << skew_10 << " (alpha 10) over 50 seeds";
        out.detail = detail.str();
    }
    return out;
}

// ---- 8. communication accounting -----------------------------------------------

Outcome communication_accounting() {
    Outcome out;

    // Summary mode: bytes constant per client across rounds.
    auto summary_cfg = desk_config(11, Policy::kFedhpl);
    summary_cfg.rounds = 4;
    summary_cfg.upload_mode = UploadMode::kSummary;
    const auto summary_run = run_experiment(summary_cfg);
    const std::uint64_t expected = 8ULL * (10 + 1) * 10;
    for (const auto& round : summary_run.rounds) {
        for (const auto& client : round.clients) {
            if (client.upload_bytes != expected) {
                out.fail("summary bytes " + std::to_string(client.upload_bytes) + " != constant " +
                         std::to_string(expected));
            }
        }
    }

    // Full mode on an easy run: correct counts only grow, so must the bytes.
    auto full_cfg = desk_config(12, Policy::kFedhpl);
    full_cfg.rounds = 6;
    full_cfg.upload_mode = UploadMode::kFull;
    full_cfg.dataset.noise = 0.05;  // trivially separable blobs
    full_cfg.partition.scheme = PartitionScheme::kIid;
    const auto full_run = run_experiment(full_cfg);
    for (std::size_t k = 0; k < full_run.rounds.front().clients.size(); ++k) {
        std::uint64_t previous = 0;
        for (const auto& round : full_run.rounds) {
            const auto bytes = round.clients[k].upload_bytes;
            if (bytes % (8ULL * 11) != 0) out.fail("bytes not a whole number of records");
            if (bytes < previous) {
                out.fail("client " + std::to_string(k) + " bytes fell from " +
                         std::to_string(previous) + " to " + std::to_string(bytes));
            }
            previous = bytes;
        }
    }
    if (out.pass) {
        out.detail = "summary mode constant " + std::to_string(expected) +
                     " bytes; full-mode bytes nondecreasing on the improving run";
    }
    return out;
}

// ---- 9. scheduling independence ------------------------------------------------

Outcome scheduling_independence() {
    Outcome out;
    auto sequential = desk_config(31, Policy::kFedhpl);
    sequential.rounds = 4;
    sequential.workers = 1;
    auto parallel = sequential;
    parallel.workers = 4;

    const auto a = run_experiment(sequential);
    const auto b = run_experiment(parallel);

    const std::string dir_a = "/tmp/fedhpl_acceptance_seq";
    const std::string dir_b = "/tmp/fedhpl_acceptance_par";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    emit_results(a.rounds, sequential, dir_a);
    emit_results(b.rounds, parallel, dir_b);

    const auto slurp = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        std::stringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    };
    const auto bytes_a = slurp(dir_a + "/metrics.jsonl");
    const auto bytes_b = slurp(dir_b + "/metrics.jsonl");
    if (bytes_a.empty() || bytes_a != bytes_b) {
        out.fail("sequential and parallel metrics.jsonl differ");
    }
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    if (out.pass) {
        out.detail = "1-worker and 4-worker runs emit byte-identical metrics.jsonl (" +
                     std::to_string(bytes_a.size()) + " bytes)";
    }
    return out;
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {"compression equivalence of full and summary uploads", compression_equivalence},
        {"distillation loss decomposition identity", kd_decomposition_identity},
        {"finite-difference check of the training objective", objective_gradient_check},
        {"frozen backbone invariant over a federated run", frozen_backbone_run},
        {"trainable parameter-count formulas", param_count_grid},
        {"collaboration benefit over local-only training", collaboration_benefit},
        {"partition disjointness and concentration ordering", partition_statistics},
        {"communication accounting by upload mode", communication_accounting},
        {"scheduling independence of the metric stream", scheduling_independence},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = criteria[i].run();
        } catch (const std::exception& e) {
            outcome.pass = false;
            outcome.detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] %zu. %s (%.1fs)\n", outcome.pass ? "PASS" : "FAIL", i + 1,
                    criteria[i].name, seconds);
        std::printf("       %s\n", outcome.detail.c_str());
        if (!outcome.pass) ++failures;
    }
    if (failures > 0) {
        std::printf("%d of %zu acceptance criteria failed\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu acceptance criteria passed\n", criteria.size());
    return 0;
}
