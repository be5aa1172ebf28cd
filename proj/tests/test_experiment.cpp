#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedhpl/config.hpp"
#include "fedhpl/data.hpp"
#include "fedhpl/experiment.hpp"
#include "fedhpl/model.hpp"
#include "fedhpl/rng.hpp"

using namespace fedhpl;

namespace {

// Two small heterogeneous clients over a 4-class blob task.
ExperimentConfig small_config() {
    return parse_config_text(R"(
[experiment]
rounds = 3
local_epochs = 1
batch_size = 8
master_seed = 5

[dataset]
source = synthetic
classes = 4
per_class = 30
patch_count = 4
patch_dim = 3
noise = 0.5

[partition]
scheme = iid

[client.1]
layers = 2
embed_dim = 16
heads = 2

[client.2]
layers = 2
embed_dim = 32
heads = 2
)");
}

std::string metrics_stream(const std::vector<RoundMetrics>& rounds) {
    std::string out;
    for (const auto& r : rounds) {
        out += round_metrics_to_json(r);
        out += "\n";
    }
    return out;
}

}  // namespace

TEST_CASE("evaluate scores a perfect stub at 1.0") {
    const auto ds = gen_synthetic(4, 10, 6, 2, 3, 0.3, 3);
    std::size_t cursor = 0;
    const auto oracle = [&](const std::vector<double>&) {
        std::vector<double> logits(4, 0.0);
        logits[static_cast<std::size_t>(ds.samples[cursor++].label)] = 1.0;
        return logits;
    };
    const auto result = evaluate_with(oracle, ds);
    CHECK(result.accuracy == 1.0);
    for (const auto& acc : result.per_class) {
        REQUIRE(acc.has_value());
        CHECK(*acc == 1.0);
    }
}

TEST_CASE("zero-initialized head predicts the tie-broken first class") {
    const auto ds = gen_synthetic(10, 20, 12, 4, 3, 0.4, 9);
    BackboneSpec spec;
    spec.num_layers = 2;
    spec.embed_dim = 16;
    spec.num_heads = 2;
    spec.patch_count = 4;
    spec.input_dim = 3;
    const auto model = init_client_model(spec, 10, InsertionMode::kDeep, 3, 7);
    const auto result = evaluate(model, ds);

    // All logits are zero, so argmax tie-breaks to class 0 on every sample;
    // accuracy equals the class-0 rate, 1/n_c on balanced data.
    const auto counts = class_counts(ds);
    const double class0_rate = static_cast<double>(counts[0]) / static_cast<double>(ds.size());
    CHECK(result.accuracy == class0_rate);
    CHECK(std::abs(result.accuracy - 0.1) <= 0.05);
}

TEST_CASE("per-class accuracies weighted by counts reproduce the overall accuracy") {
    const auto ds = gen_synthetic(5, 12, 12, 4, 3, 1.5, 11);
    BackboneSpec spec;
    spec.num_layers = 2;
    spec.embed_dim = 16;
    spec.num_heads = 2;
    spec.patch_count = 4;
    spec.input_dim = 3;
    auto model = init_client_model(spec, 5, InsertionMode::kDeep, 2, 13);
    Rng rng(derive_seed(13, "head"));
    for (auto& v : model.head_weight.values()) v = 0.3 * rng.normal();

    const auto result = evaluate(model, ds);
    const auto counts = class_counts(ds);
    double weighted = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) {
            CHECK_FALSE(result.per_class[c].has_value());
            continue;
        }
        REQUIRE(result.per_class[c].has_value());
        weighted += *result.per_class[c] * static_cast<double>(counts[c]);
    }
    weighted /= static_cast<double>(ds.size());
    CHECK(std::abs(weighted - result.accuracy) <= 1e-12);

    CHECK_THROWS_AS(evaluate(model, Dataset{}), std::invalid_argument);
}

TEST_CASE("local_only never uploads") {
    auto cfg = small_config();
    cfg.policy = Policy::kLocalOnly;
    const auto result = run_experiment(cfg);
    REQUIRE(result.rounds.size() == 3);
    for (const auto& round : result.rounds) {
        for (const auto& client : round.clients) {
            CHECK(client.upload_bytes == 0);
            CHECK(client.kd_loss == 0.0);
        }
    }
}

TEST_CASE("runs are deterministic and frozen backbones stay frozen") {
    const auto cfg = small_config();
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    CHECK(metrics_stream(a.rounds) == metrics_stream(b.rounds));
    CHECK(a.initial_backbone_hashes == a.final_backbone_hashes);
    CHECK(a.initial_backbone_hashes == b.initial_backbone_hashes);
    for (const auto& round : a.rounds) {
        CHECK(round.lowest_accuracy <= round.average_accuracy);
        CHECK(round.average_accuracy <= round.highest_accuracy);
    }
}

TEST_CASE("round one is distillation-free") {
    auto fed = small_config();
    auto plain = small_config();
    plain.loss.gamma = 0.0;
    const auto fed_result = run_experiment(fed);
    const auto plain_result = run_experiment(plain);

    // No table exists in round 1, so the gamma term is inactive and the two
    // runs coincide exactly there.
    const auto& f1 = fed_result.rounds[0];
    const auto& p1 = plain_result.rounds[0];
    for (std::size_t k = 0; k < f1.clients.size(); ++k) {
        CHECK(f1.clients[k].kd_loss == 0.0);
        CHECK(f1.clients[k].ce_loss == p1.clients[k].ce_loss);
        CHECK(f1.clients[k].test_accuracy == p1.clients[k].test_accuracy);
    }
}

TEST_CASE("single-client federation matches local training in round one and stays finite") {
    auto fed = parse_config_text(R"(
[experiment]
rounds = 3
batch_size = 8
master_seed = 6

[dataset]
source = synthetic
classes = 4
per_class = 40
patch_count = 4
patch_dim = 3
noise = 0.5

[client.1]
layers = 2
embed_dim = 16
heads = 2
)");
    auto local = fed;
    local.policy = Policy::kLocalOnly;

    const auto fed_result = run_experiment(fed);
    const auto local_result = run_experiment(local);
    CHECK(fed_result.rounds[0].clients[0].ce_loss == local_result.rounds[0].clients[0].ce_loss);
    CHECK(fed_result.rounds[0].clients[0].test_accuracy ==
          local_result.rounds[0].clients[0].test_accuracy);
    for (const auto& round : fed_result.rounds) {
        for (const auto& client : round.clients) {
            CHECK(std::isfinite(client.train_loss));
            CHECK(std::isfinite(client.ce_loss));
            CHECK(std::isfinite(client.kd_loss));
        }
    }
    // From round 2 on the distillation term is live.
    CHECK(fed_result.rounds[1].clients[0].kd_loss > 0.0);
}

TEST_CASE("sequential and parallel schedules emit identical metrics") {
    auto sequential = small_config();
    sequential.workers = 1;
    auto parallel = small_config();
    parallel.workers = 4;
    const auto a = run_experiment(sequential);
    const auto b = run_experiment(parallel);
    CHECK(metrics_stream(a.rounds) == metrics_stream(b.rounds));
}

TEST_CASE("upload accounting by mode") {
    auto cfg = small_config();

    SUBCASE("summary mode is a constant function of n_c") {
        cfg.upload_mode = UploadMode::kSummary;
        const auto result = run_experiment(cfg);
        const std::uint64_t expected = 8ULL * (4 + 1) * 4;  // (n_c + 1) slots, n_c classes
        for (const auto& round : result.rounds) {
            for (const auto& client : round.clients) CHECK(client.upload_bytes == expected);
        }
    }

    SUBCASE("full mode grows with the number of correct logits") {
        cfg.upload_mode = UploadMode::kFull;
        const auto result = run_experiment(cfg);
        for (const auto& round : result.rounds) {
            for (const auto& client : round.clients) {
                CHECK(client.upload_bytes % (8 * 5) == 0);  // whole records
            }
        }
    }
}

TEST_CASE("policy variants run and aggregate parameters where applicable") {
    auto plus_p = small_config();
    plus_p.policy = Policy::kFedhplPlusPrompts;
    const auto with_prompts = run_experiment(plus_p);
    CHECK(with_prompts.rounds.size() == 3);

    auto plus_h = small_config();
    plus_h.policy = Policy::kFedhplPlusHeads;
    const auto with_heads = run_experiment(plus_h);
    CHECK(with_heads.rounds.size() == 3);

    // Dimension-matched clients with distinct seeds: +P must change the
    // trajectory versus plain federation from round 2 on.
    auto matched = small_config();
    matched.clients[1].spec.embed_dim = 16;
    finalize_config(matched);
    auto matched_plus_p = matched;
    matched_plus_p.policy = Policy::kFedhplPlusPrompts;
    const auto base_run = run_experiment(matched);
    const auto plus_run = run_experiment(matched_plus_p);
    CHECK(metrics_stream({base_run.rounds[0]}) == metrics_stream({plus_run.rounds[0]}));
    CHECK(metrics_stream(base_run.rounds) != metrics_stream(plus_run.rounds));
}

TEST_CASE("emit_results writes the full results bundle atomically") {
    auto cfg = small_config();
    cfg.rounds = 2;
    const auto result = run_experiment(cfg);

    const std::string dir = "/tmp/fedhpl_test_results";
    std::filesystem::remove_all(dir);
    emit_results(result.rounds, cfg, dir);
    emit_results(result.rounds, cfg, dir);  // overwrite must succeed

    std::ifstream metrics(dir + "/metrics.jsonl");
    REQUIRE(metrics.good());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        const auto parsed = round_metrics_from_json(line);
        CHECK(round_metrics_to_json(parsed) == line);  // lossless round trip
        ++lines;
    }
    CHECK(lines == 2);

    std::ifstream csv(dir + "/summary.csv");
    REQUIRE(csv.good());
    std::size_t csv_rows = 0;
    while (std::getline(csv, line)) {
        if (!line.empty()) ++csv_rows;
    }
    CHECK(csv_rows == 1 + 2 * 2);  // header + rounds * clients

    std::ifstream config_snapshot(dir + "/config.json");
    REQUIRE(config_snapshot.good());
    std::stringstream buffer;
    buffer << config_snapshot.rdbuf();
    CHECK(buffer.str().find("\"rounds\": 2") != std::string::npos);

    std::filesystem::remove_all(dir);
}

TEST_CASE("round logs carry the wire payloads when enabled") {
    auto cfg = small_config();
    cfg.rounds = 2;
    cfg.log_rounds = true;
    const std::string dir = "/tmp/fedhpl_test_round_logs";
    std::filesystem::remove_all(dir);
    const auto result = run_experiment(cfg, dir);
    CHECK(result.rounds.size() == 2);

    std::ifstream log(dir + "/rounds.jsonl");
    REQUIRE(log.good());
    std::size_t payloads = 0, responses = 0;
    std::string line;
    while (std::getline(log, line)) {
        if (line.find("\"mode\"") != std::string::npos) {
            ++payloads;
        } else if (line.find("\"table\"") != std::string::npos) {
            ++responses;
        }
    }
    CHECK(payloads == 2 * 2);   // rounds * clients
    CHECK(responses == 2 * 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("failures surface the round and client with partial results") {
    auto cfg = small_config();
    // Three samples over two clients: one shard cannot support a split.
    cfg.partition.scheme = PartitionScheme::kNonIidDisjoint;
    cfg.partition.alpha = 0.05;
    cfg.partition.min_fraction = 0.0;
    cfg.dataset.per_class = 1;
    cfg.dataset.classes = 3;
    bool threw = false;
    try {
        run_experiment(cfg);
    } catch (const std::exception& e) {
        threw = true;
        CHECK(std::string(e.what()).find("client") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("a shared synthetic test set scores every class for every client") {
    auto cfg = small_config();
    cfg.dataset.test_per_class = 6;
    cfg.partition.scheme = PartitionScheme::kNonIidDisjoint;
    cfg.partition.alpha = 0.3;
    const auto result = run_experiment(cfg);
    for (const auto& client : result.rounds.back().clients) {
        REQUIRE(client.per_class_accuracy.size() == 4);
        for (const auto& acc : client.per_class_accuracy) CHECK(acc.has_value());
    }

    // The shared set never overlaps the training pool: determinism of both
    // draws makes this an exact check.
    const auto train_pool = gen_synthetic(cfg.dataset.classes, cfg.dataset.per_class,
                                          cfg.dataset.patch_count * cfg.dataset.patch_dim,
                                          cfg.dataset.patch_count, cfg.dataset.patch_dim,
                                          cfg.dataset.noise, cfg.dataset.seed);
    const auto held_out = gen_synthetic_test(cfg.dataset.classes, cfg.dataset.test_per_class,
                                             cfg.dataset.patch_count * cfg.dataset.patch_dim,
                                             cfg.dataset.patch_count, cfg.dataset.patch_dim,
                                             cfg.dataset.noise, cfg.dataset.seed);
    for (const auto& t : held_out.samples) {
        for (const auto& s : train_pool.samples) CHECK(t.features != s.features);
    }
}
