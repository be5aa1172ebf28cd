#include "fedhpl/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "fedhpl/federation.hpp"
#include "fedhpl/losses.hpp"
#include "fedhpl/rng.hpp"
#include "fedhpl/tensor.hpp"

namespace fedhpl {

namespace {

using json = nlohmann::json;

struct ClientState {
    ClientModel model;
    Dataset train;
    Dataset eval;  // held-out split, or the shared test set when one exists
};

// Per-round output of one client worker; collected at the barrier.
struct ClientRoundOutput {
    ClientRoundMetrics metrics;
    RoundPayload payload;
    std::string error;
};

Dataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.source == DatasetConfig::Source::kCsv) {
        Dataset ds = load_csv(cfg.dataset.csv_path, cfg.dataset.classes);
        const std::size_t expected = cfg.dataset.patch_count * cfg.dataset.patch_dim;
        if (ds.feature_dim != expected) {
            throw std::invalid_argument("dataset: csv feature dimension " +
                                        std::to_string(ds.feature_dim) + " != patch_count*patch_dim " +
                                        std::to_string(expected));
        }
        return ds;
    }
    return gen_synthetic(cfg.dataset.classes, cfg.dataset.per_class,
                         cfg.dataset.patch_count * cfg.dataset.patch_dim, cfg.dataset.patch_count,
                         cfg.dataset.patch_dim, cfg.dataset.noise, cfg.dataset.seed);
}

std::pair<Dataset, Dataset> split_train_eval(const Dataset& shard, double eval_fraction,
                                             std::uint64_t seed) {
    if (shard.size() < 2) {
        throw std::invalid_argument("client shard holds " + std::to_string(shard.size()) +
                                    " samples; need at least 2 for a train/eval split");
    }
    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    std::size_t eval_count = static_cast<std::size_t>(
        std::floor(eval_fraction * static_cast<double>(shard.size())));
    eval_count = std::clamp<std::size_t>(eval_count, 1, shard.size() - 1);
    Dataset train, eval;
    train.n_c = eval.n_c = shard.n_c;
    train.feature_dim = eval.feature_dim = shard.feature_dim;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < eval_count ? eval : train).samples.push_back(shard.samples[order[i]]);
    }
    return {std::move(train), std::move(eval)};
}

// One client's round: the local epochs, then the correct-logit collection
// pass over the full local split, then evaluation.
ClientRoundOutput client_round(const ExperimentConfig& cfg, ClientState& state, int client_id,
                               int round, const ClientLogitTable* table) {
    ClientRoundOutput out;
    out.metrics.client_id = client_id;
    out.payload.round = round;
    out.payload.client_id = client_id;
    out.payload.embed_dim = state.model.spec.embed_dim;
    out.payload.mode = cfg.upload_mode;

    const bool distill_active = cfg.policy != Policy::kLocalOnly && table != nullptr;
    const std::size_t n = state.train.size();
    double ce_sum = 0.0, kd_sum = 0.0;
    std::size_t seen = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.master_seed, "batch-shuffle",
                                    static_cast<std::uint64_t>(client_id),
                                    static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            ad::Tape tape;
            std::vector<ad::Tensor> logits;
            std::vector<int> labels;
            logits.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const auto& sample = state.train.samples[order[i]];
                logits.push_back(forward(state.model, tape, sample.features));
                labels.push_back(sample.label);
            }
            const ad::Tensor loss = total_objective_node(
                tape, logits, labels, distill_active ? table : nullptr, cfg.loss);
            tape.backward(loss);
            sgd_step(state.model, cfg.lr, cfg.momentum, cfg.weight_decay);

            for (std::size_t i = 0; i < logits.size(); ++i) {
                const auto label = static_cast<std::size_t>(labels[i]);
                ce_sum += ce_loss(logits[i].values(), label);
                if (distill_active) {
                    const auto& target = apply_fallback(*table, logits[i].values(), label);
                    kd_sum += kd_loss(target, logits[i].values(), cfg.loss.temperature);
                }
            }
            seen += logits.size();
        }
    }
    const double denom = seen > 0 ? static_cast<double>(seen) : 1.0;
    out.metrics.ce_loss = ce_sum / denom;
    out.metrics.kd_loss = kd_sum / denom;
    out.metrics.train_loss = out.metrics.ce_loss + cfg.loss.gamma * out.metrics.kd_loss;

    // Post-epoch collection pass (full local split, natural order).
    if (cfg.policy != Policy::kLocalOnly) {
        std::vector<std::pair<std::vector<double>, int>> outputs;
        outputs.reserve(n);
        for (const auto& sample : state.train.samples) {
            outputs.emplace_back(predict(state.model, sample.features), sample.label);
        }
        auto records = filter_correct(outputs, client_id);
        if (cfg.upload_mode == UploadMode::kFull) {
            out.payload.records = std::move(records);
        } else {
            out.payload.summaries = summarize(records, state.train.n_c);
        }
        out.metrics.upload_bytes = out.payload.payload_bytes(state.train.n_c);
    }

    const EvalResult eval = evaluate(state.model, state.eval);
    out.metrics.test_accuracy = eval.accuracy;
    out.metrics.per_class_accuracy = eval.per_class;
    return out;
}

ClientMeta meta_from_payload(const RoundPayload& payload, std::size_t n_c) {
    ClientMeta meta;
    meta.client_id = payload.client_id;
    meta.embed_dim = payload.embed_dim;
    meta.per_class_counts.assign(n_c, 0);
    if (payload.mode == UploadMode::kFull) {
        for (const auto& rec : payload.records) {
            meta.per_class_counts.at(static_cast<std::size_t>(rec.label)) += 1;
        }
    } else {
        for (const auto& s : payload.summaries) {
            meta.per_class_counts.at(static_cast<std::size_t>(s.class_id)) += s.count;
        }
    }
    return meta;
}

// Signature keys for the +P / +H extensions: only identically shaped
// parameter blocks are averaged together.
ParamSet prompt_param_set(const ClientState& state, int client_id) {
    ParamSet set;
    set.client_id = client_id;
    set.key = {0 /* prompts */, state.model.spec.embed_dim,
               static_cast<std::size_t>(state.model.prompts.size()), state.model.prompt_len};
    for (const auto& block : state.model.prompts) {
        set.values.insert(set.values.end(), block.values().begin(), block.values().end());
    }
    return set;
}

ParamSet head_param_set(const ClientState& state, int client_id) {
    ParamSet set;
    set.client_id = client_id;
    set.key = {1 /* head */, state.model.spec.embed_dim, state.model.n_c};
    set.values = state.model.head_weight.values();
    set.values.insert(set.values.end(), state.model.head_bias.values().begin(),
                      state.model.head_bias.values().end());
    return set;
}

void load_prompt_param_set(ClientState& state, const ParamSet& set) {
    std::size_t cursor = 0;
    for (auto& block : state.model.prompts) {
        std::copy(set.values.begin() + cursor, set.values.begin() + cursor + block.size(),
                  block.values().begin());
        cursor += block.size();
    }
}

void load_head_param_set(ClientState& state, const ParamSet& set) {
    auto& w = state.model.head_weight.values();
    auto& b = state.model.head_bias.values();
    std::copy(set.values.begin(), set.values.begin() + w.size(), w.begin());
    std::copy(set.values.begin() + w.size(), set.values.end(), b.begin());
}

json optional_vector_to_json(const std::vector<std::optional<double>>& values) {
    json arr = json::array();
    for (const auto& v : values) {
        if (v.has_value()) {
            arr.push_back(*v);
        } else {
            arr.push_back(nullptr);
        }
    }
    return arr;
}

}  // namespace

EvalResult evaluate(const ClientModel& model, const Dataset& ds) {
    return evaluate_with(
        [&model](const std::vector<double>& features) { return predict(model, features); }, ds);
}

EvalResult evaluate_with(const std::function<std::vector<double>(const std::vector<double>&)>& fn,
                         const Dataset& ds) {
    if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<std::size_t> correct(ds.n_c, 0), totals(ds.n_c, 0);
    std::size_t hits = 0;
    for (const auto& sample : ds.samples) {
        const auto predicted = argmax_lowest(fn(sample.features));
        const auto label = static_cast<std::size_t>(sample.label);
        totals[label] += 1;
        if (predicted == label) {
            correct[label] += 1;
            ++hits;
        }
    }
    EvalResult result;
    result.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
    result.per_class.resize(ds.n_c);
    for (std::size_t c = 0; c < ds.n_c; ++c) {
        if (totals[c] > 0) {
            result.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(totals[c]);
        }
    }
    return result;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& log_dir) {
    const Dataset dataset = build_dataset(cfg);
    const Partition parts = partition(dataset, cfg.partition);
    const auto shards = materialize(dataset, parts);
    const std::size_t num_clients = cfg.clients.size();
    const std::size_t n_c = dataset.n_c;

    // Shared balanced test set (same class means, independent noise stream).
    Dataset shared_test;
    const bool has_shared_test =
        cfg.dataset.source == DatasetConfig::Source::kSynthetic && cfg.dataset.test_per_class > 0;
    if (has_shared_test) {
        shared_test = gen_synthetic_test(cfg.dataset.classes, cfg.dataset.test_per_class,
                                         cfg.dataset.patch_count * cfg.dataset.patch_dim,
                                         cfg.dataset.patch_count, cfg.dataset.patch_dim,
                                         cfg.dataset.noise, cfg.dataset.seed);
    }

    std::vector<ClientState> states(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
        try {
            const auto& cc = cfg.clients[k];
            states[k].model = init_client_model(cc.spec, n_c, cc.mode, cc.prompt_len, cc.seed,
                                                cc.pretext_steps);
            auto [train, eval] = split_train_eval(
                shards[k], cfg.eval_split_fraction,
                derive_seed(cfg.master_seed, "train-eval-split", static_cast<std::uint64_t>(k)));
            states[k].train = std::move(train);
            states[k].eval = has_shared_test ? shared_test : std::move(eval);
        } catch (const std::exception& e) {
            throw std::invalid_argument("client " + std::to_string(k) + ": " + e.what());
        }
    }

    RunResult result;
    result.partition = parts;
    for (const auto& state : states) {
        result.initial_backbone_hashes.push_back(backbone_hash(state.model));
    }

    std::ofstream round_log;
    if (cfg.log_rounds && !log_dir.empty()) {
        std::filesystem::create_directories(log_dir);
        round_log.open(std::filesystem::path(log_dir) / "rounds.jsonl");
    }

    // Tables published at the end of round t guide round t+1; round 1 has none.
    std::vector<ClientLogitTable> tables;

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        std::vector<ClientRoundOutput> outputs(num_clients);
        auto worker = [&](std::size_t k) {
            const ClientLogitTable* table = tables.empty() ? nullptr : &tables[k];
            try {
                outputs[k] = client_round(cfg, states[k], static_cast<int>(k),
                                          static_cast<int>(round), table);
            } catch (const std::exception& e) {
                outputs[k].error = e.what();
            }
        };
        if (cfg.workers <= 1) {
            for (std::size_t k = 0; k < num_clients; ++k) worker(k);
        } else {
            std::vector<std::thread> pool;
            const std::size_t width = std::min(cfg.workers, num_clients);
            for (std::size_t w = 0; w < width; ++w) {
                pool.emplace_back([&, w]() {
                    for (std::size_t k = w; k < num_clients; k += width) worker(k);
                });
            }
            for (auto& t : pool) t.join();
        }
        for (std::size_t k = 0; k < num_clients; ++k) {
            if (!outputs[k].error.empty()) {
                throw RunError("round " + std::to_string(round) + ", client " + std::to_string(k) +
                                   ": " + outputs[k].error,
                               static_cast<int>(round), static_cast<int>(k), result.rounds);
            }
        }

        // Round barrier: all payloads are in; aggregate and publish.
        if (cfg.policy != Policy::kLocalOnly) {
            std::vector<ClientMeta> metas;
            metas.reserve(num_clients);
            for (const auto& out : outputs) metas.push_back(meta_from_payload(out.payload, n_c));
            GlobalLogitTable table;
            try {
                if (cfg.upload_mode == UploadMode::kFull) {
                    std::vector<std::vector<LogitRecord>> records;
                    records.reserve(num_clients);
                    for (const auto& out : outputs) records.push_back(out.payload.records);
                    table = aggregate_full(records, metas, n_c);
                } else {
                    std::vector<std::vector<ClassSummary>> summaries;
                    summaries.reserve(num_clients);
                    for (const auto& out : outputs) summaries.push_back(out.payload.summaries);
                    table = aggregate_summaries(summaries, metas, n_c);
                }
            } catch (const std::exception& e) {
                throw RunError("round " + std::to_string(round) + ", server: " + e.what(),
                               static_cast<int>(round), -1, result.rounds);
            }
            tables = std::move(table.per_client);

            if (round_log.is_open()) {
                for (const auto& out : outputs) round_log << payload_to_json(out.payload) << "\n";
                for (std::size_t k = 0; k < num_clients; ++k) {
                    RoundResponse response{static_cast<int>(round), static_cast<int>(k), tables[k]};
                    round_log << response_to_json(response) << "\n";
                }
            }

            if (cfg.policy == Policy::kFedhplPlusPrompts || cfg.policy == Policy::kFedhplPlusHeads) {
                std::vector<ParamSet> sets;
                sets.reserve(num_clients);
                for (std::size_t k = 0; k < num_clients; ++k) {
                    sets.push_back(cfg.policy == Policy::kFedhplPlusPrompts
                                       ? prompt_param_set(states[k], static_cast<int>(k))
                                       : head_param_set(states[k], static_cast<int>(k)));
                }
                const auto averaged = aggregate_homogeneous_params(sets);
                for (std::size_t k = 0; k < num_clients; ++k) {
                    if (cfg.policy == Policy::kFedhplPlusPrompts) {
                        load_prompt_param_set(states[k], averaged[k]);
                    } else {
                        load_head_param_set(states[k], averaged[k]);
                    }
                }
            }
        }

        RoundMetrics metrics;
        metrics.round = static_cast<int>(round);
        metrics.lowest_accuracy = 1.0;
        metrics.highest_accuracy = 0.0;
        double total = 0.0;
        for (std::size_t k = 0; k < num_clients; ++k) {
            metrics.clients.push_back(outputs[k].metrics);
            const double acc = outputs[k].metrics.test_accuracy;
            metrics.lowest_accuracy = std::min(metrics.lowest_accuracy, acc);
            metrics.highest_accuracy = std::max(metrics.highest_accuracy, acc);
            total += acc;
        }
        metrics.average_accuracy = total / static_cast<double>(num_clients);
        result.rounds.push_back(std::move(metrics));
    }

    for (const auto& state : states) {
        result.final_backbone_hashes.push_back(backbone_hash(state.model));
    }
    return result;
}

std::string round_metrics_to_json(const RoundMetrics& metrics) {
    json out;
    out["round"] = metrics.round;
    out["lowest_accuracy"] = metrics.lowest_accuracy;
    out["average_accuracy"] = metrics.average_accuracy;
    out["highest_accuracy"] = metrics.highest_accuracy;
    json clients = json::array();
    for (const auto& c : metrics.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"train_loss", c.train_loss},
                           {"ce_loss", c.ce_loss},
                           {"kd_loss", c.kd_loss},
                           {"test_accuracy", c.test_accuracy},
                           {"per_class_accuracy", optional_vector_to_json(c.per_class_accuracy)},
                           {"upload_bytes", c.upload_bytes}});
    }
    out["clients"] = std::move(clients);
    return out.dump();
}

RoundMetrics round_metrics_from_json(const std::string& text) {
    const json in = json::parse(text);
    RoundMetrics metrics;
    metrics.round = in.at("round").get<int>();
    metrics.lowest_accuracy = in.at("lowest_accuracy").get<double>();
    metrics.average_accuracy = in.at("average_accuracy").get<double>();
    metrics.highest_accuracy = in.at("highest_accuracy").get<double>();
    for (const auto& c : in.at("clients")) {
        ClientRoundMetrics cm;
        cm.client_id = c.at("client_id").get<int>();
        cm.train_loss = c.at("train_loss").get<double>();
        cm.ce_loss = c.at("ce_loss").get<double>();
        cm.kd_loss = c.at("kd_loss").get<double>();
        cm.test_accuracy = c.at("test_accuracy").get<double>();
        cm.upload_bytes = c.at("upload_bytes").get<std::uint64_t>();
        for (const auto& v : c.at("per_class_accuracy")) {
            if (v.is_null()) {
                cm.per_class_accuracy.push_back(std::nullopt);
            } else {
                cm.per_class_accuracy.push_back(v.get<double>());
            }
        }
        metrics.clients.push_back(std::move(cm));
    }
    return metrics;
}

namespace {

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("emit_results: cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("emit_results: write to " + tmp.string() + " failed");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void emit_results(const std::vector<RoundMetrics>& rounds, const ExperimentConfig& cfg,
                  const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);

    std::string lines;
    for (const auto& round : rounds) {
        lines += round_metrics_to_json(round);
        lines += "\n";
    }
    write_atomic(dir / "metrics.jsonl", lines);

    std::ostringstream csv;
    csv << "round,client,accuracy,train_loss,ce_loss,kd_loss,upload_bytes\n";
    csv.precision(17);
    for (const auto& round : rounds) {
        for (const auto& c : round.clients) {
            csv << round.round << "," << c.client_id << "," << c.test_accuracy << ","
                << c.train_loss << "," << c.ce_loss << "," << c.kd_loss << "," << c.upload_bytes
                << "\n";
        }
    }
    write_atomic(dir / "summary.csv", csv.str());
    write_atomic(dir / "config.json", config_to_json(cfg) + "\n");
}

}  // namespace fedhpl
