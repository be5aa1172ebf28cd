#include "fedhpl/config.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fedhpl/rng.hpp"

namespace fedhpl {

namespace {

using json = nlohmann::json;

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::string trim(const std::string& s) {
    std::size_t lo = 0, hi = s.size();
    while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo]))) ++lo;
    while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1]))) --hi;
    return s.substr(lo, hi - lo);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t next = std::min({row[j] + 1, row[j - 1] + 1,
                                               diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = row[j];
            row[j] = next;
        }
    }
    return row[b.size()];
}

std::string suggest(const std::string& key, const std::vector<std::string>& known) {
    std::string best;
    std::size_t best_dist = 3;  // suggest only close misses
    for (const auto& candidate : known) {
        const std::size_t d = edit_distance(key, candidate);
        if (d < best_dist) {
            best_dist = d;
            best = candidate;
        }
    }
    return best;
}

// Raw sections in file order: section name -> ordered key/value pairs.
struct RawConfig {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections;
};

RawConfig parse_ini(const std::string& text) {
    RawConfig raw;
    raw.sections.push_back({"", {}});
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section '" +
                                  stripped + "'");
            }
            raw.sections.push_back({trim(stripped.substr(1, stripped.size() - 2)), {}});
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                              stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        }
        raw.sections.back().second.push_back({key, value});
    }
    return raw;
}

class SectionReader {
public:
    SectionReader(std::string path, const std::vector<std::pair<std::string, std::string>>& pairs,
                  std::vector<std::string> known)
        : path_(std::move(path)), known_(std::move(known)) {
        for (const auto& [key, value] : pairs) {
            if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
                std::string message = "[" + path_ + "]." + key + ": unknown key";
                const std::string hint = suggest(key, known_);
                if (!hint.empty()) message += " (did you mean '" + hint + "'?)";
                throw ConfigError(message);
            }
            if (!values_.emplace(key, value).second) {
                throw ConfigError("[" + path_ + "]." + key + ": duplicate key");
            }
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("[" + path_ + "]." + key + ": missing required key");
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_double(key, it->second);
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : parse_int(key, it->second);
    }

    std::int64_t require_int(const std::string& key) const {
        return parse_int(key, require_string(key));
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("[" + path_ + "]." + key + ": expected true|false, got '" + it->second +
                          "'");
    }

    std::string key_path(const std::string& key) const { return "[" + path_ + "]." + key; }

private:
    double parse_double(const std::string& key, const std::string& text) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("[" + path_ + "]." + key + ": expected a number, got '" + text + "'");
        }
    }

    std::int64_t parse_int(const std::string& key, const std::string& text) const {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("[" + path_ + "]." + key + ": expected an integer, got '" + text +
                              "'");
        }
    }

    std::string path_;
    std::vector<std::string> known_;
    std::map<std::string, std::string> values_;
};

void check_positive(std::int64_t value, const std::string& key_path) {
    if (value < 1) throw ConfigError(key_path + ": must be >= 1, got " + std::to_string(value));
}

}  // namespace

std::string policy_name(Policy policy) {
    switch (policy) {
        case Policy::kLocalOnly: return "local_only";
        case Policy::kFedhpl: return "fedhpl";
        case Policy::kFedhplPlusPrompts: return "fedhpl_plus_prompts";
        case Policy::kFedhplPlusHeads: return "fedhpl_plus_heads";
    }
    return "fedhpl";
}

Policy policy_from_name(const std::string& name) {
    if (name == "local_only") return Policy::kLocalOnly;
    if (name == "fedhpl") return Policy::kFedhpl;
    if (name == "fedhpl_plus_prompts") return Policy::kFedhplPlusPrompts;
    if (name == "fedhpl_plus_heads") return Policy::kFedhplPlusHeads;
    throw std::invalid_argument(
        "unknown policy '" + name +
        "' (expected local_only|fedhpl|fedhpl_plus_prompts|fedhpl_plus_heads)");
}

ExperimentConfig parse_config_text(const std::string& text) {
    const RawConfig raw = parse_ini(text);
    ExperimentConfig cfg;
    bool saw_dataset = false;

    for (const auto& [name, pairs] : raw.sections) {
        if (name.empty()) {
            if (!pairs.empty()) {
                throw ConfigError("key '" + pairs.front().first +
                                  "' appears before any [section] header");
            }
            continue;
        }
        if (name == "experiment") {
            SectionReader sec(name, pairs,
                              {"rounds", "local_epochs", "batch_size", "lr", "momentum",
                               "weight_decay", "gamma", "temperature", "policy", "upload_mode",
                               "eval_split_fraction", "master_seed", "workers", "log_rounds"});
            cfg.rounds = static_cast<std::size_t>(sec.get_int("rounds", 10));
            cfg.local_epochs = static_cast<std::size_t>(sec.get_int("local_epochs", 1));
            cfg.batch_size = static_cast<std::size_t>(sec.get_int("batch_size", 16));
            check_positive(static_cast<std::int64_t>(cfg.rounds), sec.key_path("rounds"));
            check_positive(static_cast<std::int64_t>(cfg.local_epochs),
                           sec.key_path("local_epochs"));
            check_positive(static_cast<std::int64_t>(cfg.batch_size), sec.key_path("batch_size"));
            cfg.lr = sec.get_double("lr", 0.01);
            cfg.momentum = sec.get_double("momentum", 0.9);
            cfg.weight_decay = sec.get_double("weight_decay", 1e-4);
            cfg.loss.gamma = sec.get_double("gamma", 1.0);
            cfg.loss.temperature = sec.get_double("temperature", 4.5);
            if (cfg.loss.gamma < 0.0) throw ConfigError(sec.key_path("gamma") + ": must be >= 0");
            if (!(cfg.loss.temperature > 0.0)) {
                throw ConfigError(sec.key_path("temperature") + ": must be > 0");
            }
            try {
                cfg.policy = policy_from_name(sec.get_string("policy", "fedhpl"));
                cfg.upload_mode = upload_mode_from_name(sec.get_string("upload_mode", "full"));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("[experiment]: " + std::string(e.what()));
            }
            cfg.eval_split_fraction = sec.get_double("eval_split_fraction", 0.2);
            if (cfg.eval_split_fraction <= 0.0 || cfg.eval_split_fraction >= 1.0) {
                throw ConfigError(sec.key_path("eval_split_fraction") + ": must be in (0, 1)");
            }
            cfg.master_seed = static_cast<std::uint64_t>(sec.get_int("master_seed", 1));
            cfg.workers = static_cast<std::size_t>(sec.get_int("workers", 1));
            check_positive(static_cast<std::int64_t>(cfg.workers), sec.key_path("workers"));
            cfg.log_rounds = sec.get_bool("log_rounds", false);
        } else if (name == "dataset") {
            saw_dataset = true;
            SectionReader sec(name, pairs,
                              {"source", "classes", "per_class", "test_per_class", "patch_count",
                               "patch_dim", "noise", "seed", "path"});
            const std::string source = sec.get_string("source", "synthetic");
            if (source == "synthetic") {
                cfg.dataset.source = DatasetConfig::Source::kSynthetic;
            } else if (source == "csv") {
                cfg.dataset.source = DatasetConfig::Source::kCsv;
            } else {
                throw ConfigError(sec.key_path("source") + ": expected synthetic|csv, got '" +
                                  source + "'");
            }
            cfg.dataset.classes = static_cast<std::size_t>(sec.get_int("classes", 10));
            cfg.dataset.per_class = static_cast<std::size_t>(sec.get_int("per_class", 100));
            const std::int64_t test_per_class = sec.get_int("test_per_class", 0);
            if (test_per_class < 0) {
                throw ConfigError(sec.key_path("test_per_class") + ": must be >= 0");
            }
            cfg.dataset.test_per_class = static_cast<std::size_t>(test_per_class);
            cfg.dataset.patch_count = static_cast<std::size_t>(sec.get_int("patch_count", 4));
            cfg.dataset.patch_dim = static_cast<std::size_t>(sec.get_int("patch_dim", 12));
            cfg.dataset.noise = sec.get_double("noise", 0.3);
            check_positive(static_cast<std::int64_t>(cfg.dataset.classes),
                           sec.key_path("classes"));
            check_positive(static_cast<std::int64_t>(cfg.dataset.per_class),
                           sec.key_path("per_class"));
            check_positive(static_cast<std::int64_t>(cfg.dataset.patch_count),
                           sec.key_path("patch_count"));
            check_positive(static_cast<std::int64_t>(cfg.dataset.patch_dim),
                           sec.key_path("patch_dim"));
            if (cfg.dataset.noise < 0.0) throw ConfigError(sec.key_path("noise") + ": must be >= 0");
            if (sec.has("seed")) {
                cfg.dataset.seed = static_cast<std::uint64_t>(sec.get_int("seed", 0));
                cfg.dataset.seed_set = true;
            }
            if (cfg.dataset.source == DatasetConfig::Source::kCsv) {
                cfg.dataset.csv_path = sec.require_string("path");
                if (cfg.dataset.test_per_class > 0) {
                    throw ConfigError(sec.key_path("test_per_class") +
                                      ": only a synthetic source can generate a test set");
                }
            }
        } else if (name == "partition") {
            SectionReader sec(name, pairs, {"scheme", "alpha", "min_fraction", "seed"});
            try {
                cfg.partition.scheme =
                    partition_scheme_from_name(sec.get_string("scheme", "iid"));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("[partition]: " + std::string(e.what()));
            }
            cfg.partition.alpha = sec.get_double("alpha", 0.5);
            cfg.partition.min_fraction = sec.get_double("min_fraction", 0.01);
            if (cfg.partition.scheme != PartitionScheme::kIid && !(cfg.partition.alpha > 0.0)) {
                throw ConfigError(sec.key_path("alpha") + ": must be > 0");
            }
            if (cfg.partition.min_fraction < 0.0) {
                throw ConfigError(sec.key_path("min_fraction") + ": must be >= 0");
            }
            if (sec.has("seed")) {
                cfg.partition.seed = static_cast<std::uint64_t>(sec.get_int("seed", 0));
                cfg.partition_seed_set = true;
            }
        } else if (name.rfind("client", 0) == 0) {
            SectionReader sec(name, pairs,
                              {"layers", "embed_dim", "heads", "mlp_ratio", "prompt_len",
                               "insertion", "seed", "pretext_steps"});
            ClientConfig client;
            client.spec.num_layers = static_cast<std::size_t>(sec.require_int("layers"));
            client.spec.embed_dim = static_cast<std::size_t>(sec.require_int("embed_dim"));
            client.spec.num_heads = static_cast<std::size_t>(sec.get_int("heads", 1));
            client.spec.mlp_ratio = sec.get_double("mlp_ratio", 4.0);
            client.prompt_len = static_cast<std::size_t>(sec.get_int("prompt_len", 3));
            check_positive(static_cast<std::int64_t>(client.prompt_len),
                           sec.key_path("prompt_len"));
            try {
                client.mode = insertion_mode_from_name(sec.get_string("insertion", "deep"));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("[" + name + "]: " + std::string(e.what()));
            }
            if (sec.has("seed")) {
                client.seed = static_cast<std::uint64_t>(sec.get_int("seed", 0));
                client.seed_set = true;
            }
            const std::int64_t pretext = sec.get_int("pretext_steps", 0);
            if (pretext < 0) throw ConfigError(sec.key_path("pretext_steps") + ": must be >= 0");
            client.pretext_steps = static_cast<std::size_t>(pretext);
            cfg.clients.push_back(std::move(client));
        } else {
            std::string message = "[" + name + "]: unknown section";
            const std::string hint =
                suggest(name, {"experiment", "dataset", "partition", "client.1"});
            if (!hint.empty()) message += " (did you mean '" + hint + "'?)";
            throw ConfigError(message);
        }
    }

    if (!saw_dataset) throw ConfigError("[dataset]: section is required");
    if (cfg.clients.empty()) throw ConfigError("[client.*]: at least one client section required");
    finalize_config(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

void finalize_config(ExperimentConfig& cfg) {
    cfg.partition.num_clients = cfg.clients.size();
    if (!cfg.partition_seed_set) {
        cfg.partition.seed = derive_seed(cfg.master_seed, "partition-seed");
    }
    if (!cfg.dataset.seed_set) {
        cfg.dataset.seed = derive_seed(cfg.master_seed, "dataset-seed");
    }
    if (static_cast<double>(cfg.partition.num_clients) * cfg.partition.min_fraction > 1.0) {
        throw ConfigError("[partition].min_fraction: " + std::to_string(cfg.partition.min_fraction) +
                          " impossible for " + std::to_string(cfg.partition.num_clients) +
                          " clients");
    }
    for (std::size_t k = 0; k < cfg.clients.size(); ++k) {
        auto& client = cfg.clients[k];
        client.spec.patch_count = cfg.dataset.patch_count;
        client.spec.input_dim = cfg.dataset.patch_dim;
        try {
            client.spec.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("[client." + std::to_string(k + 1) + "]: " + std::string(e.what()));
        }
        if (!client.seed_set) {
            client.seed = derive_seed(cfg.master_seed, "client-seed", static_cast<std::uint64_t>(k));
            client.seed_set = true;
        }
    }
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json out;
    out["experiment"] = {{"rounds", cfg.rounds},
                         {"local_epochs", cfg.local_epochs},
                         {"batch_size", cfg.batch_size},
                         {"lr", cfg.lr},
                         {"momentum", cfg.momentum},
                         {"weight_decay", cfg.weight_decay},
                         {"gamma", cfg.loss.gamma},
                         {"temperature", cfg.loss.temperature},
                         {"policy", policy_name(cfg.policy)},
                         {"upload_mode", upload_mode_name(cfg.upload_mode)},
                         {"eval_split_fraction", cfg.eval_split_fraction},
                         {"master_seed", cfg.master_seed},
                         {"workers", cfg.workers},
                         {"log_rounds", cfg.log_rounds}};
    out["dataset"] = {{"source", cfg.dataset.source == DatasetConfig::Source::kSynthetic
                                     ? "synthetic"
                                     : "csv"},
                      {"classes", cfg.dataset.classes},
                      {"per_class", cfg.dataset.per_class},
                      {"test_per_class", cfg.dataset.test_per_class},
                      {"patch_count", cfg.dataset.patch_count},
                      {"patch_dim", cfg.dataset.patch_dim},
                      {"noise", cfg.dataset.noise},
                      {"seed", cfg.dataset.seed}};
    if (cfg.dataset.source == DatasetConfig::Source::kCsv) {
        out["dataset"]["path"] = cfg.dataset.csv_path;
    }
    out["partition"] = {{"scheme", partition_scheme_name(cfg.partition.scheme)},
                        {"alpha", cfg.partition.alpha},
                        {"min_fraction", cfg.partition.min_fraction},
                        {"seed", cfg.partition.seed}};
    out["clients"] = json::array();
    for (const auto& client : cfg.clients) {
        out["clients"].push_back({{"layers", client.spec.num_layers},
                                  {"embed_dim", client.spec.embed_dim},
                                  {"heads", client.spec.num_heads},
                                  {"mlp_ratio", client.spec.mlp_ratio},
                                  {"prompt_len", client.prompt_len},
                                  {"insertion", insertion_mode_name(client.mode)},
                                  {"seed", client.seed},
                                  {"pretext_steps", client.pretext_steps}});
    }
    return out.dump(2);
}

}  // namespace fedhpl
