#include "fedhpl/federation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <stdexcept>

namespace fedhpl {

namespace {

using json = nlohmann::json;

// Compensated (Kahan) accumulator so aggregation results do not depend on
// record arrival order beyond the 1e-9 equivalence bound.
struct KahanSum {
    double total = 0.0;
    double carry = 0.0;

    void add(double value) {
        const double y = value - carry;
        const double t = total + y;
        carry = (t - total) - y;
        total = t;
    }
};

void check_logit_len(std::size_t got, std::size_t expected, int client_id) {
    if (got != expected) {
        throw std::invalid_argument("aggregate: client " + std::to_string(client_id) +
                                    " uploaded logit of length " + std::to_string(got) +
                                    ", expected " + std::to_string(expected));
    }
}

}  // namespace

std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::vector<LogitRecord> filter_correct(
    const std::vector<std::pair<std::vector<double>, int>>& outputs, int client_id) {
    std::vector<LogitRecord> kept;
    for (const auto& [logits, label] : outputs) {
        if (static_cast<int>(argmax_lowest(logits)) == label) {
            kept.push_back(LogitRecord{client_id, logits, label});
        }
    }
    return kept;
}

std::vector<ClassSummary> summarize(const std::vector<LogitRecord>& records, std::size_t n_c) {
    std::vector<ClassSummary> out(n_c);
    const int client_id = records.empty() ? 0 : records.front().client_id;
    for (std::size_t c = 0; c < n_c; ++c) {
        out[c].client_id = client_id;
        out[c].class_id = static_cast<int>(c);
    }
    for (const auto& rec : records) {
        auto& summary = out.at(static_cast<std::size_t>(rec.label));
        if (summary.mean_logit.empty()) summary.mean_logit.assign(rec.logits.size(), 0.0);
        for (std::size_t i = 0; i < rec.logits.size(); ++i) summary.mean_logit[i] += rec.logits[i];
        summary.count += 1;
    }
    for (auto& summary : out) {
        if (summary.count == 0) continue;
        for (auto& v : summary.mean_logit) v /= static_cast<double>(summary.count);
    }
    return out;
}

std::vector<std::vector<double>> compute_beta(const std::vector<std::size_t>& dims) {
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("compute_beta: embedding dimension must be positive");
    }
    const std::size_t k = dims.size();
    std::vector<std::vector<double>> beta(k, std::vector<double>(k, 0.0));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            const double r1 = static_cast<double>(dims[a]) / static_cast<double>(dims[b]);
            const double r2 = static_cast<double>(dims[b]) / static_cast<double>(dims[a]);
            beta[a][b] = std::min(r1, r2);
        }
    }
    return beta;
}

namespace {

// Shared aggregation core over per-client (class sum, class count) pairs.
GlobalLogitTable aggregate_from_sums(const std::vector<std::vector<std::vector<double>>>& sums,
                                     const std::vector<std::vector<std::size_t>>& counts,
                                     const std::vector<ClientMeta>& metas, std::size_t n_c,
                                     std::size_t logit_len) {
    const std::size_t num_clients = metas.size();
    std::vector<std::size_t> dims(num_clients);
    for (std::size_t j = 0; j < num_clients; ++j) dims[j] = metas[j].embed_dim;
    const auto beta = compute_beta(dims);

    GlobalLogitTable table;
    table.per_client.resize(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
        table.per_client[k].rows.resize(n_c);
        for (std::size_t c = 0; c < n_c; ++c) {
            KahanSum denom;
            std::size_t total_count = 0;
            std::vector<KahanSum> numer(logit_len);
            for (std::size_t j = 0; j < num_clients; ++j) {
                const std::size_t cnt = counts[j][c];
                total_count += cnt;
                denom.add(beta[k][j] * static_cast<double>(cnt));
                if (cnt == 0) continue;
                for (std::size_t i = 0; i < logit_len; ++i) {
                    numer[i].add(beta[k][j] * sums[j][c][i]);
                }
            }
            auto& row = table.per_client[k].rows[c];
            row.present = total_count > 0;
            row.logits.assign(logit_len, 0.0);
            if (row.present) {
                const double d = 1.0 + denom.total;
                for (std::size_t i = 0; i < logit_len; ++i) row.logits[i] = numer[i].total / d;
            }
        }
    }
    return table;
}

}  // namespace

GlobalLogitTable aggregate_full(const std::vector<std::vector<LogitRecord>>& per_client_records,
                                const std::vector<ClientMeta>& metas, std::size_t n_c) {
    if (per_client_records.size() != metas.size()) {
        throw std::invalid_argument("aggregate_full: records for " +
                                    std::to_string(per_client_records.size()) +
                                    " clients but metadata for " + std::to_string(metas.size()));
    }
    std::size_t logit_len = 0;
    for (const auto& recs : per_client_records) {
        if (!recs.empty()) {
            logit_len = recs.front().logits.size();
            break;
        }
    }
    if (logit_len == 0) logit_len = n_c;

    std::vector<std::vector<std::vector<double>>> sums(
        metas.size(), std::vector<std::vector<double>>(n_c));
    std::vector<std::vector<std::size_t>> counts(metas.size(), std::vector<std::size_t>(n_c, 0));
    for (std::size_t j = 0; j < per_client_records.size(); ++j) {
        std::vector<std::vector<KahanSum>> acc(n_c, std::vector<KahanSum>(logit_len));
        for (const auto& rec : per_client_records[j]) {
            check_logit_len(rec.logits.size(), logit_len, rec.client_id);
            const auto c = static_cast<std::size_t>(rec.label);
            if (c >= n_c) {
                throw std::invalid_argument("aggregate_full: label " + std::to_string(rec.label) +
                                            " outside " + std::to_string(n_c) + " classes");
            }
            for (std::size_t i = 0; i < logit_len; ++i) acc[c][i].add(rec.logits[i]);
            counts[j][c] += 1;
        }
        for (std::size_t c = 0; c < n_c; ++c) {
            sums[j][c].assign(logit_len, 0.0);
            for (std::size_t i = 0; i < logit_len; ++i) sums[j][c][i] = acc[c][i].total;
        }
    }
    return aggregate_from_sums(sums, counts, metas, n_c, logit_len);
}

GlobalLogitTable aggregate_summaries(
    const std::vector<std::vector<ClassSummary>>& per_client_summaries,
    const std::vector<ClientMeta>& metas, std::size_t n_c) {
    if (per_client_summaries.size() != metas.size()) {
        throw std::invalid_argument("aggregate_summaries: summaries for " +
                                    std::to_string(per_client_summaries.size()) +
                                    " clients but metadata for " + std::to_string(metas.size()));
    }
    std::size_t logit_len = 0;
    for (const auto& summaries : per_client_summaries) {
        for (const auto& s : summaries) {
            if (s.count > 0) {
                logit_len = s.mean_logit.size();
                break;
            }
        }
        if (logit_len != 0) break;
    }
    if (logit_len == 0) logit_len = n_c;

    std::vector<std::vector<std::vector<double>>> sums(
        metas.size(), std::vector<std::vector<double>>(n_c));
    std::vector<std::vector<std::size_t>> counts(metas.size(), std::vector<std::size_t>(n_c, 0));
    for (std::size_t j = 0; j < per_client_summaries.size(); ++j) {
        for (std::size_t c = 0; c < n_c; ++c) sums[j][c].assign(logit_len, 0.0);
        for (const auto& s : per_client_summaries[j]) {
            const auto c = static_cast<std::size_t>(s.class_id);
            if (c >= n_c) {
                throw std::invalid_argument("aggregate_summaries: class " +
                                            std::to_string(s.class_id) + " outside " +
                                            std::to_string(n_c) + " classes");
            }
            if (s.count == 0) continue;
            check_logit_len(s.mean_logit.size(), logit_len, s.client_id);
            counts[j][c] += s.count;
            // Numerator contribution beta * |D~| * mean == beta * class sum.
            for (std::size_t i = 0; i < logit_len; ++i) {
                sums[j][c][i] += static_cast<double>(s.count) * s.mean_logit[i];
            }
        }
    }
    return aggregate_from_sums(sums, counts, metas, n_c, logit_len);
}

const std::vector<double>& apply_fallback(const ClientLogitTable& table,
                                          const std::vector<double>& local_logit, std::size_t c) {
    if (c < table.rows.size() && table.rows[c].present) return table.rows[c].logits;
    return local_logit;
}

std::vector<ParamSet> aggregate_homogeneous_params(const std::vector<ParamSet>& sets) {
    std::vector<ParamSet> out = sets;
    // Group by signature, preserving first-seen order.
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        bool placed = false;
        for (auto& g : groups) {
            if (sets[g.front()].key == sets[i].key) {
                if (sets[g.front()].values.size() != sets[i].values.size()) {
                    throw std::invalid_argument(
                        "aggregate_homogeneous_params: size mismatch inside group of client " +
                        std::to_string(sets[i].client_id));
                }
                g.push_back(i);
                placed = true;
                break;
            }
        }
        if (!placed) groups.push_back({i});
    }
    for (const auto& g : groups) {
        if (g.size() < 2) continue;
        std::vector<double> mean(sets[g.front()].values.size(), 0.0);
        for (std::size_t idx : g) {
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sets[idx].values[i];
        }
        for (auto& v : mean) v /= static_cast<double>(g.size());
        for (std::size_t idx : g) out[idx].values = mean;
    }
    return out;
}

std::uint64_t RoundPayload::payload_bytes(std::size_t n_c) const {
    const std::uint64_t per_entry = 8ULL * (n_c + 1);
    if (mode == UploadMode::kFull) return per_entry * records.size();
    return per_entry * static_cast<std::uint64_t>(n_c);
}

std::string upload_mode_name(UploadMode mode) {
    return mode == UploadMode::kFull ? "full" : "summary";
}

UploadMode upload_mode_from_name(const std::string& name) {
    if (name == "full") return UploadMode::kFull;
    if (name == "summary") return UploadMode::kSummary;
    throw std::invalid_argument("unknown upload mode '" + name + "' (expected full|summary)");
}

std::string payload_to_json(const RoundPayload& payload) {
    json msg;
    msg["round"] = payload.round;
    msg["client_id"] = payload.client_id;
    msg["embed_dim"] = payload.embed_dim;
    msg["mode"] = upload_mode_name(payload.mode);
    if (payload.mode == UploadMode::kFull) {
        json records = json::array();
        for (const auto& rec : payload.records) {
            records.push_back({{"logits", rec.logits}, {"label", rec.label}});
        }
        msg["records"] = std::move(records);
    } else {
        json summaries = json::array();
        for (const auto& s : payload.summaries) {
            summaries.push_back(
                {{"class", s.class_id}, {"count", s.count}, {"mean_logit", s.mean_logit}});
        }
        msg["summaries"] = std::move(summaries);
    }
    return msg.dump();
}

RoundPayload payload_from_json(const std::string& text) {
    const json msg = json::parse(text);
    RoundPayload payload;
    payload.round = msg.at("round").get<int>();
    payload.client_id = msg.at("client_id").get<int>();
    payload.embed_dim = msg.at("embed_dim").get<std::size_t>();
    payload.mode = upload_mode_from_name(msg.at("mode").get<std::string>());
    if (payload.mode == UploadMode::kFull) {
        for (const auto& rec : msg.at("records")) {
            payload.records.push_back(LogitRecord{payload.client_id,
                                                  rec.at("logits").get<std::vector<double>>(),
                                                  rec.at("label").get<int>()});
        }
    } else {
        for (const auto& s : msg.at("summaries")) {
            payload.summaries.push_back(ClassSummary{payload.client_id, s.at("class").get<int>(),
                                                     s.at("mean_logit").get<std::vector<double>>(),
                                                     s.at("count").get<std::size_t>()});
        }
    }
    return payload;
}

std::string response_to_json(const RoundResponse& response) {
    json msg;
    msg["round"] = response.round;
    msg["client_id"] = response.client_id;
    json rows = json::array();
    for (std::size_t c = 0; c < response.table.rows.size(); ++c) {
        const auto& row = response.table.rows[c];
        rows.push_back({{"class", c}, {"present", row.present}, {"logits", row.logits}});
    }
    msg["table"] = std::move(rows);
    return msg.dump();
}

RoundResponse response_from_json(const std::string& text) {
    const json msg = json::parse(text);
    RoundResponse response;
    response.round = msg.at("round").get<int>();
    response.client_id = msg.at("client_id").get<int>();
    for (const auto& row : msg.at("table")) {
        const auto c = row.at("class").get<std::size_t>();
        if (response.table.rows.size() <= c) response.table.rows.resize(c + 1);
        response.table.rows[c].present = row.at("present").get<bool>();
        response.table.rows[c].logits = row.at("logits").get<std::vector<double>>();
    }
    return response;
}

}  // namespace fedhpl
