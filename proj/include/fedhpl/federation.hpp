#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fedhpl {

// One correctly predicted raw logit vector with its label. Only constructed
// for pairs whose argmax (lowest index on ties) equals the label.
struct LogitRecord {
    int client_id = 0;
    std::vector<double> logits;
    int label = 0;
};

// Compressed upload: per-class mean of a client's correct logits plus the
// count it was averaged over. count == 0 carries a zero vector and is inert.
struct ClassSummary {
    int client_id = 0;
    int class_id = 0;
    std::vector<double> mean_logit;
    std::size_t count = 0;
};

struct ClientMeta {
    int client_id = 0;
    std::size_t embed_dim = 0;
    std::vector<std::size_t> per_class_counts;
};

struct ClassLogit {
    std::vector<double> logits;
    bool present = false;
};

// One client's view of the aggregated knowledge: class -> (logit, present).
struct ClientLogitTable {
    std::vector<ClassLogit> rows;

    std::size_t num_classes() const { return rows.size(); }
};

// Server output for a round, indexed by target client.
struct GlobalLogitTable {
    std::vector<ClientLogitTable> per_client;
};

// ---- client-side ops --------------------------------------------------------

// Keeps exactly the pairs whose argmax equals the label (ties break to the
// lowest index); input order is preserved.
std::vector<LogitRecord> filter_correct(
    const std::vector<std::pair<std::vector<double>, int>>& outputs, int client_id);

std::size_t argmax_lowest(const std::vector<double>& v);

// Per-class mean and count over one client's records. Returns one summary per
// class in class order.
std::vector<ClassSummary> summarize(const std::vector<LogitRecord>& records, std::size_t n_c);

// ---- server-side ops --------------------------------------------------------

// Heterogeneity weights beta[k][j] = min(d_k/d_j, d_j/d_k).
std::vector<std::vector<double>> compute_beta(const std::vector<std::size_t>& dims);

// Weighted per-class aggregation over raw uploads:
//   p~[k][c] = sum_j beta[k][j] * (sum of client j's class-c logits)
//            / (1 + sum_j beta[k][j] * count[j][c])
// where count is the uploaded correct count. present=false when no client
// uploaded anything for the class.
GlobalLogitTable aggregate_full(const std::vector<std::vector<LogitRecord>>& per_client_records,
                                const std::vector<ClientMeta>& metas, std::size_t n_c);

// Same aggregation from compressed uploads; the per-client numerator term is
// beta * count * mean.
GlobalLogitTable aggregate_summaries(
    const std::vector<std::vector<ClassSummary>>& per_client_summaries,
    const std::vector<ClientMeta>& metas, std::size_t n_c);

// Returns the aggregated logit for class c, or the local logit when the class
// is absent (which zeroes the distillation term for that sample).
const std::vector<double>& apply_fallback(const ClientLogitTable& table,
                                          const std::vector<double>& local_logit, std::size_t c);

// ---- homogeneous-parameter extension ----------------------------------------

// A flat trainable block tagged with its structural signature. Only blocks
// with identical keys are averaged together.
struct ParamSet {
    int client_id = 0;
    std::vector<std::size_t> key;
    std::vector<double> values;
};

// Element-wise mean within each signature group; singleton groups pass
// through unchanged. Output order matches input order.
std::vector<ParamSet> aggregate_homogeneous_params(const std::vector<ParamSet>& sets);

// ---- wire format -------------------------------------------------------------

enum class UploadMode { kFull, kSummary };

std::string upload_mode_name(UploadMode mode);
UploadMode upload_mode_from_name(const std::string& name);

struct RoundPayload {
    int round = 0;
    int client_id = 0;
    std::size_t embed_dim = 0;
    UploadMode mode = UploadMode::kFull;
    std::vector<LogitRecord> records;     // mode == kFull
    std::vector<ClassSummary> summaries;  // mode == kSummary

    // Logical upload size: 8-byte floats per logit coordinate plus one slot
    // for the label / count. Constant in summary mode, proportional to the
    // number of correct logits in full mode.
    std::uint64_t payload_bytes(std::size_t n_c) const;
};

struct RoundResponse {
    int round = 0;
    int client_id = 0;
    ClientLogitTable table;
};

std::string payload_to_json(const RoundPayload& payload);
RoundPayload payload_from_json(const std::string& text);
std::string response_to_json(const RoundResponse& response);
RoundResponse response_from_json(const std::string& text);

}  // namespace fedhpl
