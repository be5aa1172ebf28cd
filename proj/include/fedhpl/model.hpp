#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedhpl/tensor.hpp"

namespace fedhpl {

// Structural description of a frozen transformer backbone. Every weight shape
// is derivable from this record.
struct BackboneSpec {
    std::size_t num_layers = 0;  // N_k
    std::size_t embed_dim = 0;   // d_k
    std::size_t num_heads = 0;
    double mlp_ratio = 4.0;
    std::size_t patch_count = 0;  // M
    std::size_t input_dim = 0;    // flattened patch size

    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t hidden_dim() const {
        return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
    }
    void validate() const;
};

enum class InsertionMode { kShallow, kDeep };

std::string insertion_mode_name(InsertionMode mode);
InsertionMode insertion_mode_from_name(const std::string& name);

// Pre-norm encoder block weights: layernorm -> attention -> residual ->
// layernorm -> MLP -> residual.
struct BlockWeights {
    ad::Tensor ln1_gain, ln1_bias;
    ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Tensor ln2_gain, ln2_bias;
    ad::Tensor w1, b1, w2, b2;
};

struct ParamCount {
    std::size_t prompt_params = 0;
    std::size_t head_params = 0;
    std::size_t total = 0;
};

// Frozen backbone plus trainable prompts and classification head. The
// backbone tensors never change after construction; only the prompt blocks
// and the head receive gradients and SGD updates.
struct ClientModel {
    BackboneSpec spec;
    std::size_t n_c = 0;
    InsertionMode mode = InsertionMode::kDeep;
    std::size_t prompt_len = 0;  // n
    std::uint64_t seed = 0;

    // Frozen (requires_grad == false after construction).
    ad::Tensor patch_weight;  // (input_dim, d)
    ad::Tensor patch_bias;    // (d)
    ad::Tensor pos_encoding;  // (M, d)
    ad::Tensor cls_token;     // (1, d)
    std::vector<BlockWeights> blocks;

    // Trainable.
    std::vector<ad::Tensor> prompts;  // one (n, d) block shallow, N blocks deep
    ad::Tensor head_weight;           // (d, n_c)
    ad::Tensor head_bias;             // (n_c)

    // Momentum state aligned with trainable().
    std::vector<std::vector<double>> velocity;

    std::vector<ad::Tensor> trainable() const;
    std::vector<ad::Tensor> frozen() const;
};

// Builds a client model from a seeded scaled-normal backbone init. When
// pretext_steps > 0 the backbone is first trained end to end on a synthetic
// pretext classification task and then frozen, emulating a pre-trained
// initialization of better quality.
ClientModel init_client_model(const BackboneSpec& spec, std::size_t n_c, InsertionMode mode,
                              std::size_t prompt_len, std::uint64_t seed,
                              std::size_t pretext_steps = 0);

// Patch projection plus position encoding: x -> (M, d) on the tape.
ad::Tensor embed_patches(const ClientModel& model, ad::Tape& tape,
                         const std::vector<double>& sample);

// Full forward pass; returns raw (unsoftmaxed) logits of shape (n_c).
ad::Tensor forward(const ClientModel& model, ad::Tape& tape, const std::vector<double>& sample);

// Forward pass on a throwaway tape; plain logit values.
std::vector<double> predict(const ClientModel& model, const std::vector<double>& sample);

ParamCount trainable_param_count(const ClientModel& model);

// Closed-form count; handles the degenerate n == 0 (head-only) case.
ParamCount param_count_formula(std::size_t embed_dim, std::size_t num_layers,
                               std::size_t prompt_len, std::size_t n_c, InsertionMode mode);

// Extents of every trainable tensor such a model would construct, in
// declaration order. Builds the actual tensor objects (no backbone), so it
// enumerates rather than recomputes the closed form.
std::vector<std::size_t> trainable_tensor_extents(std::size_t embed_dim, std::size_t num_layers,
                                                  std::size_t prompt_len, std::size_t n_c,
                                                  InsertionMode mode);

// Momentum SGD over prompts and head with L2 decay added to the gradient
// before the momentum update. Gradients must exist (backward ran) and are
// cleared afterwards; the backbone is untouched.
void sgd_step(ClientModel& model, double lr, double momentum, double weight_decay);

// FNV-1a over the byte image of every frozen tensor.
std::uint64_t backbone_hash(const ClientModel& model);

// Versioned checkpoint: header (spec, mode, n, n_c, seed) followed by flat
// little-endian 64-bit float arrays in declaration order.
void save_checkpoint(const ClientModel& model, const std::string& path);
ClientModel load_checkpoint(const std::string& path);

}  // namespace fedhpl
