#include "fedhpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fedhpl/data.hpp"
#include "fedhpl/rng.hpp"

namespace fedhpl {

namespace ad = fedhpl::ad;

void BackboneSpec::validate() const {
    if (num_layers == 0 || embed_dim == 0 || num_heads == 0 || patch_count == 0 || input_dim == 0) {
        throw std::invalid_argument("backbone spec: all extents must be positive");
    }
    if (embed_dim % num_heads != 0) {
        throw std::invalid_argument("backbone spec: embed_dim " + std::to_string(embed_dim) +
                                    " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (!(mlp_ratio > 0.0)) {
        throw std::invalid_argument("backbone spec: mlp_ratio must be positive");
    }
    if (hidden_dim() == 0) {
        throw std::invalid_argument("backbone spec: mlp hidden dimension rounds to zero");
    }
}

std::string insertion_mode_name(InsertionMode mode) {
    return mode == InsertionMode::kShallow ? "shallow" : "deep";
}

InsertionMode insertion_mode_from_name(const std::string& name) {
    if (name == "shallow") return InsertionMode::kShallow;
    if (name == "deep") return InsertionMode::kDeep;
    throw std::invalid_argument("unknown insertion mode '" + name + "' (expected shallow|deep)");
}

namespace {

ad::Tensor normal_init(Rng& rng, ad::Shape shape, double stddev) {
    std::vector<double> values(ad::shape_numel(shape));
    for (auto& v : values) v = stddev * rng.normal();
    return ad::Tensor::leaf(std::move(shape), std::move(values));
}

// Scaled-normal weight init: std = sqrt(2 / (fan_in + fan_out)).
ad::Tensor weight_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return normal_init(rng, {fan_in, fan_out}, stddev);
}

BlockWeights init_block(Rng& rng, const BackboneSpec& spec) {
    const std::size_t d = spec.embed_dim;
    const std::size_t h = spec.hidden_dim();
    BlockWeights b;
    b.ln1_gain = ad::Tensor::full({d}, 1.0);
    b.ln1_bias = ad::Tensor::zeros({d});
    b.wq = weight_init(rng, d, d);
    b.bq = ad::Tensor::zeros({d});
    b.wk = weight_init(rng, d, d);
    b.bk = ad::Tensor::zeros({d});
    b.wv = weight_init(rng, d, d);
    b.bv = ad::Tensor::zeros({d});
    b.wo = weight_init(rng, d, d);
    b.bo = ad::Tensor::zeros({d});
    b.ln2_gain = ad::Tensor::full({d}, 1.0);
    b.ln2_bias = ad::Tensor::zeros({d});
    b.w1 = weight_init(rng, d, h);
    b.b1 = ad::Tensor::zeros({h});
    b.w2 = weight_init(rng, h, d);
    b.b2 = ad::Tensor::zeros({d});
    return b;
}

std::vector<ad::Tensor> block_tensors(const BlockWeights& b) {
    return {b.ln1_gain, b.ln1_bias, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv,
            b.wo,       b.bo,       b.ln2_gain, b.ln2_bias, b.w1, b.b1, b.w2, b.b2};
}

ad::Tensor linear(ad::Tape& tape, const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
    return ad::add_rowvec(tape, ad::matmul(tape, x, w), b);
}

ad::Tensor attention(ad::Tape& tape, const ad::Tensor& x, const BlockWeights& blk,
                     const BackboneSpec& spec) {
    const std::size_t dh = spec.head_dim();
    const ad::Tensor q = linear(tape, x, blk.wq, blk.bq);
    const ad::Tensor k = linear(tape, x, blk.wk, blk.bk);
    const ad::Tensor v = linear(tape, x, blk.wv, blk.bv);
    std::vector<ad::Tensor> heads;
    heads.reserve(spec.num_heads);
    for (std::size_t h = 0; h < spec.num_heads; ++h) {
        const ad::Tensor qh = ad::slice(tape, q, 1, h * dh, dh);
        const ad::Tensor kh = ad::slice(tape, k, 1, h * dh, dh);
        const ad::Tensor vh = ad::slice(tape, v, 1, h * dh, dh);
        ad::Tensor scores = ad::matmul(tape, qh, ad::transpose(tape, kh));
        scores = ad::scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(dh)));
        const ad::Tensor attn = ad::softmax(tape, scores);
        heads.push_back(ad::matmul(tape, attn, vh));
    }
    const ad::Tensor merged = spec.num_heads == 1 ? heads.front() : ad::concat(tape, heads, 1);
    return linear(tape, merged, blk.wo, blk.bo);
}

ad::Tensor encoder_block(ad::Tape& tape, const ad::Tensor& x, const BlockWeights& blk,
                         const BackboneSpec& spec) {
    const ad::Tensor normed1 = ad::layer_norm(tape, x, blk.ln1_gain, blk.ln1_bias);
    const ad::Tensor attended = ad::add(tape, x, attention(tape, normed1, blk, spec));
    const ad::Tensor normed2 = ad::layer_norm(tape, attended, blk.ln2_gain, blk.ln2_bias);
    ad::Tensor hidden = linear(tape, normed2, blk.w1, blk.b1);
    hidden = ad::gelu(tape, hidden);
    const ad::Tensor mlp_out = linear(tape, hidden, blk.w2, blk.b2);
    return ad::add(tape, attended, mlp_out);
}

// Token sequence through the backbone; `prompts` is empty for a prompt-free
// pass (used by the pretext warmup) or holds one/N blocks per insertion mode.
ad::Tensor run_backbone(ad::Tape& tape, const ClientModel& model, const ad::Tensor& embedded,
                        const std::vector<ad::Tensor>& prompts) {
    const std::size_t n = prompts.empty() ? 0 : model.prompt_len;
    const std::size_t m = model.spec.patch_count;
    std::vector<ad::Tensor> first = {model.cls_token};
    if (!prompts.empty()) first.push_back(prompts.front());
    first.push_back(embedded);
    ad::Tensor tokens = ad::concat(tape, first, 0);
    for (std::size_t a = 0; a < model.spec.num_layers; ++a) {
        if (a > 0 && model.mode == InsertionMode::kDeep && !prompts.empty()) {
            // Deep insertion: replace the latent block with fresh prompts.
            const ad::Tensor cls = ad::slice(tape, tokens, 0, 0, 1);
            const ad::Tensor patches = ad::slice(tape, tokens, 0, 1 + n, m);
            tokens = ad::concat(tape, {cls, prompts[a], patches}, 0);
        }
        tokens = encoder_block(tape, tokens, model.blocks[a], model.spec);
    }
    return tokens;
}

ad::Tensor head_logits(ad::Tape& tape, const ClientModel& model, const ad::Tensor& tokens) {
    const ad::Tensor cls = ad::slice(tape, tokens, 0, 0, 1);
    const ad::Tensor out = linear(tape, cls, model.head_weight, model.head_bias);
    return ad::reshape(tape, out, {model.n_c});
}

void set_trainable_flags(ClientModel& model, bool backbone, bool task_params) {
    for (auto& t : model.frozen()) t.set_requires_grad(backbone);
    for (auto& t : model.trainable()) t.set_requires_grad(task_params);
}

// Short end-to-end supervised warmup on synthetic blobs with every parameter
// trainable; emulates a pre-trained backbone of better quality than raw init.
void pretext_warmup(ClientModel& model, std::size_t steps, std::uint64_t seed) {
    constexpr std::size_t kPretextBatch = 16;
    constexpr std::size_t kPretextPerClass = 32;
    constexpr double kPretextNoise = 0.5;
    constexpr double kPretextLr = 0.01;
    // A label space at least as rich as the downstream task makes the learned
    // features transfer instead of collapsing onto a few directions.
    const std::size_t kPretextClasses = std::max<std::size_t>(10, model.n_c);
    const std::size_t feature_dim = model.spec.patch_count * model.spec.input_dim;
    Dataset pretext = gen_synthetic(kPretextClasses, kPretextPerClass, feature_dim,
                                    model.spec.patch_count, model.spec.input_dim,
                                    kPretextNoise, derive_seed(seed, "pretext-data"));
    set_trainable_flags(model, true, true);
    model.velocity.clear();

    // The warmup trains the backbone against a throwaway pretext head; the
    // task head and prompts belong to downstream training.
    Rng head_rng(derive_seed(seed, "pretext-head"));
    const double head_std = std::sqrt(2.0 / static_cast<double>(model.spec.embed_dim));
    std::vector<double> head_values(model.spec.embed_dim * kPretextClasses);
    for (auto& v : head_values) v = head_std * head_rng.normal();
    ad::Tensor pretext_head_w =
        ad::Tensor::leaf({model.spec.embed_dim, kPretextClasses}, std::move(head_values), true);
    ad::Tensor pretext_head_b = ad::Tensor::zeros({kPretextClasses}, true);

    std::vector<ad::Tensor> params = model.frozen();
    params.push_back(pretext_head_w);
    params.push_back(pretext_head_b);
    std::vector<std::vector<double>> velocity(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].size(), 0.0);

    Rng order_rng(derive_seed(seed, "pretext-order"));
    std::vector<std::size_t> order(pretext.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        ad::Tape tape;
        ad::Tensor loss = ad::Tensor::scalar(0.0);
        for (std::size_t b = 0; b < kPretextBatch; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const auto& sample = pretext.samples[order[cursor++]];
            const ad::Tensor embedded = embed_patches(model, tape, sample.features);
            const ad::Tensor tokens = run_backbone(tape, model, embedded, {});
            const ad::Tensor cls = ad::slice(tape, tokens, 0, 0, 1);
            const ad::Tensor logits = ad::reshape(
                tape, ad::add_rowvec(tape, ad::matmul(tape, cls, pretext_head_w), pretext_head_b),
                {kPretextClasses});
            const ad::Tensor log_probs = ad::log_softmax(tape, logits);
            const ad::Tensor picked =
                ad::slice(tape, log_probs, 0, static_cast<std::size_t>(sample.label), 1);
            loss = ad::add(tape, loss, ad::scale(tape, ad::sum(tape, picked), -1.0));
        }
        loss = ad::scale(tape, loss, 1.0 / static_cast<double>(kPretextBatch));
        tape.backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const auto grad = p.grad();
            for (std::size_t j = 0; j < grad.size(); ++j) {
                velocity[i][j] = 0.9 * velocity[i][j] + grad[j];
                p.values()[j] -= kPretextLr * velocity[i][j];
            }
            p.drop_grad();
        }
    }
    set_trainable_flags(model, false, true);
}

}  // namespace

std::vector<ad::Tensor> ClientModel::trainable() const {
    std::vector<ad::Tensor> out = prompts;
    out.push_back(head_weight);
    out.push_back(head_bias);
    return out;
}

std::vector<ad::Tensor> ClientModel::frozen() const {
    std::vector<ad::Tensor> out = {patch_weight, patch_bias, pos_encoding, cls_token};
    for (const auto& blk : blocks) {
        const auto tensors = block_tensors(blk);
        out.insert(out.end(), tensors.begin(), tensors.end());
    }
    return out;
}

ClientModel init_client_model(const BackboneSpec& spec, std::size_t n_c, InsertionMode mode,
                              std::size_t prompt_len, std::uint64_t seed,
                              std::size_t pretext_steps) {
    spec.validate();
    if (n_c < 2) throw std::invalid_argument("init_client_model: need at least two classes");
    if (prompt_len < 1) throw std::invalid_argument("init_client_model: prompt_len must be >= 1");

    ClientModel model;
    model.spec = spec;
    model.n_c = n_c;
    model.mode = mode;
    model.prompt_len = prompt_len;
    model.seed = seed;

    const std::size_t d = spec.embed_dim;
    Rng rng(derive_seed(seed, "backbone"));
    model.patch_weight = weight_init(rng, spec.input_dim, d);
    model.patch_bias = ad::Tensor::zeros({d});
    model.pos_encoding = normal_init(rng, {spec.patch_count, d}, 0.02);
    model.cls_token = normal_init(rng, {1, d}, 0.02);
    model.blocks.reserve(spec.num_layers);
    for (std::size_t a = 0; a < spec.num_layers; ++a) model.blocks.push_back(init_block(rng, spec));

    model.head_weight = ad::Tensor::zeros({d, n_c}, true);
    model.head_bias = ad::Tensor::zeros({n_c}, true);

    if (pretext_steps > 0) pretext_warmup(model, pretext_steps, seed);

    // Prompt init: uniform fan-based range (VPT convention).
    const double r = std::sqrt(6.0 / static_cast<double>(d + prompt_len * d));
    const std::size_t prompt_blocks = mode == InsertionMode::kDeep ? spec.num_layers : 1;
    Rng prompt_rng(derive_seed(seed, "prompts"));
    for (std::size_t a = 0; a < prompt_blocks; ++a) {
        std::vector<double> values(prompt_len * d);
        for (auto& v : values) v = prompt_rng.uniform(-r, r);
        model.prompts.push_back(ad::Tensor::leaf({prompt_len, d}, std::move(values), true));
    }

    set_trainable_flags(model, false, true);
    const auto params = model.trainable();
    model.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) model.velocity[i].assign(params[i].size(), 0.0);
    return model;
}

ad::Tensor embed_patches(const ClientModel& model, ad::Tape& tape,
                         const std::vector<double>& sample) {
    const std::size_t m = model.spec.patch_count;
    const std::size_t in = model.spec.input_dim;
    if (sample.size() != m * in) {
        throw std::invalid_argument("embed_patches: sample of length " +
                                    std::to_string(sample.size()) + " does not split into " +
                                    std::to_string(m) + " patches of " + std::to_string(in));
    }
    const ad::Tensor patches = ad::Tensor::leaf({m, in}, sample);
    ad::Tensor projected = linear(tape, patches, model.patch_weight, model.patch_bias);
    return ad::add(tape, projected, model.pos_encoding);
}

ad::Tensor forward(const ClientModel& model, ad::Tape& tape, const std::vector<double>& sample) {
    const ad::Tensor embedded = embed_patches(model, tape, sample);
    const ad::Tensor tokens = run_backbone(tape, model, embedded, model.prompts);
    return head_logits(tape, model, tokens);
}

std::vector<double> predict(const ClientModel& model, const std::vector<double>& sample) {
    ad::Tape tape;
    return forward(model, tape, sample).values();
}

ParamCount param_count_formula(std::size_t embed_dim, std::size_t num_layers,
                               std::size_t prompt_len, std::size_t n_c, InsertionMode mode) {
    ParamCount count;
    const std::size_t blocks = mode == InsertionMode::kDeep ? num_layers : 1;
    count.prompt_params = blocks * prompt_len * embed_dim;
    count.head_params = embed_dim * n_c + n_c;
    count.total = count.prompt_params + count.head_params;
    return count;
}

ParamCount trainable_param_count(const ClientModel& model) {
    return param_count_formula(model.spec.embed_dim, model.spec.num_layers, model.prompt_len,
                               model.n_c, model.mode);
}

std::vector<std::size_t> trainable_tensor_extents(std::size_t embed_dim, std::size_t num_layers,
                                                  std::size_t prompt_len, std::size_t n_c,
                                                  InsertionMode mode) {
    std::vector<ad::Tensor> tensors;
    if (prompt_len > 0) {
        const std::size_t blocks = mode == InsertionMode::kDeep ? num_layers : 1;
        for (std::size_t a = 0; a < blocks; ++a) {
            tensors.push_back(ad::Tensor::zeros({prompt_len, embed_dim}, true));
        }
    }
    tensors.push_back(ad::Tensor::zeros({embed_dim, n_c}, true));
    tensors.push_back(ad::Tensor::zeros({n_c}, true));
    std::vector<std::size_t> extents;
    extents.reserve(tensors.size());
    for (const auto& t : tensors) extents.push_back(t.size());
    return extents;
}

void sgd_step(ClientModel& model, double lr, double momentum, double weight_decay) {
    auto params = model.trainable();
    for (const auto& p : params) {
        if (!p.has_grad()) {
            throw std::runtime_error("sgd_step: missing gradients (run backward first)");
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& grad = p.node()->grad;
        auto& vel = model.velocity[i];
        for (std::size_t j = 0; j < grad.size(); ++j) {
            const double g = grad[j] + weight_decay * p.values()[j];
            vel[j] = momentum * vel[j] + g;
            p.values()[j] -= lr * vel[j];
        }
        p.drop_grad();
    }
}

std::uint64_t backbone_hash(const ClientModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const std::vector<double>& values) {
        for (double v : values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int shift = 0; shift < 64; shift += 8) {
                h ^= (bits >> shift) & 0xffULL;
                h *= 0x100000001b3ULL;
            }
        }
    };
    for (const auto& t : model.frozen()) mix_bytes(t.values());
    return h;
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4c504846;  // "FHPL"
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_u64(out, bits);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

std::vector<ad::Tensor> all_tensors(const ClientModel& model) {
    auto out = model.frozen();
    const auto params = model.trainable();
    out.insert(out.end(), params.begin(), params.end());
    return out;
}

}  // namespace

void save_checkpoint(const ClientModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    write_u64(out, (static_cast<std::uint64_t>(kCheckpointVersion) << 32) | kCheckpointMagic);
    write_u64(out, model.spec.num_layers);
    write_u64(out, model.spec.embed_dim);
    write_u64(out, model.spec.num_heads);
    write_f64(out, model.spec.mlp_ratio);
    write_u64(out, model.spec.patch_count);
    write_u64(out, model.spec.input_dim);
    write_u64(out, model.n_c);
    write_u64(out, model.mode == InsertionMode::kDeep ? 1 : 0);
    write_u64(out, model.prompt_len);
    write_u64(out, model.seed);
    for (const auto& t : all_tensors(model)) {
        for (double v : t.values()) write_f64(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

ClientModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    const std::uint64_t header = read_u64(in);
    if ((header & 0xffffffffULL) != kCheckpointMagic) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    if ((header >> 32) != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    BackboneSpec spec;
    spec.num_layers = read_u64(in);
    spec.embed_dim = read_u64(in);
    spec.num_heads = read_u64(in);
    spec.mlp_ratio = read_f64(in);
    spec.patch_count = read_u64(in);
    spec.input_dim = read_u64(in);
    const std::size_t n_c = read_u64(in);
    const InsertionMode mode = read_u64(in) == 1 ? InsertionMode::kDeep : InsertionMode::kShallow;
    const std::size_t prompt_len = read_u64(in);
    const std::uint64_t seed = read_u64(in);

    ClientModel model = init_client_model(spec, n_c, mode, prompt_len, seed, 0);
    for (auto& t : all_tensors(model)) {
        for (auto& v : t.values()) v = read_f64(in);
    }
    return model;
}

}  // namespace fedhpl
