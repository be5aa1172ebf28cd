#include "fedhpl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedhpl {

namespace {

void check_temperature(double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("temperature must be positive, got " +
                                    std::to_string(temperature));
    }
}

// log phi_T(p) computed as p/T - logsumexp(p/T); stable for large magnitudes.
std::vector<double> log_softmax_temp(const std::vector<double>& logits, double temperature) {
    std::vector<double> out(logits.size());
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    m /= temperature;
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] / temperature;
        total += std::exp(out[i] - m);
    }
    const double lse = m + std::log(total);
    for (auto& v : out) v -= lse;
    return out;
}

void check_pair(const std::vector<double>& global_logit, const std::vector<double>& local_logit,
                double temperature) {
    check_temperature(temperature);
    if (global_logit.size() != local_logit.size()) {
        throw std::invalid_argument("kd_loss: global length " +
                                    std::to_string(global_logit.size()) + " vs local length " +
                                    std::to_string(local_logit.size()));
    }
    if (global_logit.empty()) throw std::invalid_argument("kd_loss: empty logits");
}

}  // namespace

std::vector<double> softmax_temp(const std::vector<double>& logits, double temperature) {
    check_temperature(temperature);
    if (logits.empty()) throw std::invalid_argument("softmax_temp: empty logits");
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax_temp: non-finite logit");
    }
    const auto log_probs = log_softmax_temp(logits, temperature);
    std::vector<double> out(log_probs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_probs[i]);
    return out;
}

double ce_loss(const std::vector<double>& logits, std::size_t label) {
    if (label >= logits.size()) {
        throw std::invalid_argument("ce_loss: label " + std::to_string(label) + " outside " +
                                    std::to_string(logits.size()) + " classes");
    }
    return -log_softmax_temp(logits, 1.0)[label];
}

double kd_loss(const std::vector<double>& global_logit, const std::vector<double>& local_logit,
               double temperature) {
    check_pair(global_logit, local_logit, temperature);
    const auto log_q = log_softmax_temp(global_logit, temperature);
    const auto log_p = log_softmax_temp(local_logit, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < log_q.size(); ++i) {
        kl += std::exp(log_q[i]) * (log_q[i] - log_p[i]);
    }
    return kl;
}

KdParts kd_decompose(const std::vector<double>& global_logit,
                     const std::vector<double>& local_logit, double temperature) {
    check_pair(global_logit, local_logit, temperature);
    const auto log_q = log_softmax_temp(global_logit, temperature);
    const auto log_p = log_softmax_temp(local_logit, temperature);
    KdParts parts;
    for (std::size_t i = 0; i < log_q.size(); ++i) {
        const double q = std::exp(log_q[i]);
        parts.cross_entropy -= q * log_p[i];
        parts.entropy -= q * log_q[i];
    }
    return parts;
}

double total_objective(const std::vector<std::vector<double>>& batch_logits,
                       const std::vector<int>& labels, const ClientLogitTable* table,
                       const LossConfig& cfg) {
    if (batch_logits.size() != labels.size()) {
        throw std::invalid_argument("total_objective: " + std::to_string(batch_logits.size()) +
                                    " logits vs " + std::to_string(labels.size()) + " labels");
    }
    if (batch_logits.empty()) throw std::invalid_argument("total_objective: empty batch");
    double ce_total = 0.0;
    double kd_total = 0.0;
    for (std::size_t i = 0; i < batch_logits.size(); ++i) {
        const auto label = static_cast<std::size_t>(labels[i]);
        ce_total += ce_loss(batch_logits[i], label);
        if (table != nullptr && cfg.gamma > 0.0) {
            const auto& target = apply_fallback(*table, batch_logits[i], label);
            kd_total += kd_loss(target, batch_logits[i], cfg.temperature);
        }
    }
    return (ce_total + cfg.gamma * kd_total) / static_cast<double>(batch_logits.size());
}

ad::Tensor ce_loss_node(ad::Tape& tape, const ad::Tensor& logits, std::size_t label) {
    const std::size_t n_c = logits.size();
    if (label >= n_c) {
        throw std::invalid_argument("ce_loss: label " + std::to_string(label) + " outside " +
                                    std::to_string(n_c) + " classes");
    }
    const ad::Tensor log_probs = ad::log_softmax(tape, logits);
    const ad::Tensor picked = ad::slice(tape, log_probs, 0, label, 1);
    return ad::scale(tape, ad::sum(tape, picked), -1.0);
}

ad::Tensor kd_loss_node(ad::Tape& tape, const ad::Tensor& global_logit,
                        const ad::Tensor& local_logit, double temperature) {
    return kd_loss_node(tape, global_logit.values(), local_logit, temperature);
}

ad::Tensor kd_loss_node(ad::Tape& tape, const std::vector<double>& global_logit,
                        const ad::Tensor& local_logit, double temperature) {
    check_pair(global_logit, local_logit.values(), temperature);
    const auto log_q = log_softmax_temp(global_logit, temperature);
    std::vector<double> q(log_q.size());
    double entropy = 0.0;
    for (std::size_t i = 0; i < log_q.size(); ++i) {
        q[i] = std::exp(log_q[i]);
        entropy -= q[i] * log_q[i];
    }
    // KL = -I(q) - sum_c q_c * log phi_T(local)_c; only the local side is a node.
    const ad::Tensor target = ad::Tensor::leaf({q.size()}, q);
    const ad::Tensor log_p = ad::log_softmax(tape, ad::scale(tape, local_logit, 1.0 / temperature));
    const ad::Tensor cross = ad::scale(tape, ad::sum(tape, ad::mul(tape, target, log_p)), -1.0);
    return ad::add(tape, cross, ad::Tensor::scalar(-entropy));
}

ad::Tensor total_objective_node(ad::Tape& tape, const std::vector<ad::Tensor>& batch_logits,
                                const std::vector<int>& labels, const ClientLogitTable* table,
                                const LossConfig& cfg) {
    if (batch_logits.size() != labels.size()) {
        throw std::invalid_argument("total_objective: " + std::to_string(batch_logits.size()) +
                                    " logits vs " + std::to_string(labels.size()) + " labels");
    }
    if (batch_logits.empty()) throw std::invalid_argument("total_objective: empty batch");
    ad::Tensor total = ad::Tensor::scalar(0.0);
    for (std::size_t i = 0; i < batch_logits.size(); ++i) {
        const auto label = static_cast<std::size_t>(labels[i]);
        total = ad::add(tape, total, ce_loss_node(tape, batch_logits[i], label));
        if (table != nullptr && cfg.gamma > 0.0) {
            const auto& target = apply_fallback(*table, batch_logits[i].values(), label);
            const ad::Tensor kd = kd_loss_node(tape, target, batch_logits[i], cfg.temperature);
            total = ad::add(tape, total, ad::scale(tape, kd, cfg.gamma));
        }
    }
    return ad::scale(tape, total, 1.0 / static_cast<double>(batch_logits.size()));
}

}  // namespace fedhpl
