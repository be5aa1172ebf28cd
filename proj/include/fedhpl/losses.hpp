#pragma once

#include <cstddef>
#include <vector>

#include "fedhpl/federation.hpp"
#include "fedhpl/tensor.hpp"

namespace fedhpl {

struct LossConfig {
    double gamma = 1.0;
    double temperature = 4.5;
};

// Temperature softmax phi_T(p)_c = exp(p_c/T) / sum exp(p_c'/T), computed with
// max subtraction. Rejects T <= 0 and non-finite logits.
std::vector<double> softmax_temp(const std::vector<double>& logits, double temperature);

// Supervised cross-entropy -log softmax(logits)[label] (temperature 1).
double ce_loss(const std::vector<double>& logits, std::size_t label);

// KL(phi_T(global) || phi_T(local)); the global side is a constant target.
double kd_loss(const std::vector<double>& global_logit, const std::vector<double>& local_logit,
               double temperature);

struct KdParts {
    double cross_entropy = 0.0;  // ce(phi_T(global), phi_T(local))
    double entropy = 0.0;        // I(phi_T(global))
};

// Diagnostic decomposition: kd_loss == cross_entropy - entropy.
KdParts kd_decompose(const std::vector<double>& global_logit,
                     const std::vector<double>& local_logit, double temperature);

// Batch objective (1/bs) * [sum_i ce(p_i, y_i) + gamma * sum_i kd(p~_{y_i}, p_i)].
// Classes absent from the table fall back to the local logit, zeroing the
// distillation term for that sample. Pass nullptr for the table when the
// round has no global knowledge yet; the gamma term is then inactive.
double total_objective(const std::vector<std::vector<double>>& batch_logits,
                       const std::vector<int>& labels, const ClientLogitTable* table,
                       const LossConfig& cfg);

// ---- differentiable variants (built on the tape) ----------------------------

// -log_softmax(logits)[label] as a graph node; logits has shape (n_c).
ad::Tensor ce_loss_node(ad::Tape& tape, const ad::Tensor& logits, std::size_t label);

// KL(phi_T(global) || phi_T(local)) with the global argument detached: no
// gradient ever flows into it.
ad::Tensor kd_loss_node(ad::Tape& tape, const ad::Tensor& global_logit,
                        const ad::Tensor& local_logit, double temperature);
ad::Tensor kd_loss_node(ad::Tape& tape, const std::vector<double>& global_logit,
                        const ad::Tensor& local_logit, double temperature);

// Differentiable batch objective over per-sample logit nodes.
ad::Tensor total_objective_node(ad::Tape& tape, const std::vector<ad::Tensor>& batch_logits,
                                const std::vector<int>& labels, const ClientLogitTable* table,
                                const LossConfig& cfg);

}  // namespace fedhpl
