// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Noisy Top-k gating and the coefficient-of-variation balancing loss.
//
//   H(x) = x_m·W_gate + ε ⊙ softplus(x_m·W_noise),  ε ~ N(0, I) in training only
//   G(x) = softmax over the k largest entries of H(x), zero elsewhere
//   L_moe = (std(Importance) / mean(Importance))²,  Importance = Σ_batch G(x)
//
// x_m is the token-average of the layer input. Ties in the Top-k selection
// go to the lower expert index; std is the population standard deviation.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moeffd/autograd.hpp"
#include "moeffd/rng.hpp"
#include "moeffd/tensor.hpp"

namespace moeffd {

template <typename T>
struct GateWeights {
    Parameter<T> w_gate;   // [dim × N_e]
    Parameter<T> w_noise;  // [dim × N_e]

    std::size_t num_experts() const { return w_gate.value.dim(1); }
};

// W_gate ~ truncated normal(init_std), W_noise = 0. Both join the gate lr group.
template <typename T>
GateWeights<T> make_gate(const std::string& prefix, std::size_t dim, std::size_t num_experts, double init_std, Rng& rng);

struct GateDecision {
    std::vector<double> clean_logits;
    std::vector<double> noisy_logits;
    std::vector<double> noise;            // ε draws; empty outside training
    std::vector<std::size_t> selected;    // descending logit, ties → lower index
    std::vector<double> weights;          // zero off the selected set

    std::size_t top1() const { return selected.front(); }
};

template <typename T>
struct GateLogits {
    Tensor<T> clean;  // [N_e]
    Tensor<T> noisy;  // [N_e]
    Tensor<T> noise;  // [N_e]; empty when not training
};

template <typename T>
GateLogits<T> gate_logits(const Tensor<T>& x_m, const GateWeights<T>& gate, bool training, Rng* rng);

// Indices of the k largest values, ordered by descending value with ties → lower index.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

GateDecision topk_gate(std::span<const double> noisy, std::size_t k);

// Σ over the batch of the gate weight vectors.
std::vector<double> importance(std::span<const GateDecision> decisions);

double moe_loss(std::span<const double> imp);
// ∂ moe_loss / ∂ imp
std::vector<double> moe_loss_grad(std::span<const double> imp);

// Differentiable routing of one token sequence [N_t × dim].
template <typename T>
struct GateOutput {
    GateDecision decision;
    Var<T> weights;  // [N_e], depends on W_gate / W_noise
};

template <typename T>
GateOutput<T> route(Var<T> tokens, const GateWeights<T>& gate, std::size_t k, bool training, Rng* rng);

// Running per-gate importance over a batch.
class ImportanceAccumulator {
public:
    explicit ImportanceAccumulator(std::size_t num_experts) : sums_(num_experts, 0.0) {}
    void add(const GateDecision& d);
    void reset();
    const std::vector<double>& sums() const { return sums_; }
    std::size_t count() const { return count_; }

private:
    std::vector<double> sums_;
    std::size_t count_ = 0;
};

}  // namespace moeffd
