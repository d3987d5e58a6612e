// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "moeffd/backbone.hpp"

namespace moeffd {

// Independent seed streams derived from one run seed.
enum class SeedStream : std::uint64_t { Init = 1, Data = 2, Noise = 3 };

template <typename T>
struct TransformerBlock {
    ViTBlockWeights<T> vit;
    MoELoRALayer<T> lora;
    MoEAdapterLayer<T> adapter;
};

/// Frozen ViT with one MoE LoRA layer and one MoE adapter layer per block and
/// a trainable two-way head on the final (frozen) layer-normed class token.
template <typename T>
class MoEFFDModel {
public:
    MoEFFDModel() = default;
    // Validates the config and draws every initial weight from the Init stream of `run_seed`.
    MoEFFDModel(const ModelConfig& cfg, std::uint64_t run_seed);

    const ModelConfig& config() const { return cfg_; }

    PatchEmbedding<T> embed;
    std::vector<TransformerBlock<T>> blocks;
    Parameter<T> norm_scale, norm_shift;  // [D]
    Parameter<T> head_w;                  // [D × 2]
    Parameter<T> head_b;                  // [2]

    // Every parameter in a fixed walk order: embedding, blocks (ViT, LoRA
    // experts, LoRA gate, adapter experts, adapter gate), final norm, head.
    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;

    // Same architecture and values in another precision.
    template <typename U>
    MoEFFDModel<U> cast() const {
        MoEFFDModel<U> out(cfg_, 0);
        auto dst = out.parameters();
        auto src = parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i]->value = src[i]->value.template cast<U>();
            dst[i]->frozen = src[i]->frozen;
        }
        return out;
    }

private:
    ModelConfig cfg_;
};

template <typename T>
struct ParameterPartition {
    std::vector<const Parameter<T>*> trainable;
    std::vector<const Parameter<T>*> frozen;
};

template <typename T>
ParameterPartition<T> freeze_partition(const MoEFFDModel<T>& model);

template <typename T>
std::size_t count_params(const std::vector<const Parameter<T>*>& params);

// Σ 3·r_i·(D+dim) + experts·(2·d_mid·D + 9·d_mid²) + gates + head, per block.
std::size_t closed_form_trainable_count(const ModelConfig& cfg);

enum class GateType : std::uint8_t { LoRA, Adapter };
std::string gate_type_name(GateType t);

struct GateRecord {
    std::size_t block = 0;
    GateType type = GateType::LoRA;
    GateDecision decision;
};

template <typename T>
struct GateSlot {
    std::size_t block;
    GateType type;
    GateOutput<T> out;
};

template <typename T>
struct SampleOutput {
    Var<T> logits;  // [1 × 2]
    std::vector<GateSlot<T>> gates;
};

template <typename T>
SampleOutput<T> forward_sample(Tape<T>& tape, const MoEFFDModel<T>& model, const Tensor<T>& image, bool training,
                               Rng* rng);

template <typename T>
struct ForwardResult {
    Tensor<T> logits;                               // [B × 2]
    std::vector<std::vector<GateRecord>> records;   // per sample, in gate order
};

template <typename T>
ForwardResult<T> model_forward(std::span<const Tensor<T>* const> images, const MoEFFDModel<T>& model, bool training,
                               Rng* rng);

struct LossBreakdown {
    double total = 0.0;
    double ce = 0.0;
    double moe = 0.0;  // Σ over gates of CV², before λ
};

// Mean cross-entropy + λ·Σ_gates CV²(importance). Labels: 0 real, 1 fake.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& logits, std::span<const int> labels,
                         const std::vector<std::vector<GateRecord>>& records, double lambda);

template <typename T>
struct BatchGradients {
    LossBreakdown loss;
    ForwardResult<T> forward;
    std::vector<Tensor<T>> grads;  // aligned with model.parameters(); zero for frozen tensors
};

template <typename T>
BatchGradients<T> compute_batch_gradients(const MoEFFDModel<T>& model, std::span<const Tensor<T>* const> images,
                                          std::span<const int> labels, double lambda, bool training, Rng* rng);

struct AdamConfig {
    double lr_gate = 1e-4;
    double lr_other = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m, v;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>*>& params);

// Bias-corrected Adam; W_gate/W_noise use lr_gate, every other trainable lr_other.
// Frozen parameters are skipped. Non-finite gradients raise NumericError before any update.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

}  // namespace moeffd
