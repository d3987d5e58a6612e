// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen pre-norm ViT: patch + positional embedding, class token, blocks of
// multi-head self-attention and a GELU MLP. The MoE LoRA layer perturbs the
// Q/K/V projections; the MoE adapter runs parallel to the MLP on LN₂'s output:
//
//   h  = LN₁(x)
//   x₁ = x + Attn(h; Q = hW_q + ΔQ, K = hW_k + ΔK, V = hW_v + ΔV)
//   y  = x₁ + MLP(LN₂(x₁)) + Adapter(LN₂(x₁))
#pragma once

#include <optional>
#include <vector>

#include "moeffd/adapter_moe.hpp"
#include "moeffd/lora_moe.hpp"
#include "moeffd/model_config.hpp"

namespace moeffd {

template <typename T>
struct PatchEmbedding {
    Parameter<T> proj;       // [C·P·P × D]
    Parameter<T> bias;       // [D]
    Parameter<T> cls_token;  // [D]
    Parameter<T> pos;        // [N_t × D]
};

template <typename T>
struct ViTBlockWeights {
    Parameter<T> ln1_scale, ln1_shift;  // [D]
    Parameter<T> w_q, w_k, w_v;         // [D × dim]
    Parameter<T> w_o;                   // [dim × D]
    Parameter<T> ln2_scale, ln2_shift;  // [D]
    Parameter<T> w1;                    // [D × 4D]
    Parameter<T> w2;                    // [4D × D]
};

// All frozen; matrices ~ truncated normal(init_std), layer norms at identity.
template <typename T>
PatchEmbedding<T> make_patch_embedding(const ModelConfig& cfg, Rng& rng);
template <typename T>
ViTBlockWeights<T> make_vit_block(const ModelConfig& cfg, const std::string& prefix, Rng& rng);

// Non-overlapping P×P patches of image[C×H×W] as rows [(H/P)·(W/P) × C·P·P];
// row t = pi·(W/P) + pj, column c·P·P + a·P + b.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, std::size_t patch);

// -> token sequence [N_t × D], class token at row 0.
template <typename T>
Var<T> patch_embed(Tape<T>& tape, const Tensor<T>& image, const PatchEmbedding<T>& embed, const ModelConfig& cfg);

template <typename T>
Var<T> attention(Var<T> x, const ViTBlockWeights<T>& w, std::size_t heads, const std::optional<Var<T>>& delta_q = {},
                 const std::optional<Var<T>>& delta_k = {}, const std::optional<Var<T>>& delta_v = {});

template <typename T>
Var<T> mlp(Var<T> x, const ViTBlockWeights<T>& w);

template <typename T>
struct BlockOutput {
    Var<T> tokens;
    std::optional<GateOutput<T>> lora_gate;
    std::optional<GateOutput<T>> adapter_gate;
};

template <typename T>
BlockOutput<T> block_forward(Var<T> x, const ViTBlockWeights<T>& block, const MoELoRALayer<T>& lora,
                             const MoEAdapterLayer<T>& adapter, const ModelConfig& cfg, bool training, Rng* rng);

}  // namespace moeffd
