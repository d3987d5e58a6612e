// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moeffd/diffconv.hpp"

namespace moeffd {

// How the MoE layers combine their experts.
enum class RoutingMode : std::uint8_t {
    MoE,           // noisy Top-k gate
    MultiExperts,  // unweighted sum of every expert, gate bypassed
    SingleExpert,  // every sample routed to `fixed_expert`, gate bypassed
    BackboneOnly,  // expert paths disabled; only the head trains
};

std::string routing_mode_name(RoutingMode m, std::size_t fixed_expert = 0);
// Accepts "moe", "multi_experts", "backbone_only" and "single_expert:<id>".
RoutingMode parse_routing_mode(const std::string& s, std::size_t* fixed_expert);

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t patch_size = 8;
    std::size_t depth = 4;
    std::size_t embed_dim = 64;  // D; the attention width equals D
    std::size_t heads = 4;
    std::size_t adapter_mid = 16;  // d_mid
    std::vector<std::size_t> lora_ranks = {2, 4, 8, 16};
    std::vector<DiffConvKind> adapter_kinds = {kAllDiffConvKinds.begin(), kAllDiffConvKinds.end()};
    std::size_t top_k = 1;
    RoutingMode mode = RoutingMode::MoE;
    std::size_t fixed_expert = 0;
    double ln_eps = 1e-6;
    double init_std = 0.02;  // truncated normal, |v| ≤ 2·std
    // Frozen projection matrices: false → init_std, true → 1/√fan_in.
    bool fan_in_backbone = false;
    std::uint64_t seed = 0;  // parameter initialisation stream

    std::size_t attn_dim() const { return embed_dim; }
    std::size_t grid_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid_side() * grid_side(); }
    std::size_t num_tokens() const { return 1 + num_patches(); }
    std::size_t mlp_hidden() const { return 4 * embed_dim; }
    double frozen_std(std::size_t fan_in) const {
        return fan_in_backbone ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : init_std;
    }

    // Throws ConfigError on the first violated constraint.
    void validate() const;

    static ModelConfig desk();
    // ViT-Base geometry: 224 px, 16 px patches, 12 blocks, D = 768, 12 heads.
    static ModelConfig full_scale();
    // One block, 16×16 images; small enough for exhaustive gradient checks.
    static ModelConfig tiny();
};

}  // namespace moeffd
