// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/model_config.hpp"

#include <algorithm>
#include <set>

namespace moeffd {

std::string routing_mode_name(RoutingMode m, std::size_t fixed_expert) {
    switch (m) {
        case RoutingMode::MoE: return "moe";
        case RoutingMode::MultiExperts: return "multi_experts";
        case RoutingMode::SingleExpert: return "single_expert:" + std::to_string(fixed_expert);
        case RoutingMode::BackboneOnly: return "backbone_only";
    }
    return "?";
}

RoutingMode parse_routing_mode(const std::string& s, std::size_t* fixed_expert) {
    if (s == "moe") return RoutingMode::MoE;
    if (s == "multi_experts") return RoutingMode::MultiExperts;
    if (s == "backbone_only") return RoutingMode::BackboneOnly;
    const std::string prefix = "single_expert:";
    if (s.rfind(prefix, 0) == 0) {
        const std::string id = s.substr(prefix.size());
        if (id.empty() || !std::all_of(id.begin(), id.end(), [](char c) { return c >= '0' && c <= '9'; }))
            throw ConfigError("mode '" + s + "': expert id must be a non-negative integer");
        if (fixed_expert) *fixed_expert = std::stoul(id);
        return RoutingMode::SingleExpert;
    }
    throw ConfigError("unknown mode '" + s + "'");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (image_size == 0 || patch_size == 0 || channels == 0) fail("image, patch and channel sizes must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (depth == 0) fail("depth must be at least 1");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (adapter_mid == 0) fail("adapter_mid must be positive");
    if (lora_ranks.empty()) fail("lora_ranks must not be empty");
    std::set<std::size_t> ranks(lora_ranks.begin(), lora_ranks.end());
    if (ranks.size() != lora_ranks.size()) fail("lora_ranks must be pairwise distinct");
    for (auto r : lora_ranks)
        if (r == 0 || r >= std::min(embed_dim, attn_dim())) fail("every rank must satisfy 0 < r < min(D, dim)");
    if (adapter_kinds.empty()) fail("adapter_kinds must not be empty");
    std::set<DiffConvKind> kinds(adapter_kinds.begin(), adapter_kinds.end());
    if (kinds.size() != adapter_kinds.size()) fail("adapter_kinds must not repeat");
    const std::size_t n_min = std::min(lora_ranks.size(), adapter_kinds.size());
    if (top_k == 0 || top_k > n_min) fail("top_k must lie in [1, min(#LoRA experts, #adapter experts)]");
    if (mode == RoutingMode::SingleExpert && fixed_expert >= n_min)
        fail("single_expert id " + std::to_string(fixed_expert) + " is not a valid expert in every layer");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
    if (!(init_std > 0.0)) fail("init_std must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.depth = 12;
    c.embed_dim = 768;
    c.heads = 12;
    c.adapter_mid = 768 / 4;
    c.lora_ranks = {8, 16, 32, 48, 64, 96, 128};
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.depth = 1;
    c.embed_dim = 8;
    c.heads = 2;
    c.adapter_mid = 2;
    c.lora_ranks = {1, 2, 3};
    return c;
}

}  // namespace moeffd
