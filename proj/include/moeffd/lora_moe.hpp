// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <vector>

#include "moeffd/gating.hpp"
#include "moeffd/model_config.hpp"

namespace moeffd {

enum class Projection : std::uint8_t { Q = 0, K = 1, V = 2 };

template <typename T>
struct LoRAPair {
    Parameter<T> down;  // [D × r]
    Parameter<T> up;    // [r × dim]
};

template <typename T>
struct LoRAExpert {
    std::size_t rank = 0;
    std::array<LoRAPair<T>, 3> proj;  // indexed by Projection

    const LoRAPair<T>& pair(Projection p) const { return proj[static_cast<std::size_t>(p)]; }
    std::size_t param_count() const;
};

// One gate, N experts of distinct rank; the selected experts feed Q, K and V jointly.
template <typename T>
struct MoELoRALayer {
    std::vector<LoRAExpert<T>> experts;
    GateWeights<T> gate;
};

// down ~ truncated normal(init_std), up = 0.
template <typename T>
MoELoRALayer<T> make_moe_lora_layer(const ModelConfig& cfg, const std::string& prefix, Rng& rng);

// x·W_down·W_up through the rank bottleneck.
template <typename T>
Var<T> lora_expert_forward(Var<T> x, const LoRAExpert<T>& expert, Projection proj);

template <typename T>
struct LoRADeltas {
    std::optional<Var<T>> q, k, v;  // absent when the layer contributes nothing
    std::optional<GateOutput<T>> gate;
};

struct RoutingSpec {
    RoutingMode mode = RoutingMode::MoE;
    std::size_t top_k = 1;
    std::size_t fixed_expert = 0;
};

template <typename T>
LoRADeltas<T> moe_lora_forward(Var<T> x, const MoELoRALayer<T>& layer, const RoutingSpec& routing, bool training,
                               Rng* rng);

}  // namespace moeffd
