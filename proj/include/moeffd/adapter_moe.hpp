// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "moeffd/diffconv.hpp"
#include "moeffd/gating.hpp"
#include "moeffd/lora_moe.hpp"
#include "moeffd/model_config.hpp"

namespace moeffd {

// Convpass expert: 1×1 down, difference conv, 1×1 up, GELU after the first two.
template <typename T>
struct AdapterExpert {
    DiffConvKind kind = DiffConvKind::Vanilla;
    Parameter<T> conv_down;  // [d_mid × D]
    Parameter<T> conv_mid;   // [d_mid × d_mid × 3 × 3]
    Parameter<T> conv_up;    // [D × d_mid]

    std::size_t param_count() const {
        return conv_down.value.numel() + conv_mid.value.numel() + conv_up.value.numel();
    }
};

template <typename T>
struct MoEAdapterLayer {
    std::vector<AdapterExpert<T>> experts;  // one per configured kind
    GateWeights<T> gate;
};

// conv_down and conv_mid ~ truncated normal with std √(2/(fan_in+fan_out)); conv_up = 0.
template <typename T>
MoEAdapterLayer<T> make_moe_adapter_layer(const ModelConfig& cfg, const std::string& prefix, Rng& rng);

// Patch tokens of x[(1+h·w) × D] laid out on a D×h×w grid; token 1+i·w+j sits at (i, j).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> tokens_to_grid(const Tensor<T>& x);  // (class token [D], grid)
template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& class_token, const Tensor<T>& grid);

// Differentiable forms. grid_to_tokens here writes a zero class-token row.
template <typename T>
Var<T> tokens_to_grid(Var<T> x);
template <typename T>
Var<T> grid_to_tokens(Var<T> grid);

template <typename T>
Var<T> adapter_expert_forward(Var<T> x, const AdapterExpert<T>& expert);

template <typename T>
struct AdapterDelta {
    std::optional<Var<T>> delta;  // [N_t × D]; class-token row is zero
    std::optional<GateOutput<T>> gate;
};

template <typename T>
AdapterDelta<T> moe_adapter_forward(Var<T> x, const MoEAdapterLayer<T>& layer, const RoutingSpec& routing,
                                    bool training, Rng* rng);

}  // namespace moeffd
