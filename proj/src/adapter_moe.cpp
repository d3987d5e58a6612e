// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/adapter_moe.hpp"

#include <cmath>

namespace moeffd {

namespace {

std::size_t grid_side_for(std::size_t tokens) {
    if (tokens < 2) throw ConfigError("token sequence has no patch tokens");
    const std::size_t n = tokens - 1;
    auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw ConfigError("patch count " + std::to_string(n) + " is not a perfect square");
    return side;
}

template <typename T>
Tensor<T> init_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(rng.truncated_normal(stddev));
    return t;
}

}  // namespace

template <typename T>
MoEAdapterLayer<T> make_moe_adapter_layer(const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
    MoEAdapterLayer<T> layer;
    const std::size_t d = cfg.embed_dim, m = cfg.adapter_mid;
    for (std::size_t e = 0; e < cfg.adapter_kinds.size(); ++e) {
        const std::string base = prefix + ".experts." + std::to_string(e);
        AdapterExpert<T> ex;
        ex.kind = cfg.adapter_kinds[e];
        ex.conv_down = Parameter<T>(base + ".conv_down", init_tensor<T>({m, d}, std::sqrt(2.0 / double(m + d)), rng), false);
        ex.conv_mid = Parameter<T>(base + ".conv_mid",
                                   init_tensor<T>({m, m, 3, 3}, std::sqrt(2.0 / double(18 * m)), rng), false);
        ex.conv_up = Parameter<T>(base + ".conv_up", Tensor<T>({d, m}), false);
        layer.experts.push_back(std::move(ex));
    }
    layer.gate = make_gate<T>(prefix + ".gate", cfg.embed_dim, cfg.adapter_kinds.size(), cfg.init_std, rng);
    return layer;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> tokens_to_grid(const Tensor<T>& x) {
    if (x.rank() != 2) throw DimensionError("tokens_to_grid: expected N_t×D, got " + shape_str(x.shape()));
    const std::size_t side = grid_side_for(x.dim(0)), d = x.dim(1);
    Tensor<T> cls({d});
    for (std::size_t c = 0; c < d; ++c) cls[c] = x[c];
    Tensor<T> grid({d, side, side});
    for (std::size_t t = 0; t < side * side; ++t)
        for (std::size_t c = 0; c < d; ++c) grid[c * side * side + t] = x[(1 + t) * d + c];
    return {std::move(cls), std::move(grid)};
}

template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& class_token, const Tensor<T>& grid) {
    if (grid.rank() != 3) throw DimensionError("grid_to_tokens: expected D×h×w, got " + shape_str(grid.shape()));
    const std::size_t d = grid.dim(0), hw = grid.dim(1) * grid.dim(2);
    if (class_token.numel() != d)
        throw DimensionError("grid_to_tokens: class token " + shape_str(class_token.shape()) + " vs grid " +
                             shape_str(grid.shape()));
    Tensor<T> x({1 + hw, d});
    for (std::size_t c = 0; c < d; ++c) x[c] = class_token[c];
    for (std::size_t t = 0; t < hw; ++t)
        for (std::size_t c = 0; c < d; ++c) x[(1 + t) * d + c] = grid[c * hw + t];
    return x;
}

template <typename T>
Var<T> tokens_to_grid(Var<T> x) {
    auto [cls, grid] = tokens_to_grid(x.value());
    return x.tape->record(std::move(grid), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T> zero({g.dim(0)});
        tp.accumulate(x.id, grid_to_tokens(zero, g));
    });
}

template <typename T>
Var<T> grid_to_tokens(Var<T> grid) {
    const Tensor<T> zero({grid.shape()[0]});
    return grid.tape->record(grid_to_tokens(zero, grid.value()), {grid}, [grid](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(grid.id, tokens_to_grid(g).second);
    });
}

template <typename T>
Var<T> adapter_expert_forward(Var<T> x, const AdapterExpert<T>& expert) {
    Tape<T>& tape = *x.tape;
    auto grid = tokens_to_grid(x);
    auto h = gelu(conv1x1(grid, tape.param(expert.conv_down)));
    h = gelu(diff_conv(h, tape.param(expert.conv_mid), expert.kind));
    return grid_to_tokens(conv1x1(h, tape.param(expert.conv_up)));
}

template <typename T>
AdapterDelta<T> moe_adapter_forward(Var<T> x, const MoEAdapterLayer<T>& layer, const RoutingSpec& routing,
                                    bool training, Rng* rng) {
    AdapterDelta<T> out;
    const std::size_t n = layer.experts.size();
    auto add_expert = [&](std::size_t e, const Var<T>* weights) {
        if (e >= n) throw ArgumentError("moe_adapter_forward: expert " + std::to_string(e) + " out of range");
        Var<T> term = adapter_expert_forward(x, layer.experts[e]);
        if (weights) term = scale_by_entry(term, *weights, e);
        out.delta = out.delta ? add(*out.delta, term) : term;
    };
    switch (routing.mode) {
        case RoutingMode::BackboneOnly:
            break;
        case RoutingMode::SingleExpert:
            add_expert(routing.fixed_expert, nullptr);
            break;
        case RoutingMode::MultiExperts:
            for (std::size_t e = 0; e < n; ++e) add_expert(e, nullptr);
            break;
        case RoutingMode::MoE: {
            auto g = route(x, layer.gate, routing.top_k, training, rng);
            for (auto e : g.decision.selected) add_expert(e, &g.weights);
            out.gate = std::move(g);
            break;
        }
    }
    return out;
}

#define MOEFFD_INSTANTIATE_ADAPTER(T)                                                                          \
    template MoEAdapterLayer<T> make_moe_adapter_layer(const ModelConfig&, const std::string&, Rng&);          \
    template std::pair<Tensor<T>, Tensor<T>> tokens_to_grid(const Tensor<T>&);                                 \
    template Tensor<T> grid_to_tokens(const Tensor<T>&, const Tensor<T>&);                                     \
    template Var<T> tokens_to_grid(Var<T>);                                                                    \
    template Var<T> grid_to_tokens(Var<T>);                                                                    \
    template Var<T> adapter_expert_forward(Var<T>, const AdapterExpert<T>&);                                   \
    template AdapterDelta<T> moe_adapter_forward(Var<T>, const MoEAdapterLayer<T>&, const RoutingSpec&, bool, Rng*);

MOEFFD_INSTANTIATE_ADAPTER(float)
MOEFFD_INSTANTIATE_ADAPTER(double)

}  // namespace moeffd
