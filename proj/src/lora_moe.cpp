// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/lora_moe.hpp"

namespace moeffd {

namespace {

constexpr std::array<const char*, 3> kProjNames = {"q", "k", "v"};

template <typename T>
Var<T> accumulate_term(std::optional<Var<T>>& acc, Var<T> term) {
    acc = acc ? add(*acc, term) : term;
    return *acc;
}

}  // namespace

template <typename T>
std::size_t LoRAExpert<T>::param_count() const {
    std::size_t n = 0;
    for (const auto& p : proj) n += p.down.value.numel() + p.up.value.numel();
    return n;
}

template <typename T>
MoELoRALayer<T> make_moe_lora_layer(const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
    MoELoRALayer<T> layer;
    const std::size_t d = cfg.embed_dim, dim = cfg.attn_dim();
    for (std::size_t e = 0; e < cfg.lora_ranks.size(); ++e) {
        const std::size_t r = cfg.lora_ranks[e];
        LoRAExpert<T> ex;
        ex.rank = r;
        for (std::size_t p = 0; p < 3; ++p) {
            const std::string base = prefix + ".experts." + std::to_string(e) + "." + kProjNames[p];
            Tensor<T> down({d, r});
            for (auto& v : down.storage()) v = static_cast<T>(rng.truncated_normal(cfg.init_std));
            ex.proj[p].down = Parameter<T>(base + ".down", std::move(down), false);
            ex.proj[p].up = Parameter<T>(base + ".up", Tensor<T>({r, dim}), false);
        }
        layer.experts.push_back(std::move(ex));
    }
    layer.gate = make_gate<T>(prefix + ".gate", dim, cfg.lora_ranks.size(), cfg.init_std, rng);
    return layer;
}

template <typename T>
Var<T> lora_expert_forward(Var<T> x, const LoRAExpert<T>& expert, Projection proj) {
    Tape<T>& tape = *x.tape;
    const auto& pr = expert.pair(proj);
    return matmul(matmul(x, tape.param(pr.down)), tape.param(pr.up));
}

template <typename T>
LoRADeltas<T> moe_lora_forward(Var<T> x, const MoELoRALayer<T>& layer, const RoutingSpec& routing, bool training,
                               Rng* rng) {
    LoRADeltas<T> out;
    const std::size_t n = layer.experts.size();
    auto add_expert = [&](std::size_t e, const Var<T>* weights) {
        if (e >= n) throw ArgumentError("moe_lora_forward: expert " + std::to_string(e) + " out of range");
        std::array<std::optional<Var<T>>*, 3> slots = {&out.q, &out.k, &out.v};
        for (std::size_t p = 0; p < 3; ++p) {
            Var<T> term = lora_expert_forward(x, layer.experts[e], static_cast<Projection>(p));
            if (weights) term = scale_by_entry(term, *weights, e);
            accumulate_term(*slots[p], term);
        }
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

#define MOEFFD_INSTANTIATE_LORA(T)                                                                         \
    template struct LoRAExpert<T>;                                                                         \
    template MoELoRALayer<T> make_moe_lora_layer(const ModelConfig&, const std::string&, Rng&);            \
    template Var<T> lora_expert_forward(Var<T>, const LoRAExpert<T>&, Projection);                         \
    template LoRADeltas<T> moe_lora_forward(Var<T>, const MoELoRALayer<T>&, const RoutingSpec&, bool, Rng*);

MOEFFD_INSTANTIATE_LORA(float)
MOEFFD_INSTANTIATE_LORA(double)

}  // namespace moeffd
