// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/backbone.hpp"

namespace moeffd {

namespace {

template <typename T>
Parameter<T> frozen_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.storage()) v = static_cast<T>(rng.truncated_normal(stddev));
    return Parameter<T>(name, std::move(t), true);
}

template <typename T>
Parameter<T> frozen_const(const std::string& name, Shape shape, T value) {
    return Parameter<T>(name, Tensor<T>(std::move(shape), value), true);
}

}  // namespace

template <typename T>
PatchEmbedding<T> make_patch_embedding(const ModelConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.embed_dim, in = cfg.channels * cfg.patch_size * cfg.patch_size;
    PatchEmbedding<T> e;
    e.proj = frozen_normal<T>("embed.proj", {in, d}, cfg.frozen_std(in), rng);
    e.bias = frozen_const<T>("embed.bias", {d}, T(0));
    e.cls_token = frozen_normal<T>("embed.cls_token", {d}, cfg.init_std, rng);
    e.pos = frozen_normal<T>("embed.pos", {cfg.num_tokens(), d}, cfg.init_std, rng);
    return e;
}

template <typename T>
ViTBlockWeights<T> make_vit_block(const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
    const std::size_t d = cfg.embed_dim, dim = cfg.attn_dim(), hid = cfg.mlp_hidden();
    ViTBlockWeights<T> b;
    b.ln1_scale = frozen_const<T>(prefix + ".ln1.scale", {d}, T(1));
    b.ln1_shift = frozen_const<T>(prefix + ".ln1.shift", {d}, T(0));
    b.w_q = frozen_normal<T>(prefix + ".attn.w_q", {d, dim}, cfg.frozen_std(d), rng);
    b.w_k = frozen_normal<T>(prefix + ".attn.w_k", {d, dim}, cfg.frozen_std(d), rng);
    b.w_v = frozen_normal<T>(prefix + ".attn.w_v", {d, dim}, cfg.frozen_std(d), rng);
    b.w_o = frozen_normal<T>(prefix + ".attn.w_o", {dim, d}, cfg.frozen_std(dim), rng);
    b.ln2_scale = frozen_const<T>(prefix + ".ln2.scale", {d}, T(1));
    b.ln2_shift = frozen_const<T>(prefix + ".ln2.shift", {d}, T(0));
    b.w1 = frozen_normal<T>(prefix + ".mlp.w1", {d, hid}, cfg.frozen_std(d), rng);
    b.w2 = frozen_normal<T>(prefix + ".mlp.w2", {hid, d}, cfg.frozen_std(hid), rng);
    return b;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, std::size_t patch) {
    if (image.rank() != 3) throw DimensionError("extract_patches: expected C×H×W, got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (patch == 0 || h % patch || w % patch)
        throw DimensionError("extract_patches: " + shape_str(image.shape()) + " not divisible into " +
                             std::to_string(patch) + "-pixel patches");
    const std::size_t gh = h / patch, gw = w / patch, len = c * patch * patch;
    Tensor<T> out({gh * gw, len});
    for (std::size_t pi = 0; pi < gh; ++pi)
        for (std::size_t pj = 0; pj < gw; ++pj) {
            T* row = out.ptr() + (pi * gw + pj) * len;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t a = 0; a < patch; ++a)
                    for (std::size_t b = 0; b < patch; ++b)
                        row[(ch * patch + a) * patch + b] = image.at(ch, pi * patch + a, pj * patch + b);
        }
    return out;
}

template <typename T>
Var<T> patch_embed(Tape<T>& tape, const Tensor<T>& image, const PatchEmbedding<T>& embed, const ModelConfig& cfg) {
    const Shape expected{cfg.channels, cfg.image_size, cfg.image_size};
    if (image.shape() != expected)
        throw DimensionError("patch_embed: image " + shape_str(image.shape()) + " vs configured " + shape_str(expected));
    auto patches = tape.constant(extract_patches(image, cfg.patch_size));
    auto tokens = add_row_bias(matmul(patches, tape.param(embed.proj)), tape.param(embed.bias));
    tokens = prepend_row(tape.param(embed.cls_token), tokens);
    return add(tokens, tape.param(embed.pos));
}

template <typename T>
Var<T> attention(Var<T> x, const ViTBlockWeights<T>& w, std::size_t heads, const std::optional<Var<T>>& delta_q,
                 const std::optional<Var<T>>& delta_k, const std::optional<Var<T>>& delta_v) {
    Tape<T>& tape = *x.tape;
    auto project = [&](const Parameter<T>& weight, const std::optional<Var<T>>& delta) {
        auto p = matmul(x, tape.param(weight));
        if (delta) {
            require_same_shape(p.shape(), delta->shape(), "attention delta");
            p = add(p, *delta);
        }
        return p;
    };
    auto q = project(w.w_q, delta_q);
    auto k = project(w.w_k, delta_k);
    auto v = project(w.w_v, delta_v);
    return matmul(multi_head_attention(q, k, v, heads), tape.param(w.w_o));
}

template <typename T>
Var<T> mlp(Var<T> x, const ViTBlockWeights<T>& w) {
    Tape<T>& tape = *x.tape;
    return matmul(gelu(matmul(x, tape.param(w.w1))), tape.param(w.w2));
}

template <typename T>
BlockOutput<T> block_forward(Var<T> x, const ViTBlockWeights<T>& block, const MoELoRALayer<T>& lora,
                             const MoEAdapterLayer<T>& adapter, const ModelConfig& cfg, bool training, Rng* rng) {
    Tape<T>& tape = *x.tape;
    const RoutingSpec routing{cfg.mode, cfg.top_k, cfg.fixed_expert};
    BlockOutput<T> out{x, std::nullopt, std::nullopt};

    auto h = layer_norm(x, tape.param(block.ln1_scale), tape.param(block.ln1_shift), cfg.ln_eps);
    auto deltas = moe_lora_forward(h, lora, routing, training, rng);
    auto x1 = add(x, attention(h, block, cfg.heads, deltas.q, deltas.k, deltas.v));

    auto h2 = layer_norm(x1, tape.param(block.ln2_scale), tape.param(block.ln2_shift), cfg.ln_eps);
    auto ad = moe_adapter_forward(h2, adapter, routing, training, rng);
    auto y = add(x1, mlp(h2, block));
    if (ad.delta) y = add(y, *ad.delta);

    out.tokens = y;
    out.lora_gate = std::move(deltas.gate);
    out.adapter_gate = std::move(ad.gate);
    return out;
}

#define MOEFFD_INSTANTIATE_BACKBONE(T)                                                                            \
    template PatchEmbedding<T> make_patch_embedding(const ModelConfig&, Rng&);                                   \
    template ViTBlockWeights<T> make_vit_block(const ModelConfig&, const std::string&, Rng&);                     \
    template Tensor<T> extract_patches(const Tensor<T>&, std::size_t);                                           \
    template Var<T> patch_embed(Tape<T>&, const Tensor<T>&, const PatchEmbedding<T>&, const ModelConfig&);       \
    template Var<T> attention(Var<T>, const ViTBlockWeights<T>&, std::size_t, const std::optional<Var<T>>&,      \
                              const std::optional<Var<T>>&, const std::optional<Var<T>>&);                       \
    template Var<T> mlp(Var<T>, const ViTBlockWeights<T>&);                                                      \
    template BlockOutput<T> block_forward(Var<T>, const ViTBlockWeights<T>&, const MoELoRALayer<T>&,             \
                                          const MoEAdapterLayer<T>&, const ModelConfig&, bool, Rng*);

MOEFFD_INSTANTIATE_BACKBONE(float)
MOEFFD_INSTANTIATE_BACKBONE(double)

}  // namespace moeffd
