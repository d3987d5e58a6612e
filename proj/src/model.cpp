// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/model.hpp"

#include <cmath>
#include <memory>

namespace moeffd {

namespace {

template <typename Model, typename F>
void walk(Model& m, F&& f) {
    f(m.embed.proj);
    f(m.embed.bias);
    f(m.embed.cls_token);
    f(m.embed.pos);
    for (auto& b : m.blocks) {
        auto& v = b.vit;
        for (auto* p : {&v.ln1_scale, &v.ln1_shift, &v.w_q, &v.w_k, &v.w_v, &v.w_o, &v.ln2_scale, &v.ln2_shift, &v.w1,
                        &v.w2})
            f(*p);
        for (auto& e : b.lora.experts)
            for (auto& pr : e.proj) {
                f(pr.down);
                f(pr.up);
            }
        f(b.lora.gate.w_gate);
        f(b.lora.gate.w_noise);
        for (auto& e : b.adapter.experts) {
            f(e.conv_down);
            f(e.conv_mid);
            f(e.conv_up);
        }
        f(b.adapter.gate.w_gate);
        f(b.adapter.gate.w_noise);
    }
    f(m.norm_scale);
    f(m.norm_shift);
    f(m.head_w);
    f(m.head_b);
}

template <typename T>
void set_frozen(Parameter<T>& p) {
    p.frozen = true;
}

}  // namespace

template <typename T>
MoEFFDModel<T>::MoEFFDModel(const ModelConfig& cfg, std::uint64_t run_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(run_seed, static_cast<std::uint64_t>(SeedStream::Init)));
    embed = make_patch_embedding<T>(cfg_, rng);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
        const std::string prefix = "blocks." + std::to_string(i);
        TransformerBlock<T> b;
        b.vit = make_vit_block<T>(cfg_, prefix, rng);
        b.lora = make_moe_lora_layer<T>(cfg_, prefix + ".lora", rng);
        b.adapter = make_moe_adapter_layer<T>(cfg_, prefix + ".adapter", rng);
        blocks.push_back(std::move(b));
    }
    const std::size_t d = cfg_.embed_dim;
    norm_scale = Parameter<T>("norm.scale", Tensor<T>({d}, T(1)), true);
    norm_shift = Parameter<T>("norm.shift", Tensor<T>({d}), true);
    Tensor<T> hw({d, 2});
    for (auto& v : hw.storage()) v = static_cast<T>(rng.truncated_normal(cfg_.init_std));
    head_w = Parameter<T>("head.w", std::move(hw), false);
    head_b = Parameter<T>("head.b", Tensor<T>({2}), false);

    if (cfg_.mode == RoutingMode::BackboneOnly) {
        for (auto& b : blocks) {
            for (auto& e : b.lora.experts)
                for (auto& pr : e.proj) {
                    set_frozen(pr.down);
                    set_frozen(pr.up);
                }
            for (auto& e : b.adapter.experts) {
                set_frozen(e.conv_down);
                set_frozen(e.conv_mid);
                set_frozen(e.conv_up);
            }
            for (auto* g : {&b.lora.gate, &b.adapter.gate}) {
                set_frozen(g->w_gate);
                set_frozen(g->w_noise);
            }
        }
    }
}

template <typename T>
std::vector<Parameter<T>*> MoEFFDModel<T>::parameters() {
    std::vector<Parameter<T>*> out;
    walk(*this, [&](Parameter<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> MoEFFDModel<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    walk(*this, [&](const Parameter<T>& p) { out.push_back(&p); });
    return out;
}

template <typename T>
ParameterPartition<T> freeze_partition(const MoEFFDModel<T>& model) {
    ParameterPartition<T> part;
    for (const auto* p : model.parameters()) (p->frozen ? part.frozen : part.trainable).push_back(p);
    return part;
}

template <typename T>
std::size_t count_params(const std::vector<const Parameter<T>*>& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += p->value.numel();
    return n;
}

std::size_t closed_form_trainable_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.embed_dim, dim = cfg.attn_dim(), m = cfg.adapter_mid;
    const std::size_t head = d * 2 + 2;
    if (cfg.mode == RoutingMode::BackboneOnly) return head;
    std::size_t lora = 0;
    for (auto r : cfg.lora_ranks) lora += 3 * r * (d + dim);
    const std::size_t adapter = cfg.adapter_kinds.size() * (2 * m * d + 9 * m * m);
    const std::size_t gates = 2 * dim * cfg.lora_ranks.size() + 2 * d * cfg.adapter_kinds.size();
    return cfg.depth * (lora + adapter + gates) + head;
}

std::string gate_type_name(GateType t) { return t == GateType::LoRA ? "lora" : "adapter"; }

template <typename T>
SampleOutput<T> forward_sample(Tape<T>& tape, const MoEFFDModel<T>& model, const Tensor<T>& image, bool training,
                               Rng* rng) {
    const auto& cfg = model.config();
    SampleOutput<T> out;
    auto x = patch_embed(tape, image, model.embed, cfg);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& blk = model.blocks[b];
        auto r = block_forward(x, blk.vit, blk.lora, blk.adapter, cfg, training, rng);
        x = r.tokens;
        if (r.lora_gate) out.gates.push_back({b, GateType::LoRA, std::move(*r.lora_gate)});
        if (r.adapter_gate) out.gates.push_back({b, GateType::Adapter, std::move(*r.adapter_gate)});
    }
    auto cls = layer_norm(select_row(x, 0), tape.param(model.norm_scale), tape.param(model.norm_shift), cfg.ln_eps);
    out.logits = add_row_bias(matmul(cls, tape.param(model.head_w)), tape.param(model.head_b));
    return out;
}

template <typename T>
ForwardResult<T> model_forward(std::span<const Tensor<T>* const> images, const MoEFFDModel<T>& model, bool training,
                               Rng* rng) {
    if (images.empty()) throw ArgumentError("model_forward: empty batch");
    ForwardResult<T> res;
    res.logits = Tensor<T>({images.size(), 2});
    for (std::size_t s = 0; s < images.size(); ++s) {
        Tape<T> tape;
        auto out = forward_sample(tape, model, *images[s], training, rng);
        res.logits[2 * s] = out.logits.value()[0];
        res.logits[2 * s + 1] = out.logits.value()[1];
        std::vector<GateRecord> recs;
        for (auto& g : out.gates) recs.push_back({g.block, g.type, std::move(g.out.decision)});
        res.records.push_back(std::move(recs));
    }
    return res;
}

namespace {

// Per-gate importance across the batch; gates are matched by position.
std::vector<std::vector<double>> batch_importance(const std::vector<std::vector<GateRecord>>& records) {
    std::vector<std::vector<double>> imp;
    if (records.empty()) return imp;
    const std::size_t n_gates = records.front().size();
    for (std::size_t g = 0; g < n_gates; ++g) {
        std::vector<GateDecision> ds;
        ds.reserve(records.size());
        for (const auto& r : records) {
            if (r.size() != n_gates) throw DimensionError("total_loss: gate count differs between samples");
            ds.push_back(r[g].decision);
        }
        imp.push_back(importance(ds));
    }
    return imp;
}

template <typename T>
double sample_ce(const Tensor<T>& logits, std::size_t s, int label, double* p_fake) {
    const double a = logits[2 * s], b = logits[2 * s + 1];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    if (p_fake) *p_fake = std::exp(b - lse);
    return lse - (label == 1 ? b : a);
}

}  // namespace

template <typename T>
LossBreakdown total_loss(const Tensor<T>& logits, std::span<const int> labels,
                         const std::vector<std::vector<GateRecord>>& records, double lambda) {
    if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != labels.size())
        throw DimensionError("total_loss: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    LossBreakdown l;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        if (labels[s] != 0 && labels[s] != 1) throw ArgumentError("total_loss: labels must be 0 or 1");
        l.ce += sample_ce(logits, s, labels[s], nullptr);
    }
    l.ce /= static_cast<double>(labels.size());
    for (const auto& imp : batch_importance(records)) l.moe += moe_loss(imp);
    l.total = l.ce + lambda * l.moe;
    return l;
}

template <typename T>
BatchGradients<T> compute_batch_gradients(const MoEFFDModel<T>& model, std::span<const Tensor<T>* const> images,
                                          std::span<const int> labels, double lambda, bool training, Rng* rng) {
    const std::size_t n = images.size();
    if (n == 0 || labels.size() != n) throw ArgumentError("compute_batch_gradients: batch/label size mismatch");
    const auto params = model.parameters();
    std::unordered_map<const Parameter<T>*, std::size_t> index;
    for (std::size_t i = 0; i < params.size(); ++i) index.emplace(params[i], i);

    BatchGradients<T> res;
    res.forward.logits = Tensor<T>({n, 2});
    std::vector<std::unique_ptr<Tape<T>>> tapes;
    std::vector<SampleOutput<T>> outs;
    for (std::size_t s = 0; s < n; ++s) {
        tapes.push_back(std::make_unique<Tape<T>>());
        outs.push_back(forward_sample(*tapes.back(), model, *images[s], training, rng));
        res.forward.logits[2 * s] = outs.back().logits.value()[0];
        res.forward.logits[2 * s + 1] = outs.back().logits.value()[1];
        std::vector<GateRecord> recs;
        for (const auto& g : outs.back().gates) recs.push_back({g.block, g.type, g.out.decision});
        res.forward.records.push_back(std::move(recs));
    }
    res.loss = total_loss(res.forward.logits, labels, res.forward.records, lambda);

    std::vector<std::vector<double>> moe_grads;
    if (lambda != 0.0)
        for (const auto& imp : batch_importance(res.forward.records)) moe_grads.push_back(moe_loss_grad(imp));

    res.grads.reserve(params.size());
    for (const auto* p : params) res.grads.push_back(Tensor<T>::zeros_like(p->value));

    for (std::size_t s = 0; s < n; ++s) {
        Tape<T>& tape = *tapes[s];
        double p_fake = 0.0;
        sample_ce(res.forward.logits, s, labels[s], &p_fake);
        const double inv_n = 1.0 / static_cast<double>(n);
        const double y = labels[s] == 1 ? 1.0 : 0.0;
        Tensor<T> g_logits({1, 2});
        g_logits[0] = static_cast<T>(((1.0 - p_fake) - (1.0 - y)) * inv_n);
        g_logits[1] = static_cast<T>((p_fake - y) * inv_n);
        tape.seed(outs[s].logits, g_logits);
        for (std::size_t g = 0; g < moe_grads.size(); ++g) {
            const auto& w = outs[s].gates[g].out.weights;
            Tensor<T> gw(w.shape());
            for (std::size_t e = 0; e < gw.numel(); ++e) gw[e] = static_cast<T>(lambda * moe_grads[g][e]);
            tape.seed(w, gw);
        }
        tape.backward();
        tape.for_each_param_grad([&](const Parameter<T>& p, const Tensor<T>& g) { res.grads[index.at(&p)] += g; });
        tapes[s].reset();
    }
    return res;
}

template <typename T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>*>& params) {
    AdamState<T> st;
    for (const auto* p : params) {
        st.m.push_back(Tensor<T>::zeros_like(p->value));
        st.v.push_back(Tensor<T>::zeros_like(p->value));
    }
    return st;
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ArgumentError("adam_step: parameter, gradient and state counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->frozen) continue;
        require_same_shape(params[i]->value.shape(), grads[i].shape(), ("adam_step " + params[i]->name).c_str());
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for " + params[i]->name);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = *params[i];
        if (p.frozen) continue;
        const double lr = p.group == ParamGroup::Gate ? cfg.lr_gate : cfg.lr_other;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double gj = g[j];
            const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1, vhat = vj / bc2;
            p.value[j] = static_cast<T>(p.value[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

#define MOEFFD_INSTANTIATE_MODEL(T)                                                                                \
    template class MoEFFDModel<T>;                                                                                 \
    template ParameterPartition<T> freeze_partition(const MoEFFDModel<T>&);                                        \
    template std::size_t count_params(const std::vector<const Parameter<T>*>&);                                    \
    template SampleOutput<T> forward_sample(Tape<T>&, const MoEFFDModel<T>&, const Tensor<T>&, bool, Rng*);        \
    template ForwardResult<T> model_forward(std::span<const Tensor<T>* const>, const MoEFFDModel<T>&, bool, Rng*); \
    template LossBreakdown total_loss(const Tensor<T>&, std::span<const int>,                                      \
                                      const std::vector<std::vector<GateRecord>>&, double);                        \
    template BatchGradients<T> compute_batch_gradients(const MoEFFDModel<T>&, std::span<const Tensor<T>* const>,   \
                                                       std::span<const int>, double, bool, Rng*);                  \
    template AdamState<T> make_adam_state(const std::vector<Parameter<T>*>&);                                      \
    template void adam_step(const std::vector<Parameter<T>*>&, const std::vector<Tensor<T>>&, AdamState<T>&,       \
                            const AdamConfig&);

MOEFFD_INSTANTIATE_MODEL(float)
MOEFFD_INSTANTIATE_MODEL(double)

}  // namespace moeffd
