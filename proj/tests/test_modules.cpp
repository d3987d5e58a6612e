// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "moeffd/model.hpp"
#include "moeffd/verify.hpp"

using namespace moeffd;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double sd = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.storage()) v = rng.normal(0, sd);
    return t;
}

void randomize_lora(MoELoRALayer<double>& l, Rng& rng) {
    for (auto& e : l.experts)
        for (auto& p : e.proj) {
            p.down.value = random_tensor(p.down.value.shape(), rng, 0.5);
            p.up.value = random_tensor(p.up.value.shape(), rng, 0.5);
        }
    l.gate.w_gate.value = random_tensor(l.gate.w_gate.value.shape(), rng, 0.5);
}

void randomize_adapter(MoEAdapterLayer<double>& a, Rng& rng) {
    for (auto& e : a.experts) {
        e.conv_down.value = random_tensor(e.conv_down.value.shape(), rng, 0.5);
        e.conv_mid.value = random_tensor(e.conv_mid.value.shape(), rng, 0.5);
        e.conv_up.value = random_tensor(e.conv_up.value.shape(), rng, 0.5);
    }
    a.gate.w_gate.value = random_tensor(a.gate.w_gate.value.shape(), rng, 0.5);
}

}  // namespace

TEST_CASE("LoRA expert examples", "[lora_moe]") {
    ModelConfig cfg = ModelConfig::tiny();
    Rng rng(41);
    auto layer = make_moe_lora_layer<double>(cfg, "lora", rng);
    REQUIRE(layer.experts.size() == 3);
    for (const auto& e : layer.experts)
        for (const auto& p : e.proj)
            for (auto v : p.up.value.storage()) CHECK(v == 0.0);
    randomize_lora(layer, rng);
    const auto& e = layer.experts[1];
    CHECK(e.rank == 2);

    const auto x = random_tensor({5, cfg.embed_dim}, rng);
    Tape<double> tape;
    auto y = lora_expert_forward(tape.constant(x), e, Projection::K);
    CHECK(max_abs_diff(y.value(), oracle::lora_expert(x, e, Projection::K)) <= 1e-12);

    Tensor<double> x2 = x;
    x2 *= 2.0;
    auto y2 = lora_expert_forward(tape.constant(x2), e, Projection::K);
    Tensor<double> twice = y.value();
    twice *= 2.0;
    CHECK(max_abs_diff(y2.value(), twice) <= 1e-12);

    auto zeroed = e;
    zeroed.proj[0].down.value.fill(0.0);
    auto z = lora_expert_forward(tape.constant(x), zeroed, Projection::Q);
    for (auto v : z.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("MoE LoRA routing modes", "[lora_moe]") {
    ModelConfig cfg = ModelConfig::tiny();
    Rng rng(42);
    auto layer = make_moe_lora_layer<double>(cfg, "lora", rng);
    const auto x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng);
    {
        Tape<double> tape;
        auto d = moe_lora_forward(tape.constant(x), layer, {RoutingMode::MoE, 2, 0}, false, nullptr);
        for (auto* v : {&d.q, &d.k, &d.v})
            if (*v)
                for (auto t : (*v)->value().storage()) CHECK(t == 0.0);
    }
    randomize_lora(layer, rng);
    Tape<double> tape;
    auto d = moe_lora_forward(tape.constant(x), layer, {RoutingMode::MoE, 1, 0}, false, nullptr);
    REQUIRE(d.gate);
    const auto chosen = d.gate->decision.top1();
    CHECK(d.gate->decision.weights[chosen] == 1.0);
    const auto ref = oracle::lora_expert(x, layer.experts[chosen], Projection::V);
    CHECK(max_abs_diff(d.v->value(), ref) <= 1e-12);

    auto single = moe_lora_forward(tape.constant(x), layer, {RoutingMode::SingleExpert, 1, 2}, false, nullptr);
    CHECK(!single.gate);
    CHECK(max_abs_diff(single.q->value(), oracle::lora_expert(x, layer.experts[2], Projection::Q)) <= 1e-12);

    auto multi = moe_lora_forward(tape.constant(x), layer, {RoutingMode::MultiExperts, 1, 0}, false, nullptr);
    Tensor<double> sum({cfg.num_tokens(), cfg.attn_dim()});
    for (const auto& e : layer.experts) sum += oracle::lora_expert(x, e, Projection::K);
    CHECK(max_abs_diff(multi.k->value(), sum) <= 1e-12);

    auto none = moe_lora_forward(tape.constant(x), layer, {RoutingMode::BackboneOnly, 1, 0}, false, nullptr);
    CHECK(!none.q);
    CHECK(!none.gate);
}

TEST_CASE("token grid layout", "[adapter_moe]") {
    Tensor<double> x({17, 3});
    for (std::size_t t = 0; t < 17; ++t)
        for (std::size_t d = 0; d < 3; ++d) x.at(t, d) = 100.0 * t + d;
    auto [cls, grid] = tokens_to_grid(x);
    CHECK(grid.shape() == Shape{3, 4, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t d = 0; d < 3; ++d) CHECK(grid.at(d, i, j) == 100.0 * (1 + 4 * i + j) + d);
    CHECK(cls == Tensor<double>::from({3}, {0, 1, 2}));
    CHECK(grid_to_tokens(cls, grid) == x);
}

TEST_CASE("adapter expert examples", "[adapter_moe]") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.embed_dim = 4;
    cfg.adapter_mid = 2;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    Rng rng(43);
    auto layer = make_moe_adapter_layer<double>(cfg, "adapter", rng);
    REQUIRE(layer.experts.size() == 5);
    const auto x = random_tensor({cfg.num_tokens(), 4}, rng);
    Tape<double> tape;
    auto zero = adapter_expert_forward(tape.constant(x), layer.experts[0]);
    CHECK(zero.shape() == x.shape());
    for (auto v : zero.value().storage()) CHECK(v == 0.0);

    randomize_adapter(layer, rng);
    for (const auto& e : layer.experts) {
        auto y = adapter_expert_forward(tape.constant(x), e);
        INFO(kind_name(e.kind));
        CHECK(max_abs_diff(y.value(), oracle::adapter_expert(x, e)) <= 1e-10);
        for (std::size_t d = 0; d < 4; ++d) CHECK(y.value().at(0, d) == 0.0);
    }
}

TEST_CASE("MoE adapter dense mixture at k=5", "[adapter_moe]") {
    ModelConfig cfg = ModelConfig::tiny();
    Rng rng(44);
    auto layer = make_moe_adapter_layer<double>(cfg, "adapter", rng);
    randomize_adapter(layer, rng);
    const auto x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng);
    Tape<double> tape;
    auto d = moe_adapter_forward(tape.constant(x), layer, {RoutingMode::MoE, 5, 0}, false, nullptr);
    const auto w = oracle::dense_gate(x, layer.gate);
    Tensor<double> dense({cfg.num_tokens(), cfg.embed_dim});
    for (std::size_t e = 0; e < 5; ++e) {
        auto t = oracle::adapter_expert(x, layer.experts[e]);
        for (std::size_t i = 0; i < t.numel(); ++i) dense[i] += w[e] * t[i];
    }
    CHECK(max_abs_diff(d.delta->value(), dense) <= 1e-9);

    auto one = moe_adapter_forward(tape.constant(x), layer, {RoutingMode::MoE, 1, 0}, false, nullptr);
    const auto top = one.gate->decision.top1();
    CHECK(one.gate->decision.weights[top] == 1.0);
    CHECK(max_abs_diff(one.delta->value(), oracle::adapter_expert(x, layer.experts[top])) <= 1e-12);
}

TEST_CASE("patch embedding", "[backbone]") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.image_size = 32;
    cfg.patch_size = 8;
    CHECK(cfg.num_tokens() == 17);
    Rng rng(45);
    auto embed = make_patch_embedding<double>(cfg, rng);
    embed.proj.value.fill(0.0);
    embed.bias.value.fill(0.0);
    Tape<double> tape;
    auto toks = patch_embed(tape, Tensor<double>({3, 32, 32}), embed, cfg);
    REQUIRE(toks.shape() == Shape{17, cfg.embed_dim});
    for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
        CHECK(toks.value().at(0, d) == embed.cls_token.value[d] + embed.pos.value.at(0, d));
        CHECK(toks.value().at(5, d) == embed.pos.value.at(5, d));
    }

    auto fresh = make_patch_embedding<double>(cfg, rng);
    auto img = random_tensor({3, 32, 32}, rng);
    auto out = patch_embed(tape, img, fresh, cfg);
    for (std::size_t t = 0; t < 16; ++t) {
        const std::size_t pi = t / 4, pj = t % 4;
        for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
            double s = fresh.bias.value[d] + fresh.pos.value.at(t + 1, d);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t a = 0; a < 8; ++a)
                    for (std::size_t b = 0; b < 8; ++b)
                        s += img.at(c, pi * 8 + a, pj * 8 + b) * fresh.proj.value.at(c * 64 + a * 8 + b, d);
            CHECK(std::abs(out.value().at(t + 1, d) - s) <= 1e-12);
        }
    }
}

TEST_CASE("single-head attention matches a scalar loop", "[backbone]") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.embed_dim = 4;
    cfg.heads = 1;
    Rng rng(46);
    auto w = make_vit_block<double>(cfg, "b", rng);
    for (auto* p : {&w.w_q, &w.w_k, &w.w_v, &w.w_o}) p->value = random_tensor(p->value.shape(), rng, 0.5);
    const auto x = random_tensor({3, 4}, rng);
    Tape<double> tape;
    auto y = attention(tape.constant(x), w, 1);

    auto q = matmul(x, w.w_q.value), k = matmul(x, w.w_k.value), v = matmul(x, w.w_v.value);
    Tensor<double> ctx({3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
        double s[3], m = -1e300, z = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            s[j] = 0;
            for (std::size_t d = 0; d < 4; ++d) s[j] += q.at(i, d) * k.at(j, d);
            s[j] /= 2.0;
            m = std::max(m, s[j]);
        }
        for (auto& e : s) z += (e = std::exp(e - m));
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t d = 0; d < 4; ++d) ctx.at(i, d) += s[j] / z * v.at(j, d);
    }
    auto ref = matmul(ctx, w.w_o.value);
    CHECK(max_abs_diff(y.value(), ref) <= 1e-10);
}

TEST_CASE("zero expert paths leave the frozen block unchanged", "[backbone]") {
    ModelConfig cfg = ModelConfig::tiny();
    Rng rng(47);
    auto vit = make_vit_block<double>(cfg, "b", rng);
    auto lora = make_moe_lora_layer<double>(cfg, "l", rng);
    auto adapter = make_moe_adapter_layer<double>(cfg, "a", rng);
    const auto x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng);
    Tape<double> tape;
    auto xv = tape.constant(x);
    auto out = block_forward(xv, vit, lora, adapter, cfg, false, nullptr);
    auto h = layer_norm(xv, tape.param(vit.ln1_scale), tape.param(vit.ln1_shift), cfg.ln_eps);
    auto x1 = add(xv, attention(h, vit, cfg.heads));
    auto h2 = layer_norm(x1, tape.param(vit.ln2_scale), tape.param(vit.ln2_shift), cfg.ln_eps);
    auto plain = add(x1, mlp(h2, vit));
    CHECK(out.tokens.shape() == x.shape());
    CHECK(max_abs_diff(out.tokens.value(), plain.value()) <= 1e-15);
    CHECK(out.lora_gate);
    CHECK(out.adapter_gate);
}

TEST_CASE("parameter tree and freeze partition", "[model]") {
    MoEFFDModel<float> m(ModelConfig::desk(), 3);
    auto part = freeze_partition(m);
    const auto all = std::as_const(m).parameters();
    CHECK(part.trainable.size() + part.frozen.size() == all.size());
    std::set<std::string> names;
    std::size_t walked = 0;
    for (const auto* p : all) {
        CHECK(names.insert(p->name).second);
        if (p->frozen) continue;
        walked += p->value.numel();
        const bool is_gate = p->name.find(".gate.") != std::string::npos;
        CHECK((p->group == ParamGroup::Gate) == is_gate);
    }
    CHECK(m.blocks[0].vit.w_q.frozen);
    CHECK(std::find(part.frozen.begin(), part.frozen.end(), &m.blocks[0].vit.w_q) != part.frozen.end());
    CHECK(!m.head_w.frozen);
    CHECK(walked == count_params(part.trainable));
    CHECK(walked == closed_form_trainable_count(m.config()));

    const auto& c = m.config();
    const std::size_t D = c.embed_dim, mid = c.adapter_mid;
    std::size_t per_block = 0;
    for (auto r : c.lora_ranks) per_block += 3 * r * (D + D);
    per_block += 5 * (mid * D * 2 + mid * mid * 9);
    per_block += 2 * (D * 4 + D * 5);
    CHECK(walked == c.depth * per_block + D * 2 + 2);
}

TEST_CASE("same seed gives the same model", "[model]") {
    MoEFFDModel<float> a(ModelConfig::tiny(), 9), b(ModelConfig::tiny(), 9), c(ModelConfig::tiny(), 10);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->value == pb[i]->value);
        any_diff = any_diff || !(pa[i]->value == pc[i]->value);
    }
    CHECK(any_diff);
}

TEST_CASE("zeroed head gives even logits", "[model]") {
    MoEFFDModel<double> m(ModelConfig::tiny(), 4);
    m.head_w.value.fill(0.0);
    Rng rng(48);
    std::vector<Tensor<double>> imgs{random_tensor({3, 16, 16}, rng), random_tensor({3, 16, 16}, rng)};
    std::vector<const Tensor<double>*> ptrs{&imgs[0], &imgs[1]};
    auto out = model_forward<double>(ptrs, m, false, nullptr);
    CHECK(out.logits.shape() == Shape{2, 2});
    for (auto v : out.logits.storage()) CHECK(v == 0.0);
    CHECK(out.records.size() == 2);
    CHECK(out.records[0].size() == 2);
}

TEST_CASE("total_loss hand computation", "[model]") {
    auto logits = Tensor<double>::from({2, 2}, {1.0, -1.0, 0.5, 0.25});
    const std::vector<int> labels{0, 1};
    std::vector<std::vector<GateRecord>> recs(2);
    recs[0].push_back({0, GateType::LoRA, topk_gate(std::vector<double>{3, 0}, 1)});
    recs[1].push_back({0, GateType::LoRA, topk_gate(std::vector<double>{3, 0}, 1)});
    recs[0].push_back({0, GateType::Adapter, topk_gate(std::vector<double>{0, 3}, 1)});
    recs[1].push_back({0, GateType::Adapter, topk_gate(std::vector<double>{3, 0}, 1)});

    const double ce0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
    const double ce1 = -std::log(std::exp(0.25) / (std::exp(0.5) + std::exp(0.25)));
    const double ce = (ce0 + ce1) / 2;
    // LoRA importance [2, 0] → CV² = 1; adapter importance [1, 1] → 0.
    auto l = total_loss(logits, labels, recs, 0.7);
    CHECK(l.ce == Catch::Approx(ce).epsilon(1e-14));
    CHECK(l.moe == Catch::Approx(1.0).epsilon(1e-14));
    CHECK(l.total == Catch::Approx(ce + 0.7).epsilon(1e-14));
    auto l0 = total_loss(logits, labels, recs, 0.0);
    CHECK(l0.total == l0.ce);

    recs[0][0].decision = topk_gate(std::vector<double>{0, 3}, 1);
    auto balanced = total_loss(logits, labels, recs, 5.0);
    CHECK(balanced.total == balanced.ce);
}

TEST_CASE("adam step examples", "[model]") {
    Parameter<float> p("x", Tensor<float>::from({1}, {1.0f}), false);
    Parameter<float> frozen("f", Tensor<float>::from({1}, {2.0f}), true);
    Parameter<float> g("g", Tensor<float>::from({1}, {3.0f}), false, ParamGroup::Gate);
    std::vector<Parameter<float>*> params{&p, &frozen, &g};
    auto state = make_adam_state(params);
    AdamConfig cfg;
    std::vector<Tensor<float>> grads{Tensor<float>::from({1}, {1.0f}), Tensor<float>::from({1}, {5.0f}),
                                     Tensor<float>::from({1}, {1.0f})};
    adam_step(params, grads, state, cfg);
    CHECK(p.value[0] == static_cast<float>(1.0 - cfg.lr_other / (1.0 + cfg.eps)));
    CHECK(g.value[0] == static_cast<float>(3.0 - cfg.lr_gate / (1.0 + cfg.eps)));
    CHECK(frozen.value[0] == 2.0f);

    std::vector<Tensor<float>> zero{Tensor<float>({1}), Tensor<float>({1}), Tensor<float>({1})};
    auto s2 = make_adam_state(params);
    const float before = p.value[0];
    adam_step(params, zero, s2, cfg);
    CHECK(p.value[0] == before);

    std::vector<Tensor<float>> bad{Tensor<float>::from({1}, {NAN}), Tensor<float>({1}), Tensor<float>({1})};
    CHECK_THROWS_AS(adam_step(params, bad, s2, cfg), NumericError);
    CHECK(p.value[0] == before);
}

TEST_CASE("backbone_only trains only the head", "[model]") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.mode = RoutingMode::BackboneOnly;
    MoEFFDModel<double> m(cfg, 5);
    Rng rng(49);
    std::vector<Tensor<double>> imgs{random_tensor({3, 16, 16}, rng), random_tensor({3, 16, 16}, rng)};
    std::vector<const Tensor<double>*> ptrs{&imgs[0], &imgs[1]};
    const std::vector<int> labels{0, 1};
    auto g = compute_batch_gradients<double>(m, ptrs, labels, 1.0, true, &rng);
    auto params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool head = params[i] == &m.head_w || params[i] == &m.head_b;
        double norm = 0;
        for (auto v : g.grads[i].storage()) norm += v * v;
        INFO(params[i]->name);
        if (head)
            CHECK(norm > 0);
        else
            CHECK(norm == 0);
    }
    CHECK(g.loss.moe == 0.0);
}

TEST_CASE("invalid configs are rejected", "[model]") {
    ModelConfig c = ModelConfig::desk();
    c.top_k = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig::desk();
    c.patch_size = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig::desk();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig::desk();
    c.lora_ranks.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(ModelConfig::full_scale().validate());
    std::size_t fixed = 0;
    CHECK(parse_routing_mode("single_expert:2", &fixed) == RoutingMode::SingleExpert);
    CHECK(fixed == 2);
    CHECK_THROWS(parse_routing_mode("dense", &fixed));
}
