// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moeffd/gating.hpp"
#include "moeffd/gradcheck.hpp"

using namespace moeffd;
using Catch::Approx;

TEST_CASE("moe_loss hand values", "[gating]") {
    const std::vector<double> a{1.0, 3.0};
    CHECK(moe_loss(a) == 0.25);
    const std::vector<double> c{0.7, 0.7, 0.7, 0.7};
    CHECK(moe_loss(c) == 0.0);
    const std::vector<double> z{0.0, 0.0};
    CHECK_THROWS_AS(moe_loss(z), DegenerateGateError);
    CHECK_THROWS_AS(moe_loss(std::vector<double>{}), ArgumentError);
}

TEST_CASE("moe_loss is scale invariant with a matching gradient", "[gating][property]") {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> imp(2 + rng.below(6));
        for (auto& v : imp) v = rng.uniform(0.01, 5.0);
        std::vector<double> scaled = imp;
        const double alpha = rng.uniform(0.1, 10.0);
        for (auto& v : scaled) v *= alpha;
        CHECK(std::abs(moe_loss(scaled) - moe_loss(imp)) <= 1e-12);

        const auto g = moe_loss_grad(imp);
        for (std::size_t i = 0; i < imp.size(); ++i) {
            auto up = imp, dn = imp;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            const double fd = (moe_loss(up) - moe_loss(dn)) / 2e-6;
            CHECK(g[i] == Approx(fd).margin(1e-7).epsilon(1e-5));
        }
    }
}

TEST_CASE("topk_gate examples", "[gating]") {
    const std::vector<double> h{2.0, 1.0, 0.0};
    auto d = topk_gate(h, 2);
    const double e2 = std::exp(2.0), e1 = std::exp(1.0);
    CHECK(d.weights[0] == Approx(e2 / (e2 + e1)).epsilon(1e-14));
    CHECK(d.weights[1] == Approx(e1 / (e2 + e1)).epsilon(1e-14));
    CHECK(d.weights[2] == 0.0);
    CHECK(d.selected == std::vector<std::size_t>{0, 1});

    auto one = topk_gate(std::vector<double>{0.1, 4.0, -2.0}, 1);
    CHECK(one.weights == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(one.top1() == 1);

    auto full = topk_gate(h, 3);
    const double z = e2 + e1 + 1.0;
    CHECK(full.weights[2] == Approx(1.0 / z).epsilon(1e-14));

    CHECK_THROWS_AS(topk_gate(h, 0), ArgumentError);
    CHECK_THROWS_AS(topk_gate(h, 4), ArgumentError);
}

TEST_CASE("ties go to the lower index", "[gating]") {
    auto d = topk_gate(std::vector<double>{0, 0, 0, 0}, 1);
    CHECK(d.top1() == 0);
    CHECK(topk_indices(std::vector<double>{1, 3, 3, 1}, 3) == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("importance sums weight vectors", "[gating]") {
    auto a = topk_gate(std::vector<double>{5, 0}, 1);
    auto b = topk_gate(std::vector<double>{0, 5}, 1);
    std::vector<GateDecision> ds{a, b};
    CHECK(importance(ds) == std::vector<double>{1.0, 1.0});
    std::vector<GateDecision> single{topk_gate(std::vector<double>{0.3, 0.1, -1}, 2)};
    CHECK(importance(single) == single[0].weights);

    Rng rng(32);
    std::vector<GateDecision> batch;
    ImportanceAccumulator acc(4);
    for (int i = 0; i < 30; ++i) {
        std::vector<double> h(4);
        for (auto& v : h) v = rng.normal();
        batch.push_back(topk_gate(h, 2));
        acc.add(batch.back());
    }
    std::vector<double> ref(4, 0.0);
    for (const auto& d : batch)
        for (std::size_t i = 0; i < 4; ++i) ref[i] += d.weights[i];
    CHECK(importance(batch) == ref);
    CHECK(acc.sums() == ref);
    CHECK(acc.count() == 30);
}

TEST_CASE("gate logits follow the noisy formula", "[gating]") {
    Rng init(33);
    auto gate = make_gate<double>("g", 6, 4, 0.5, init);
    for (auto& v : gate.w_noise.value.storage()) v = init.normal(0, 0.3);
    CHECK(gate.w_gate.group == ParamGroup::Gate);
    CHECK(gate.w_noise.group == ParamGroup::Gate);
    Tensor<double> x(Shape{6});
    for (auto& v : x.storage()) v = init.normal();

    auto eval = gate_logits(x, gate, false, nullptr);
    CHECK(eval.noisy == eval.clean);
    CHECK(eval.noise.empty());

    Rng noise(34);
    auto tr = gate_logits(x, gate, true, &noise);
    for (std::size_t i = 0; i < 4; ++i) {
        double clean = 0, raw = 0;
        for (std::size_t d = 0; d < 6; ++d) {
            clean += x[d] * gate.w_gate.value.at(d, i);
            raw += x[d] * gate.w_noise.value.at(d, i);
        }
        const double sp = std::log1p(std::exp(raw));
        CHECK(std::abs(tr.clean[i] - clean) <= 1e-12);
        CHECK(std::abs(tr.noisy[i] - (clean + tr.noise[i] * sp)) <= 1e-12);
    }
    CHECK_THROWS_AS(gate_logits(x, gate, true, nullptr), ArgumentError);
    CHECK_THROWS_AS(gate_logits(Tensor<double>(Shape{5}), gate, false, nullptr), DimensionError);
}

TEST_CASE("zero gate picks expert 0 in eval mode", "[gating]") {
    Rng init(35);
    auto gate = make_gate<double>("g", 3, 5, 0.0, init);
    gate.w_gate.value.fill(0.0);
    Tape<double> tape;
    Tensor<double> toks(Shape{4, 3});
    for (auto& v : toks.storage()) v = init.normal();
    auto out = route(tape.constant(toks), gate, 1, false, nullptr);
    CHECK(out.decision.top1() == 0);
    for (double l : out.decision.clean_logits) CHECK(l == 0.0);
}

TEST_CASE("routing gradients match finite differences", "[gating][gradcheck]") {
    Rng rng(36);
    auto gate = make_gate<double>("g", 5, 4, 0.4, rng);
    for (auto& v : gate.w_noise.value.storage()) v = rng.normal(0, 0.4);
    Tensor<double> toks(Shape{3, 5});
    for (auto& v : toks.storage()) v = rng.normal();
    Tensor<double> c(Shape{4});
    for (auto& v : c.storage()) v = rng.normal();

    Tensor<double> g_gate, g_noise;
    auto f = [&](bool grads) {
        Tape<double> tape;
        Rng noise(37);
        auto out = route(tape.constant(toks), gate, 4, true, &noise);
        auto y = dot_const(out.weights, c);
        if (grads) {
            tape.backward(y);
            tape.for_each_param_grad([&](const Parameter<double>& p, const Tensor<double>& g) {
                (p.name == gate.w_gate.name ? g_gate : g_noise) = g;
            });
        }
        return y.value()[0];
    };
    f(true);
    REQUIRE(!g_gate.empty());
    REQUIRE(!g_noise.empty());
    auto r = finite_difference_gradcheck([&] { return f(false); },
                                         {{"w_gate", &gate.w_gate.value, &g_gate},
                                          {"w_noise", &gate.w_noise.value, &g_noise}},
                                         {1e-5});
    CHECK(r.max_rel_error <= 1e-8);
}

// Descending the balancing loss alone on a skewed k=2 gate spreads the load.
TEST_CASE("balancing loss equalises importance with k=2", "[gating][statistical]") {
    const std::size_t dim = 8, ne = 4, n = 64;
    Rng rng(38);
    auto gate = make_gate<double>("g", dim, ne, 0.1, rng);
    for (std::size_t d = 0; d < dim; ++d) gate.w_gate.value.at(d, 0) += 0.8;
    std::vector<Tensor<double>> xs;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<double> t(Shape{2, dim});
        for (auto& v : t.storage()) v = rng.normal(0.5, 1.0);
        xs.push_back(t);
    }
    auto batch_loss = [&](bool step, Rng& noise) {
        Tape<double> tape;
        std::vector<Var<double>> ws;
        std::vector<GateDecision> ds;
        for (const auto& x : xs) {
            auto out = route(tape.constant(x), gate, 2, true, &noise);
            ws.push_back(out.weights);
            ds.push_back(out.decision);
        }
        const auto imp = importance(ds);
        const double loss = moe_loss(imp);
        if (step) {
            const auto g = moe_loss_grad(imp);
            Tensor<double> gt(Shape{ne});
            for (std::size_t i = 0; i < ne; ++i) gt[i] = g[i];
            for (auto& w : ws) tape.seed(w, gt);
            tape.backward();
            tape.for_each_param_grad([&](const Parameter<double>& p, const Tensor<double>& gr) {
                if (p.name != gate.w_gate.name) return;
                for (std::size_t i = 0; i < gr.numel(); ++i) gate.w_gate.value[i] -= 0.05 * gr[i];
            });
        }
        return loss;
    };
    Rng noise(39);
    double before = 0, after = 0;
    for (int i = 0; i < 5; ++i) before += batch_loss(false, noise) / 5;
    for (int i = 0; i < 300; ++i) batch_loss(true, noise);
    for (int i = 0; i < 5; ++i) after += batch_loss(false, noise) / 5;
    INFO("before " << before << " after " << after);
    CHECK(after < 0.25 * before);
}
