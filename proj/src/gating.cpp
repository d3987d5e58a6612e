// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moeffd {

template <typename T>
GateWeights<T> make_gate(const std::string& prefix, std::size_t dim, std::size_t num_experts, double init_std, Rng& rng) {
    if (num_experts == 0) throw ArgumentError("gate needs at least one expert");
    Tensor<T> wg({dim, num_experts});
    for (auto& v : wg.storage()) v = static_cast<T>(rng.truncated_normal(init_std));
    return GateWeights<T>{Parameter<T>(prefix + ".w_gate", std::move(wg), false, ParamGroup::Gate),
                          Parameter<T>(prefix + ".w_noise", Tensor<T>({dim, num_experts}), false, ParamGroup::Gate)};
}

template <typename T>
GateLogits<T> gate_logits(const Tensor<T>& x_m, const GateWeights<T>& gate, bool training, Rng* rng) {
    const std::size_t dim = gate.w_gate.value.dim(0), ne = gate.num_experts();
    if (x_m.numel() != dim)
        throw DimensionError("gate_logits: pooled input " + shape_str(x_m.shape()) + " vs W_gate " +
                             shape_str(gate.w_gate.value.shape()));
    const Tensor<T> row = x_m.reshaped({1, dim});
    GateLogits<T> out;
    out.clean = matmul(row, gate.w_gate.value).reshaped({ne});
    out.noisy = out.clean;
    if (training) {
        if (!rng) throw ArgumentError("gate_logits: training mode needs a noise stream");
        const Tensor<T> raw = matmul(row, gate.w_noise.value);
        out.noise = Tensor<T>({ne});
        for (std::size_t i = 0; i < ne; ++i) {
            out.noise[i] = static_cast<T>(rng->normal());
            out.noisy[i] += out.noise[i] * softplus_scalar(raw[i]);
        }
    }
    return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
    if (k == 0 || k > values.size())
        throw ArgumentError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(values.size()) + "]");
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    idx.resize(k);
    return idx;
}

GateDecision topk_gate(std::span<const double> noisy, std::size_t k) {
    GateDecision d;
    d.noisy_logits.assign(noisy.begin(), noisy.end());
    d.selected = topk_indices(noisy, k);
    d.weights.assign(noisy.size(), 0.0);
    const double mx = noisy[d.selected.front()];
    double sum = 0.0;
    for (auto i : d.selected) sum += (d.weights[i] = std::exp(noisy[i] - mx));
    for (auto i : d.selected) d.weights[i] /= sum;
    return d;
}

std::vector<double> importance(std::span<const GateDecision> decisions) {
    if (decisions.empty()) throw ArgumentError("importance: empty batch");
    std::vector<double> imp(decisions.front().weights.size(), 0.0);
    for (const auto& d : decisions) {
        if (d.weights.size() != imp.size()) throw DimensionError("importance: gate width differs within the batch");
        for (std::size_t i = 0; i < imp.size(); ++i) imp[i] += d.weights[i];
    }
    return imp;
}

namespace {

struct Moments {
    double mean;
    double var;
};

Moments moments(std::span<const double> imp) {
    if (imp.empty()) throw ArgumentError("moe_loss: empty importance vector");
    const double n = static_cast<double>(imp.size());
    // Deviations from the first entry keep a constant vector at exactly zero variance.
    const double ref = imp.front();
    double shift = 0.0;
    for (double v : imp) shift += v - ref;
    shift /= n;
    const double mean = ref + shift;
    if (!(mean > 0.0)) throw DegenerateGateError("moe_loss: importance has zero mean (degenerate gate)");
    double var = 0.0;
    for (double v : imp) var += (v - ref - shift) * (v - ref - shift);
    return {mean, var / n};
}

}  // namespace

double moe_loss(std::span<const double> imp) {
    const auto m = moments(imp);
    return m.var / (m.mean * m.mean);
}

std::vector<double> moe_loss_grad(std::span<const double> imp) {
    const auto m = moments(imp);
    const double n = static_cast<double>(imp.size());
    std::vector<double> g(imp.size());
    for (std::size_t i = 0; i < imp.size(); ++i)
        g[i] = 2.0 * (imp[i] - m.mean) / (n * m.mean * m.mean) - 2.0 * m.var / (n * m.mean * m.mean * m.mean);
    return g;
}

template <typename T>
GateOutput<T> route(Var<T> tokens, const GateWeights<T>& gate, std::size_t k, bool training, Rng* rng) {
    Tape<T>& tape = *tokens.tape;
    const std::size_t dim = gate.w_gate.value.dim(0), ne = gate.num_experts();
    if (tokens.shape().size() != 2 || tokens.shape()[1] != dim)
        throw DimensionError("route: tokens " + shape_str(tokens.shape()) + " vs W_gate " +
                             shape_str(gate.w_gate.value.shape()));
    auto pooled = reshape(mean_rows(tokens), {1, dim});
    auto clean = reshape(matmul(pooled, tape.param(gate.w_gate)), {ne});
    auto noisy = clean;
    GateDecision d;
    if (training) {
        if (!rng) throw ArgumentError("route: training mode needs a noise stream");
        auto spread = reshape(softplus(matmul(pooled, tape.param(gate.w_noise))), {ne});
        Tensor<T> eps({ne});
        for (std::size_t i = 0; i < ne; ++i) eps[i] = static_cast<T>(rng->normal());
        noisy = add(clean, mul_const(spread, eps));
        d.noise.assign(eps.data().begin(), eps.data().end());
    }
    d.clean_logits.assign(clean.value().data().begin(), clean.value().data().end());
    d.noisy_logits.assign(noisy.value().data().begin(), noisy.value().data().end());
    d.selected = topk_indices(d.noisy_logits, k);
    auto weights = masked_softmax(noisy, d.selected);
    d.weights.assign(weights.value().data().begin(), weights.value().data().end());
    return GateOutput<T>{std::move(d), weights};
}

void ImportanceAccumulator::add(const GateDecision& d) {
    if (d.weights.size() != sums_.size()) throw DimensionError("importance accumulator: gate width mismatch");
    for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i] += d.weights[i];
    ++count_;
}

void ImportanceAccumulator::reset() {
    std::fill(sums_.begin(), sums_.end(), 0.0);
    count_ = 0;
}

#define MOEFFD_INSTANTIATE_GATING(T)                                                                      \
    template GateWeights<T> make_gate(const std::string&, std::size_t, std::size_t, double, Rng&);        \
    template GateLogits<T> gate_logits(const Tensor<T>&, const GateWeights<T>&, bool, Rng*);              \
    template GateOutput<T> route(Var<T>, const GateWeights<T>&, std::size_t, bool, Rng*);

MOEFFD_INSTANTIATE_GATING(float)
MOEFFD_INSTANTIATE_GATING(double)

}  // namespace moeffd
