// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation on a per-sample tape.
//
// A Tape records every intermediate in creation order; backward() walks it
// in reverse. Nodes that do not depend on any trainable leaf are never
// visited, so frozen prefixes of the network cost nothing on the way back.
// Parameter leaves reference the parameter storage directly and collect
// their gradients on the tape; callers reduce them into global buffers.
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "moeffd/ops.hpp"
#include "moeffd/tensor.hpp"

namespace moeffd {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> v) { return push(std::move(v), nullptr, nullptr, false, {}); }

    Var<T> input(Tensor<T> v, bool requires_grad = true) {
        return push(std::move(v), nullptr, nullptr, requires_grad, {});
    }

    // Leaf bound to a parameter; repeated calls return the same node.
    Var<T> param(const Parameter<T>& p) {
        if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>{this, it->second};
        Var<T> v = push(Tensor<T>{}, &p.value, &p, !p.frozen, {});
        param_ids_.emplace(&p, v.id);
        return v;
    }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        bool rg = false;
        for (const auto& in : inputs) rg = rg || requires_grad(in.id);
        return push(std::move(value), nullptr, nullptr, rg, rg ? std::move(fn) : BackwardFn{});
    }

    const Tensor<T>& value(std::uint32_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.value;
    }
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

    // Adds g into the gradient of `id`; no-op for nodes outside the trainable graph.
    void accumulate(std::uint32_t id, const Tensor<T>& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }
    void accumulate(Var<T> v, const Tensor<T>& g) { accumulate(v.id, g); }

    // Gradient buffer of `id`, zero-initialised on first access.
    Tensor<T>& grad_buffer(std::uint32_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor<T>::zeros(value(id).shape());
            n.has_grad = true;
        }
        return n.grad;
    }

    const Tensor<T>* grad(Var<T> v) const {
        const Node& n = nodes_[v.id];
        return n.has_grad ? &n.grad : nullptr;
    }

    void seed(Var<T> v, const Tensor<T>& g) {
        require_same_shape(value(v.id).shape(), g.shape(), "tape seed");
        accumulate(v.id, g);
    }

    // Propagates every seeded gradient back to the leaves.
    void backward() {
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

    void backward(Var<T> scalar_root) {
        if (value(scalar_root.id).numel() != 1) throw ArgumentError("backward root must be a scalar");
        seed(scalar_root, Tensor<T>(value(scalar_root.id).shape(), T(1)));
        backward();
    }

    // Visits (parameter, gradient) for every trainable parameter leaf that received a gradient.
    template <typename F>
    void for_each_param_grad(F&& f) const {
        for (const auto& n : nodes_)
            if (n.param && n.has_grad) f(*n.param, n.grad);
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* ref = nullptr;
        const Parameter<T>* param = nullptr;
        Tensor<T> grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> push(Tensor<T> v, const Tensor<T>* ref, const Parameter<T>* p, bool rg, BackwardFn fn) {
        nodes_.push_back(Node{std::move(v), ref, p, Tensor<T>{}, false, rg, std::move(fn)});
        return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::uint32_t> param_ids_;
};

// Differentiable operations. Shapes follow the plain kernels in ops.hpp.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
// x[N×D] + b[D] broadcast over rows.
template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> b);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> scale, Var<T> shift, double eps = kDefaultLayerNormEps);
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> softplus(Var<T> x);
// Elementwise product with a constant tensor.
template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& c);
// Σ x ⊙ c as a one-element tensor.
template <typename T>
Var<T> dot_const(Var<T> x, const Tensor<T>& c);
// [N×D] -> [D]
template <typename T>
Var<T> mean_rows(Var<T> x);
// [N×D] -> [1×D]
template <typename T>
Var<T> select_row(Var<T> x, std::size_t row);
// row[D] on top of x[n×D] -> [(n+1)×D]
template <typename T>
Var<T> prepend_row(Var<T> row, Var<T> x);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
// x · w[i] for a vector-valued w.
template <typename T>
Var<T> scale_by_entry(Var<T> x, Var<T> w, std::size_t i);
// Softmax restricted to `kept`; every other entry is exactly zero.
template <typename T>
Var<T> masked_softmax(Var<T> logits, const std::vector<std::size_t>& kept);
// Multi-head scaled dot-product attention on [N×dim] projections; heads split
// the columns into contiguous blocks of dim/heads.
template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads);

}  // namespace moeffd
