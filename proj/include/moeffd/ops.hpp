// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Forward kernels on plain tensors. The autograd layer (autograd.hpp) wraps
// these and adds the matching backward passes.
#pragma once

#include <cstddef>

#include "moeffd/tensor.hpp"

namespace moeffd {

inline constexpr double kDefaultLayerNormEps = 1e-6;

// a[m×k] · b[k×n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[m×k] · b[n×k]ᵀ
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// a[k×m]ᵀ · b[k×n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes every row of the trailing extent D, then applies scale/shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     double eps = kDefaultLayerNormEps);

// GELU, tanh approximation:
//   gelu(x) = 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
template <typename T>
T gelu_scalar(T x);
// d/dx of gelu_scalar.
template <typename T>
T gelu_grad_scalar(T x);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// softplus(x) = log(1 + eˣ), evaluated without overflow.
template <typename T>
T softplus_scalar(T x);

// Mean over the token axis of an [N_t × dim] sequence -> [dim].
template <typename T>
Tensor<T> avg_pool_tokens(const Tensor<T>& x);

}  // namespace moeffd
