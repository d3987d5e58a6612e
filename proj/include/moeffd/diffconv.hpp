// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Local difference convolutions used by the adapter experts.
//
// Every kind owns a 3×3 weight per (out, in) channel pair: a centre weight
// w_c and eight neighbour weights w_p. The kind decides what each w_p
// multiplies:
//
//   Vanilla  x_p
//   CDC      x_p − x_c
//   ADC      x_p − x_next(p)          (next = clockwise successor on the ring)
//   RDC      x_R(p) − x_p             (R(p) = c + 2·(p − c), the outer ring)
//   SOC      (x_R(p) − x_p) + (x_c − x_p)
//
// and y = w_c·x_c + Σ_{p≠c} w_p·x̂_p. Samples outside the map read as zero.
// Because each x̂_p is a fixed linear combination of shifted inputs, every
// kind is a vanilla convolution with a "lifted" effective kernel (3×3 for
// Vanilla/CDC/ADC, 5×5 for RDC/SOC); forward and backward run through it.
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "moeffd/autograd.hpp"
#include "moeffd/tensor.hpp"

namespace moeffd {

enum class DiffConvKind : std::uint8_t { Vanilla, ADC, CDC, RDC, SOC };

inline constexpr std::array<DiffConvKind, 5> kAllDiffConvKinds = {
    DiffConvKind::Vanilla, DiffConvKind::ADC, DiffConvKind::CDC, DiffConvKind::RDC, DiffConvKind::SOC};

std::string_view kind_name(DiffConvKind k);
DiffConvKind kind_from_name(std::string_view name);

// Side of the receptive field Ω: 3 for Vanilla/ADC/CDC, 5 for RDC/SOC.
std::size_t neighborhood_size(DiffConvKind k);

struct Offset {
    int di = 0;
    int dj = 0;
    bool operator==(const Offset&) const = default;
};

// Clockwise ring NW → N → NE → E → SE → S → SW → W.
inline constexpr std::array<Offset, 8> kClockwiseRing = {
    Offset{-1, -1}, Offset{-1, 0}, Offset{-1, 1}, Offset{0, 1},
    Offset{1, 1},   Offset{1, 0},  Offset{1, -1}, Offset{0, -1}};

template <typename T>
struct DiffKernel {
    DiffConvKind kind = DiffConvKind::Vanilla;
    Tensor<T> weights;  // [C_out × C_in × 3 × 3]
};

// x̂_p at (channel, i, j) for neighbour offset p ∈ {−1,0,1}² \ {0}.
template <typename T>
T sample_xhat(const Tensor<T>& x, std::size_t channel, std::size_t i, std::size_t j, Offset p, DiffConvKind kind);

// Effective vanilla kernel [C_out × C_in × K × K], K = neighborhood_size(kind).
template <typename T>
Tensor<T> lift_kernel(const Tensor<T>& weights, DiffConvKind kind);
// Adjoint of lift_kernel: maps a gradient on the effective kernel back to the 3×3 weights.
template <typename T>
Tensor<T> lift_kernel_adjoint(const Tensor<T>& effective_grad, DiffConvKind kind);

// Zero-padded, stride-1, same-size correlation of x[C_in×H×W] with kernel[C_out×C_in×K×K].
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& kernel);

template <typename T>
Tensor<T> diff_conv_forward(const Tensor<T>& x, const DiffKernel<T>& kernel);

// Per-pixel channel map x[C_in×H×W] -> [C_out×H×W], w[C_out×C_in].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w);

template <typename T>
Var<T> diff_conv(Var<T> x, Var<T> weights, DiffConvKind kind);
template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> w);

}  // namespace moeffd
