// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace moeffd {

namespace {

void require_rank(const Shape& s, std::size_t r, const char* what) {
    if (s.size() != r)
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul lhs");
    require_rank(b.shape(), 2, "matmul rhs");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
    Tensor<T> c({m, n});
    const T* __restrict ap = a.ptr();
    const T* __restrict bp = b.ptr();
    T* __restrict cp = c.ptr();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = cp + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ap[i * k + p];
            const T* brow = bp + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul_nt lhs");
    require_rank(b.shape(), 2, "matmul_nt rhs");
    if (a.dim(1) != b.dim(1))
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " · " +
                             shape_str(b.shape()) + "ᵀ");
    return matmul(a, transpose(b));
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a.shape(), 2, "matmul_tn lhs");
    require_rank(b.shape(), 2, "matmul_tn rhs");
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul_tn: inner extents differ, " + shape_str(a.shape()) + "ᵀ · " +
                             shape_str(b.shape()));
    Tensor<T> c({m, n});
    const T* __restrict ap = a.ptr();
    const T* __restrict bp = b.ptr();
    T* __restrict cp = c.ptr();
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = bp + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = ap[p * m + i];
            T* crow = cp + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank(a.shape(), 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<T> t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ArgumentError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    Tensor<T> y(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = x[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
            T sum = 0;
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(x[base + i * inner] - mx);
                y[base + i * inner] = e;
                sum += e;
            }
            for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= sum;
        }
    }
    return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, double eps) {
    const std::size_t d = x.shape().back();
    if (scale.numel() != d || shift.numel() != d)
        throw DimensionError("layer_norm: affine extent " + shape_str(scale.shape()) + " vs input " +
                             shape_str(x.shape()));
    const std::size_t rows = x.numel() / d;
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.ptr() + r * d;
        T* yr = y.ptr() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * inv * scale[j] + shift[j];
    }
    return y;
}

template <typename T>
T gelu_scalar(T x) {
    constexpr T c = static_cast<T>(0.7978845608028654);  // √(2/π)
    const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
    return static_cast<T>(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T x) {
    constexpr T c = static_cast<T>(0.7978845608028654);
    const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
    return static_cast<T>(0.5) * (T(1) + t) + static_cast<T>(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = gelu_scalar(x[i]);
    return y;
}

template <typename T>
T softplus_scalar(T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
Tensor<T> avg_pool_tokens(const Tensor<T>& x) {
    if (x.numel() == 0) throw ArgumentError("avg_pool_tokens: empty token sequence");
    require_rank(x.shape(), 2, "avg_pool_tokens");
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> m({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m[j] += x[i * d + j];
    for (std::size_t j = 0; j < d; ++j) m[j] /= static_cast<T>(n);
    return m;
}

#define MOEFFD_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> transpose(const Tensor<T>&);                                                \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                     \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
    template T gelu_scalar(T);                                                                     \
    template T gelu_grad_scalar(T);                                                                \
    template Tensor<T> gelu(const Tensor<T>&);                                                     \
    template T softplus_scalar(T);                                                                 \
    template Tensor<T> avg_pool_tokens(const Tensor<T>&);

MOEFFD_INSTANTIATE_OPS(float)
MOEFFD_INSTANTIATE_OPS(double)

}  // namespace moeffd
