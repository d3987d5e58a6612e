// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/diffconv.hpp"

#include <algorithm>

namespace moeffd {

std::string_view kind_name(DiffConvKind k) {
    switch (k) {
        case DiffConvKind::Vanilla: return "vanilla";
        case DiffConvKind::ADC: return "adc";
        case DiffConvKind::CDC: return "cdc";
        case DiffConvKind::RDC: return "rdc";
        case DiffConvKind::SOC: return "soc";
    }
    return "?";
}

DiffConvKind kind_from_name(std::string_view name) {
    for (auto k : kAllDiffConvKinds)
        if (kind_name(k) == name) return k;
    throw ArgumentError("unknown convolution kind '" + std::string(name) + "'");
}

std::size_t neighborhood_size(DiffConvKind k) {
    return (k == DiffConvKind::RDC || k == DiffConvKind::SOC) ? 5 : 3;
}

namespace {

struct LiftTerm {
    int src;  // index into the 3×3 weight (row-major)
    int dst;  // index into the K×K effective kernel
    int coef;
};

int w_index(Offset o) { return (o.di + 1) * 3 + (o.dj + 1); }

// Terms expressing the effective kernel as a linear function of the 3×3 weights.
std::vector<LiftTerm> lift_terms(DiffConvKind kind) {
    const int k = static_cast<int>(neighborhood_size(kind));
    const int r = k / 2;
    auto e = [&](Offset o) { return (o.di + r) * k + (o.dj + r); };
    const Offset c{0, 0};
    std::vector<LiftTerm> terms;
    terms.push_back({w_index(c), e(c), 1});
    for (std::size_t n = 0; n < kClockwiseRing.size(); ++n) {
        const Offset p = kClockwiseRing[n];
        const int src = w_index(p);
        const Offset outer{2 * p.di, 2 * p.dj};
        switch (kind) {
            case DiffConvKind::Vanilla:
                terms.push_back({src, e(p), 1});
                break;
            case DiffConvKind::CDC:
                terms.push_back({src, e(p), 1});
                terms.push_back({src, e(c), -1});
                break;
            case DiffConvKind::ADC:
                terms.push_back({src, e(p), 1});
                terms.push_back({src, e(kClockwiseRing[(n + 1) % kClockwiseRing.size()]), -1});
                break;
            case DiffConvKind::RDC:
                terms.push_back({src, e(outer), 1});
                terms.push_back({src, e(p), -1});
                break;
            case DiffConvKind::SOC:
                terms.push_back({src, e(outer), 1});
                terms.push_back({src, e(p), -2});
                terms.push_back({src, e(c), 1});
                break;
        }
    }
    return terms;
}

template <typename T>
T read_padded(const Tensor<T>& x, std::size_t ch, long i, long j) {
    if (i < 0 || j < 0 || i >= static_cast<long>(x.dim(1)) || j >= static_cast<long>(x.dim(2))) return T(0);
    return x.at(ch, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
}

void require_map(const Shape& s, const char* what) {
    if (s.size() != 3) throw DimensionError(std::string(what) + ": expected C×H×W, got " + shape_str(s));
}

void require_weights(const Shape& s) {
    if (s.size() != 4 || s[2] != 3 || s[3] != 3)
        throw DimensionError("diff_conv: expected weights C_out×C_in×3×3, got " + shape_str(s));
}

// dx for y = conv2d_same(x, kernel).
template <typename T>
Tensor<T> conv2d_same_input_grad(const Tensor<T>& gy, const Tensor<T>& kernel, const Shape& x_shape) {
    const std::size_t co = kernel.dim(0), ci = kernel.dim(1), k = kernel.dim(2);
    const long h = static_cast<long>(x_shape[1]), w = static_cast<long>(x_shape[2]);
    const long r = static_cast<long>(k / 2);
    Tensor<T> gx(x_shape);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
            for (long a = 0; a < static_cast<long>(k); ++a)
                for (long b = 0; b < static_cast<long>(k); ++b) {
                    const T e = kernel[((o * ci + c) * k + a) * k + b];
                    if (e == T(0)) continue;
                    const long di = a - r, dj = b - r;
                    const long i0 = std::max(0L, -di), i1 = std::min(h, h - di);
                    const long j0 = std::max(0L, -dj), j1 = std::min(w, w - dj);
                    for (long i = i0; i < i1; ++i) {
                        const T* gyr = gy.ptr() + (o * h + i) * w;
                        T* gxr = gx.ptr() + (c * h + i + di) * w + dj;
                        for (long j = j0; j < j1; ++j) gxr[j] += e * gyr[j];
                    }
                }
    return gx;
}

// dkernel for y = conv2d_same(x, kernel).
template <typename T>
Tensor<T> conv2d_same_kernel_grad(const Tensor<T>& gy, const Tensor<T>& x, const Shape& k_shape) {
    const std::size_t co = k_shape[0], ci = k_shape[1], k = k_shape[2];
    const long h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
    const long r = static_cast<long>(k / 2);
    Tensor<T> gk(k_shape);
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
            for (long a = 0; a < static_cast<long>(k); ++a)
                for (long b = 0; b < static_cast<long>(k); ++b) {
                    const long di = a - r, dj = b - r;
                    const long i0 = std::max(0L, -di), i1 = std::min(h, h - di);
                    const long j0 = std::max(0L, -dj), j1 = std::min(w, w - dj);
                    T acc = 0;
                    for (long i = i0; i < i1; ++i) {
                        const T* gyr = gy.ptr() + (o * h + i) * w;
                        const T* xr = x.ptr() + (c * h + i + di) * w + dj;
                        for (long j = j0; j < j1; ++j) acc += gyr[j] * xr[j];
                    }
                    gk[((o * ci + c) * k + a) * k + b] = acc;
                }
    return gk;
}

}  // namespace

template <typename T>
T sample_xhat(const Tensor<T>& x, std::size_t channel, std::size_t i, std::size_t j, Offset p, DiffConvKind kind) {
    require_map(x.shape(), "sample_xhat");
    if (p.di == 0 && p.dj == 0) throw ArgumentError("sample_xhat: the centre is not a neighbour");
    if (p.di < -1 || p.di > 1 || p.dj < -1 || p.dj > 1) throw ArgumentError("sample_xhat: offset outside the 3×3 ring");
    if (channel >= x.dim(0) || i >= x.dim(1) || j >= x.dim(2)) throw ArgumentError("sample_xhat: position out of bounds");
    const long ii = static_cast<long>(i), jj = static_cast<long>(j);
    const T xc = x.at(channel, i, j);
    const T xp = read_padded(x, channel, ii + p.di, jj + p.dj);
    switch (kind) {
        case DiffConvKind::Vanilla: return xp;
        case DiffConvKind::CDC: return xp - xc;
        case DiffConvKind::ADC: {
            const auto it = std::find(kClockwiseRing.begin(), kClockwiseRing.end(), p);
            const Offset nx = kClockwiseRing[static_cast<std::size_t>(it - kClockwiseRing.begin() + 1) % 8];
            return xp - read_padded(x, channel, ii + nx.di, jj + nx.dj);
        }
        case DiffConvKind::RDC: return read_padded(x, channel, ii + 2 * p.di, jj + 2 * p.dj) - xp;
        case DiffConvKind::SOC: return (read_padded(x, channel, ii + 2 * p.di, jj + 2 * p.dj) - xp) + (xc - xp);
    }
    return T(0);
}

template <typename T>
Tensor<T> lift_kernel(const Tensor<T>& weights, DiffConvKind kind) {
    require_weights(weights.shape());
    const std::size_t co = weights.dim(0), ci = weights.dim(1), k = neighborhood_size(kind);
    Tensor<T> eff({co, ci, k, k});
    const auto terms = lift_terms(kind);
    for (std::size_t pair = 0; pair < co * ci; ++pair) {
        const T* w = weights.ptr() + pair * 9;
        T* e = eff.ptr() + pair * k * k;
        for (const auto& t : terms) e[t.dst] += static_cast<T>(t.coef) * w[t.src];
    }
    return eff;
}

template <typename T>
Tensor<T> lift_kernel_adjoint(const Tensor<T>& effective_grad, DiffConvKind kind) {
    const std::size_t k = neighborhood_size(kind);
    if (effective_grad.rank() != 4 || effective_grad.dim(2) != k || effective_grad.dim(3) != k)
        throw DimensionError("lift_kernel_adjoint: unexpected shape " + shape_str(effective_grad.shape()));
    const std::size_t co = effective_grad.dim(0), ci = effective_grad.dim(1);
    Tensor<T> gw({co, ci, 3, 3});
    const auto terms = lift_terms(kind);
    for (std::size_t pair = 0; pair < co * ci; ++pair) {
        const T* ge = effective_grad.ptr() + pair * k * k;
        T* g = gw.ptr() + pair * 9;
        for (const auto& t : terms) g[t.src] += static_cast<T>(t.coef) * ge[t.dst];
    }
    return gw;
}

template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const Tensor<T>& kernel) {
    require_map(x.shape(), "conv2d");
    if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0)
        throw DimensionError("conv2d: expected C_out×C_in×K×K with odd K, got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != x.dim(0))
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " vs input " + shape_str(x.shape()));
    const std::size_t co = kernel.dim(0), ci = kernel.dim(1), k = kernel.dim(2);
    const long h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
    const long r = static_cast<long>(k / 2);
    Tensor<T> y({co, x.dim(1), x.dim(2)});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
            for (long a = 0; a < static_cast<long>(k); ++a)
                for (long b = 0; b < static_cast<long>(k); ++b) {
                    const T e = kernel[((o * ci + c) * k + a) * k + b];
                    if (e == T(0)) continue;
                    const long di = a - r, dj = b - r;
                    const long i0 = std::max(0L, -di), i1 = std::min(h, h - di);
                    const long j0 = std::max(0L, -dj), j1 = std::min(w, w - dj);
                    for (long i = i0; i < i1; ++i) {
                        T* yr = y.ptr() + (o * h + i) * w;
                        const T* xr = x.ptr() + (c * h + i + di) * w + dj;
                        for (long j = j0; j < j1; ++j) yr[j] += e * xr[j];
                    }
                }
    return y;
}

template <typename T>
Tensor<T> diff_conv_forward(const Tensor<T>& x, const DiffKernel<T>& kernel) {
    require_map(x.shape(), "diff_conv");
    require_weights(kernel.weights.shape());
    if (kernel.weights.dim(1) != x.dim(0))
        throw DimensionError("diff_conv: weights " + shape_str(kernel.weights.shape()) + " vs input " +
                             shape_str(x.shape()));
    return conv2d_same(x, lift_kernel(kernel.weights, kernel.kind));
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w) {
    require_map(x.shape(), "conv1x1");
    if (w.rank() != 2 || w.dim(1) != x.dim(0))
        throw DimensionError("conv1x1: weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    const std::size_t h = x.dim(1), wd = x.dim(2);
    return matmul(w, x.reshaped({x.dim(0), h * wd})).reshaped({w.dim(0), h, wd});
}

template <typename T>
Var<T> diff_conv(Var<T> x, Var<T> weights, DiffConvKind kind) {
    const Tensor<T>& xv = x.value();
    require_map(xv.shape(), "diff_conv");
    require_weights(weights.shape());
    if (weights.value().dim(1) != xv.dim(0))
        throw DimensionError("diff_conv: weights " + shape_str(weights.shape()) + " vs input " + shape_str(xv.shape()));
    Tensor<T> eff = lift_kernel(weights.value(), kind);
    Tensor<T> y = conv2d_same(xv, eff);
    return x.tape->record(std::move(y), {x, weights}, [x, weights, kind, eff](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(weights.id))
            tp.accumulate(weights.id, lift_kernel_adjoint(conv2d_same_kernel_grad(g, tp.value(x.id), eff.shape()), kind));
        if (tp.requires_grad(x.id)) tp.accumulate(x.id, conv2d_same_input_grad(g, eff, tp.value(x.id).shape()));
    });
}

template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> w) {
    const Shape s = x.shape();
    require_map(s, "conv1x1");
    auto flat = reshape(x, {s[0], s[1] * s[2]});
    auto y = matmul(w, flat);
    return reshape(y, {w.value().dim(0), s[1], s[2]});
}

#define MOEFFD_INSTANTIATE_DIFFCONV(T)                                                                \
    template T sample_xhat(const Tensor<T>&, std::size_t, std::size_t, std::size_t, Offset, DiffConvKind); \
    template Tensor<T> lift_kernel(const Tensor<T>&, DiffConvKind);                                   \
    template Tensor<T> lift_kernel_adjoint(const Tensor<T>&, DiffConvKind);                           \
    template Tensor<T> conv2d_same(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> diff_conv_forward(const Tensor<T>&, const DiffKernel<T>&);                     \
    template Tensor<T> conv1x1(const Tensor<T>&, const Tensor<T>&);                                   \
    template Var<T> diff_conv(Var<T>, Var<T>, DiffConvKind);                                          \
    template Var<T> conv1x1(Var<T>, Var<T>);

MOEFFD_INSTANTIATE_DIFFCONV(float)
MOEFFD_INSTANTIATE_DIFFCONV(double)

}  // namespace moeffd
