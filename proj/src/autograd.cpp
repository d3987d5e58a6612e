// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/autograd.hpp"

#include <cmath>
#include <memory>

namespace moeffd {

namespace {

template <typename T>
Tensor<T> column_block(const Tensor<T>& x, std::size_t col0, std::size_t width) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out({n, width});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x[i * d + col0 + j];
    return out;
}

template <typename T>
void add_column_block(Tensor<T>& dst, const Tensor<T>& block, std::size_t col0) {
    const std::size_t n = dst.dim(0), d = dst.dim(1), width = block.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) dst[i * d + col0 + j] += block[i * width + j];
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(a.id)) tp.accumulate(a.id, matmul_nt(g, tp.value(b.id)));
        if (tp.requires_grad(b.id)) tp.accumulate(b.id, matmul_tn(tp.value(a.id), g));
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tensor<T> out = a.value();
    out += b.value();
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(a.id, g);
        tp.accumulate(b.id, g);
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = a.value();
    out *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> ga = g;
        ga *= s;
        tp.accumulate(a.id, ga);
    });
}

template <typename T>
Var<T> add_row_bias(Var<T> x, Var<T> b) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& bv = b.value();
    const std::size_t d = xv.shape().back();
    if (bv.numel() != d) throw DimensionError("add_row_bias: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % d];
    return x.tape->record(std::move(out), {x, b}, [x, b, d](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(x.id, g);
        if (tp.requires_grad(b.id)) {
            Tensor<T> gb(tp.value(b.id).shape());
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i % d] += g[i];
            tp.accumulate(b.id, gb);
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> scale_v, Var<T> shift_v, double eps) {
    const Tensor<T>& xv = x.value();
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.numel() / d;
    Tensor<T> out = layer_norm(xv, scale_v.value(), shift_v.value(), eps);
    // Normalised activations and inverse std per row, kept for the backward pass.
    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.ptr() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        (*inv)[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t j = 0; j < d; ++j) (*xhat)[r * d + j] = (xr[j] - mean) * (*inv)[r];
    }
    return x.tape->record(std::move(out), {x, scale_v, shift_v},
                          [x, scale_v, shift_v, xhat, inv, d, rows](Tape<T>& tp, const Tensor<T>& g) {
                              const Tensor<T>& gamma = tp.value(scale_v.id);
                              if (tp.requires_grad(scale_v.id) || tp.requires_grad(shift_v.id)) {
                                  Tensor<T> gg(gamma.shape()), gb(gamma.shape());
                                  for (std::size_t i = 0; i < g.numel(); ++i) {
                                      gg[i % d] += g[i] * (*xhat)[i];
                                      gb[i % d] += g[i];
                                  }
                                  tp.accumulate(scale_v.id, gg);
                                  tp.accumulate(shift_v.id, gb);
                              }
                              if (!tp.requires_grad(x.id)) return;
                              Tensor<T> gx(g.shape());
                              const T inv_d = T(1) / static_cast<T>(d);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T sum_dy = 0, sum_dy_xhat = 0;
                                  for (std::size_t j = 0; j < d; ++j) {
                                      const T dy = g[r * d + j] * gamma[j];
                                      sum_dy += dy;
                                      sum_dy_xhat += dy * (*xhat)[r * d + j];
                                  }
                                  for (std::size_t j = 0; j < d; ++j) {
                                      const T dy = g[r * d + j] * gamma[j];
                                      gx[r * d + j] =
                                          (*inv)[r] * (dy - inv_d * sum_dy - (*xhat)[r * d + j] * inv_d * sum_dy_xhat);
                                  }
                              }
                              tp.accumulate(x.id, gx);
                          });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    return x.tape->record(gelu(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x.id);
        Tensor<T> gx(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * gelu_grad_scalar(xv[i]);
        tp.accumulate(x.id, gx);
    });
}

template <typename T>
Var<T> softplus(Var<T> x) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = softplus_scalar(xv[i]);
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x.id);
        Tensor<T> gx(g.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] / (T(1) + std::exp(-xv[i]));
        tp.accumulate(x.id, gx);
    });
}

template <typename T>
Var<T> mul_const(Var<T> x, const Tensor<T>& c) {
    require_same_shape(x.shape(), c.shape(), "mul_const");
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    return x.tape->record(std::move(out), {x}, [x, c](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> gx = g;
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= c[i];
        tp.accumulate(x.id, gx);
    });
}

template <typename T>
Var<T> dot_const(Var<T> x, const Tensor<T>& c) {
    require_same_shape(x.shape(), c.shape(), "dot_const");
    T s = 0;
    const Tensor<T>& xv = x.value();
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i] * c[i];
    return x.tape->record(Tensor<T>({1}, s), {x}, [x, c](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> gx = c;
        gx *= g[0];
        tp.accumulate(x.id, gx);
    });
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
    const std::size_t n = x.value().dim(0);
    return x.tape->record(avg_pool_tokens(x.value()), {x}, [x, n](Tape<T>& tp, const Tensor<T>& g) {
        const std::size_t d = g.numel();
        Tensor<T> gx({n, d});
        const T s = T(1) / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] = g[j] * s;
        tp.accumulate(x.id, gx);
    });
}

template <typename T>
Var<T> select_row(Var<T> x, std::size_t row) {
    const Tensor<T>& xv = x.value();
    if (xv.rank() != 2 || row >= xv.dim(0))
        throw ArgumentError("select_row: row " + std::to_string(row) + " out of range for " + shape_str(xv.shape()));
    const std::size_t d = xv.dim(1);
    Tensor<T> out({1, d});
    for (std::size_t j = 0; j < d; ++j) out[j] = xv[row * d + j];
    return x.tape->record(std::move(out), {x}, [x, row, d](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T>& gx = tp.grad_buffer(x.id);
        for (std::size_t j = 0; j < d; ++j) gx[row * d + j] += g[j];
    });
}

template <typename T>
Var<T> prepend_row(Var<T> row, Var<T> x) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& rv = row.value();
    const std::size_t d = xv.dim(1), n = xv.dim(0);
    if (rv.numel() != d) throw DimensionError("prepend_row: " + shape_str(rv.shape()) + " onto " + shape_str(xv.shape()));
    Tensor<T> out({n + 1, d});
    for (std::size_t j = 0; j < d; ++j) out[j] = rv[j];
    for (std::size_t i = 0; i < n * d; ++i) out[d + i] = xv[i];
    return x.tape->record(std::move(out), {row, x}, [row, x, n, d](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(row.id)) {
            Tensor<T> gr(tp.value(row.id).shape());
            for (std::size_t j = 0; j < d; ++j) gr[j] = g[j];
            tp.accumulate(row.id, gr);
        }
        if (tp.requires_grad(x.id)) {
            Tensor<T> gx({n, d});
            for (std::size_t i = 0; i < n * d; ++i) gx[i] = g[d + i];
            tp.accumulate(x.id, gx);
        }
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Shape old = x.shape();
    return x.tape->record(x.value().reshaped(std::move(shape)), {x},
                          [x, old](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(x.id, g.reshaped(old)); });
}

template <typename T>
Var<T> scale_by_entry(Var<T> x, Var<T> w, std::size_t i) {
    if (i >= w.value().numel()) throw ArgumentError("scale_by_entry: index out of range");
    const T s = w.value()[i];
    Tensor<T> out = x.value();
    out *= s;
    return x.tape->record(std::move(out), {x, w}, [x, w, i, s](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(x.id)) {
            Tensor<T> gx = g;
            gx *= s;
            tp.accumulate(x.id, gx);
        }
        if (tp.requires_grad(w.id)) {
            const Tensor<T>& xv = tp.value(x.id);
            T dot = 0;
            for (std::size_t j = 0; j < g.numel(); ++j) dot += g[j] * xv[j];
            tp.grad_buffer(w.id)[i] += dot;
        }
    });
}

template <typename T>
Var<T> masked_softmax(Var<T> logits, const std::vector<std::size_t>& kept) {
    const Tensor<T>& h = logits.value();
    if (kept.empty()) throw ArgumentError("masked_softmax: empty kept set");
    T mx = h[kept[0]];
    for (auto i : kept) mx = std::max(mx, h[i]);
    Tensor<T> out(h.shape());
    T sum = 0;
    for (auto i : kept) sum += (out[i] = std::exp(h[i] - mx));
    for (auto i : kept) out[i] /= sum;
    Tensor<T> probs = out;
    return logits.tape->record(std::move(out), {logits}, [logits, kept, probs](Tape<T>& tp, const Tensor<T>& g) {
        T dot = 0;
        for (auto i : kept) dot += g[i] * probs[i];
        Tensor<T> gh(probs.shape());
        for (auto i : kept) gh[i] = probs[i] * (g[i] - dot);
        tp.accumulate(logits.id, gh);
    });
}

template <typename T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
    const Tensor<T>& qv = q.value();
    require_same_shape(qv.shape(), k.shape(), "attention q/k");
    require_same_shape(qv.shape(), v.shape(), "attention q/v");
    const std::size_t n = qv.dim(0), dim = qv.dim(1);
    if (heads == 0 || dim % heads != 0)
        throw DimensionError("attention: width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                             " heads");
    const std::size_t dh = dim / heads;
    const T s = T(1) / std::sqrt(static_cast<T>(dh));
    auto attn = std::make_shared<std::vector<Tensor<T>>>();
    Tensor<T> out({n, dim});
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> qh = column_block(qv, h * dh, dh);
        Tensor<T> kh = column_block(k.value(), h * dh, dh);
        Tensor<T> vh = column_block(v.value(), h * dh, dh);
        Tensor<T> scores = matmul_nt(qh, kh);
        scores *= s;
        Tensor<T> a = softmax(scores, 1);
        add_column_block(out, matmul(a, vh), h * dh);
        attn->push_back(std::move(a));
    }
    return q.tape->record(std::move(out), {q, k, v}, [q, k, v, heads, dh, s, attn](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& qv = tp.value(q.id);
        const std::size_t n = qv.dim(0), dim = qv.dim(1);
        Tensor<T> gq({n, dim}), gk({n, dim}), gv({n, dim});
        for (std::size_t h = 0; h < heads; ++h) {
            const Tensor<T>& a = (*attn)[h];
            Tensor<T> go = column_block(g, h * dh, dh);
            Tensor<T> vh = column_block(tp.value(v.id), h * dh, dh);
            add_column_block(gv, matmul_tn(a, go), h * dh);
            Tensor<T> ga = matmul_nt(go, vh);
            for (std::size_t i = 0; i < n; ++i) {
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += ga[i * n + j] * a[i * n + j];
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = a[i * n + j] * (ga[i * n + j] - dot) * s;
            }
            if (tp.requires_grad(q.id)) add_column_block(gq, matmul(ga, column_block(tp.value(k.id), h * dh, dh)), h * dh);
            if (tp.requires_grad(k.id)) add_column_block(gk, matmul_tn(ga, column_block(qv, h * dh, dh)), h * dh);
        }
        tp.accumulate(q.id, gq);
        tp.accumulate(k.id, gk);
        tp.accumulate(v.id, gv);
    });
}

#define MOEFFD_INSTANTIATE_AUTOGRAD(T)                                                   \
    template Var<T> matmul(Var<T>, Var<T>);                                              \
    template Var<T> add(Var<T>, Var<T>);                                                 \
    template Var<T> scale(Var<T>, T);                                                    \
    template Var<T> add_row_bias(Var<T>, Var<T>);                                        \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                          \
    template Var<T> gelu(Var<T>);                                                        \
    template Var<T> softplus(Var<T>);                                                    \
    template Var<T> mul_const(Var<T>, const Tensor<T>&);                                 \
    template Var<T> dot_const(Var<T>, const Tensor<T>&);                                 \
    template Var<T> mean_rows(Var<T>);                                                   \
    template Var<T> select_row(Var<T>, std::size_t);                                     \
    template Var<T> prepend_row(Var<T>, Var<T>);                                         \
    template Var<T> reshape(Var<T>, Shape);                                              \
    template Var<T> scale_by_entry(Var<T>, Var<T>, std::size_t);                         \
    template Var<T> masked_softmax(Var<T>, const std::vector<std::size_t>&);             \
    template Var<T> multi_head_attention(Var<T>, Var<T>, Var<T>, std::size_t);

MOEFFD_INSTANTIATE_AUTOGRAD(float)
MOEFFD_INSTANTIATE_AUTOGRAD(double)

}  // namespace moeffd
