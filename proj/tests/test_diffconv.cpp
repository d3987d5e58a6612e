// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "moeffd/diffconv.hpp"
#include "moeffd/gradcheck.hpp"
#include "moeffd/rng.hpp"
#include "moeffd/verify.hpp"

using namespace moeffd;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("kind names round-trip", "[diffconv]") {
    for (auto k : kAllDiffConvKinds) CHECK(kind_from_name(kind_name(k)) == k);
    CHECK_THROWS_AS(kind_from_name("sobel"), ArgumentError);
    CHECK(neighborhood_size(DiffConvKind::CDC) == 3);
    CHECK(neighborhood_size(DiffConvKind::SOC) == 5);
}

TEST_CASE("x-hat of a constant map vanishes for CDC and ADC", "[diffconv]") {
    Tensor<double> x(Shape{1, 7, 7}, 0.625);
    for (auto p : kClockwiseRing) {
        CHECK(sample_xhat(x, 0, 3, 3, p, DiffConvKind::CDC) == 0.0);
        CHECK(sample_xhat(x, 0, 3, 3, p, DiffConvKind::ADC) == 0.0);
    }
}

TEST_CASE("RDC radial element on a row ramp", "[diffconv]") {
    Tensor<double> x(Shape{1, 9, 9});
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) x.at(0, i, j) = static_cast<double>(i);
    CHECK(sample_xhat(x, 0, 4, 4, Offset{1, 0}, DiffConvKind::RDC) == 1.0);
    CHECK(sample_xhat(x, 0, 4, 4, Offset{-1, 0}, DiffConvKind::RDC) == -1.0);
    CHECK(sample_xhat(x, 0, 4, 4, Offset{0, 1}, DiffConvKind::RDC) == 0.0);
}

TEST_CASE("hand-countable convolutions", "[diffconv]") {
    Tensor<double> ones(Shape{1, 6, 6}, 1.0);
    DiffKernel<double> k{DiffConvKind::CDC, Tensor<double>(Shape{1, 1, 3, 3}, 1.0)};
    auto y = diff_conv_forward(ones, k);
    for (std::size_t i = 1; i < 5; ++i)
        for (std::size_t j = 1; j < 5; ++j) CHECK(y.at(0, i, j) == 1.0);

    k.kind = DiffConvKind::Vanilla;
    auto v = diff_conv_forward(ones, k);
    CHECK(v.at(0, 2, 3) == 9.0);
    CHECK(v.at(0, 0, 0) == 4.0);
    CHECK(v.at(0, 5, 5) == 4.0);
    CHECK(v.at(0, 0, 3) == 6.0);
}

TEST_CASE("every kind matches the per-pixel oracle", "[diffconv]") {
    Rng rng(21);
    for (auto kind : kAllDiffConvKinds) {
        auto x = random_tensor({2, 7, 7}, rng);
        auto w = random_tensor({3, 2, 3, 3}, rng);
        auto fast = diff_conv_forward(x, DiffKernel<double>{kind, w});
        auto ref = oracle::diff_conv(x, w, kind);
        INFO(kind_name(kind));
        CHECK(max_abs_diff(fast, ref) <= 1e-9);
    }
}

TEST_CASE("lift_kernel_adjoint is the adjoint of lift_kernel", "[diffconv][property]") {
    Rng rng(22);
    for (auto kind : kAllDiffConvKinds) {
        auto w = random_tensor({2, 3, 3, 3}, rng);
        const std::size_t K = neighborhood_size(kind);
        auto g = random_tensor({2, 3, K, K}, rng);
        auto lw = lift_kernel(w, kind);
        auto ag = lift_kernel_adjoint(g, kind);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < lw.numel(); ++i) lhs += lw[i] * g[i];
        for (std::size_t i = 0; i < w.numel(); ++i) rhs += w[i] * ag[i];
        INFO(kind_name(kind));
        CHECK(std::abs(lhs - rhs) <= 1e-10 * (1 + std::abs(lhs)));
    }
}

TEST_CASE("conv1x1 examples", "[diffconv]") {
    Rng rng(23);
    auto x = random_tensor({3, 4, 5}, rng);
    auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(conv1x1(x, eye) == x);
    auto z = conv1x1(x, Tensor<double>::zeros({2, 3}));
    for (auto v : z.storage()) CHECK(v == 0.0);
    auto w = random_tensor({2, 3}, rng);
    auto y = conv1x1(x, w);
    auto ref = oracle::conv1x1(x, w);
    CHECK(max_abs_diff(y, ref) <= 1e-12);
}

TEST_CASE("diffconv rejects channel mismatch", "[diffconv]") {
    Tensor<double> x(Shape{2, 5, 5});
    DiffKernel<double> k{DiffConvKind::ADC, Tensor<double>(Shape{1, 3, 3, 3})};
    CHECK_THROWS_AS(diff_conv_forward(x, k), DimensionError);
    CHECK_THROWS_AS(conv1x1(x, Tensor<double>(Shape{2, 3})), DimensionError);
}

TEST_CASE("diff_conv gradients match finite differences", "[diffconv][gradcheck]") {
    Rng rng(24);
    for (auto kind : kAllDiffConvKinds) {
        auto x = random_tensor({2, 5, 5}, rng);
        auto w = random_tensor({2, 2, 3, 3}, rng);
        auto c = random_tensor({2, 5, 5}, rng);
        auto f = [&](Tensor<double>* gx, Tensor<double>* gw) {
            Tape<double> tape;
            auto vx = tape.input(x), vw = tape.input(w);
            auto y = dot_const(diff_conv(vx, vw, kind), c);
            if (gx) {
                tape.backward(y);
                *gx = *tape.grad(vx);
                *gw = *tape.grad(vw);
            }
            return y.value()[0];
        };
        Tensor<double> gx, gw;
        f(&gx, &gw);
        auto r = finite_difference_gradcheck([&] { return f(nullptr, nullptr); }, {{"x", &x, &gx}, {"w", &w, &gw}},
                                             {1e-5});
        INFO(kind_name(kind));
        CHECK(r.max_rel_error <= 1e-8);
    }
}
