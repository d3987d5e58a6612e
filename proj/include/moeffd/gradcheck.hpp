// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moeffd/tensor.hpp"

namespace moeffd {

struct GradCheckTarget {
    std::string name;
    Tensor<double>* value;            // perturbed in place, restored afterwards
    const Tensor<double>* analytic;   // same shape as *value
};

struct GradCheckReport {
    struct PerTensor {
        std::string name;
        double rel_error = 0.0;
    };
    double max_rel_error = 0.0;  // worst per-tensor relative error
    std::string worst_name;
    double max_abs_error = 0.0;  // worst single coordinate
    std::string worst_abs_name;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    std::vector<PerTensor> tensors;
};

inline constexpr double kGradNormFloor = 1e-12;

struct GradCheckOptions {
    double eps = 1e-6;
    // Fraction of coordinates checked per tensor (at least one); 1 = all.
    double fraction = 1.0;
    std::uint64_t seed = 0;
};

/// Central finite-difference check of `analytic` against
///   (f(θ + eps) − f(θ − eps)) / (2·eps)
/// over the chosen coordinates of each tensor. A tensor's relative error is
/// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, kGradNormFloor) over
/// those coordinates. Non-finite evaluations raise NumericError naming the tensor.
GradCheckReport finite_difference_gradcheck(const std::function<double()>& fn,
                                            const std::vector<GradCheckTarget>& targets,
                                            const GradCheckOptions& opts = {});

}  // namespace moeffd
