// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moeffd/rng.hpp"

namespace moeffd {

GradCheckReport finite_difference_gradcheck(const std::function<double()>& fn,
                                            const std::vector<GradCheckTarget>& targets,
                                            const GradCheckOptions& opts) {
    if (!(opts.eps > 0.0)) throw ArgumentError("gradcheck: eps must be positive");
    GradCheckReport report;
    Rng rng(opts.seed);
    for (const auto& t : targets) {
        require_same_shape(t.value->shape(), t.analytic->shape(), ("gradcheck " + t.name).c_str());
        if (!t.analytic->all_finite()) throw NumericError("gradcheck: non-finite analytic gradient for " + t.name);
        std::vector<std::size_t> coords(t.value->numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.fraction < 1.0) {
            rng.shuffle(coords.begin(), coords.end());
            const auto keep = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(opts.fraction * static_cast<double>(coords.size()))));
            coords.resize(std::min(keep, coords.size()));
            std::sort(coords.begin(), coords.end());
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (auto i : coords) {
            double& x = (*t.value)[i];
            const double orig = x;
            x = orig + opts.eps;
            const double fp = fn();
            x = orig - opts.eps;
            const double fm = fn();
            x = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("gradcheck: non-finite objective while perturbing " + t.name + "[" +
                                   std::to_string(i) + "]");
            const double numeric = (fp - fm) / (2.0 * opts.eps);
            const double analytic = (*t.analytic)[i];
            const double d = analytic - numeric;
            diff2 += d * d;
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            ++report.checked;
            if (std::abs(d) > report.max_abs_error) {
                report.max_abs_error = std::abs(d);
                report.worst_abs_name = t.name;
                report.worst_index = i;
            }
        }
        const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), kGradNormFloor});
        report.tensors.push_back({t.name, rel});
        if (report.worst_name.empty() || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_name = t.name;
        }
    }
    return report;
}

}  // namespace moeffd
