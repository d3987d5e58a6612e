// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reference oracles and the self-verification suite behind `moeffd verify`.
// The oracles are deliberately naive loop implementations that share no
// code with the optimised paths they check.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "moeffd/metrics.hpp"
#include "moeffd/model.hpp"

namespace moeffd {

namespace oracle {

// Literal per-pixel y = w_c·x_c + Σ_{p≠c} w_p·x̂_p with zero padding.
Tensor<double> diff_conv(const Tensor<double>& x, const Tensor<double>& w, DiffConvKind kind);
Tensor<double> conv1x1(const Tensor<double>& x, const Tensor<double>& w);
double gelu(double x);
// x·(W_down·W_up) with the product materialised first.
Tensor<double> lora_expert(const Tensor<double>& x, const LoRAExpert<double>& e, Projection p);
// Patch tokens → grid → stages → tokens, class row zero.
Tensor<double> adapter_expert(const Tensor<double>& x, const AdapterExpert<double>& e);
// Full softmax of mean-pooled tokens times W_gate.
std::vector<double> dense_gate(const Tensor<double>& x, const GateWeights<double>& g);
// Counts over all (positive, negative) pairs; ties score one half.
double pair_count_auc(const ScoredBatch& b);
// Evaluates every distinct score and +inf as a threshold.
double exhaustive_eer(const ScoredBatch& b);

}  // namespace oracle

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

CheckResult check_diffconv_oracle(std::size_t cases = 50, std::uint64_t seed = 11);
// Central differences on a two-block tiny model (double, noise off, all tensors randomised);
// a second pass with noise on and k = N_e covers W_noise.
CheckResult check_gradients(double tolerance = 1e-5, std::uint64_t seed = 12);
CheckResult check_gating_properties(std::size_t vectors = 1000, std::uint64_t seed = 13);
CheckResult check_dispatch_equivalence(std::size_t inputs = 20, std::uint64_t seed = 14);
CheckResult check_metrics_oracles(std::size_t batches = 100, std::uint64_t seed = 15);
CheckResult check_checkpoint_roundtrip(std::uint64_t seed = 16);
CheckResult check_resume_equivalence(std::uint64_t seed = 17);
// total_loss gradient on the desk preset for a sampled fraction of trainable coordinates.
CheckResult check_end_to_end_gradcheck(double fraction = 0.01, double tolerance = 1e-4, std::uint64_t seed = 18);
CheckResult check_checkpoint_file(const std::filesystem::path& path);

enum class VerifyLevel { Fast, Full };
std::vector<CheckResult> run_verification(VerifyLevel level,
                                          const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

}  // namespace moeffd
