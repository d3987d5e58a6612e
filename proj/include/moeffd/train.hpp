// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "moeffd/data_gen.hpp"
#include "moeffd/metrics.hpp"
#include "moeffd/model.hpp"

namespace moeffd {

struct TrainConfig {
    double lambda = 1.0;
    AdamConfig adam;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

    void validate() const;  // ConfigError
};

// Everything besides the parameters that a resumed run needs.
struct TrainState {
    std::size_t epoch = 0;  // completed epochs
    std::uint64_t step = 0;
    Rng::State data_rng;
    Rng::State noise_rng;
    AdamState<float> adam;
};

TrainState make_train_state(const MoEFFDModel<float>& model, std::uint64_t run_seed);

struct StepLoss {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    LossBreakdown loss;
};

struct EvalResult {
    ScoredBatch batch;
    double auc = 0.0;
    double eer = 0.0;
    std::vector<std::vector<GateRecord>> records;
    ExpertFrequencyReport frequencies;
};

struct EpochReport {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0, ce = 0.0, moe = 0.0;
    double moe_share = 0.0;  // λ·L_moe / L, averaged over steps
    ExpertFrequencyReport routing;  // Top-1 of the noisy training-time gates over the epoch
    std::optional<EvalResult> eval;
};

struct TrainReport {
    std::vector<EpochReport> epochs;
    std::vector<StepLoss> steps;
};

struct TrainHooks {
    const std::vector<ImageSample>* eval_set = nullptr;
    // Called after every completed epoch with the updated state.
    std::function<void(const MoEFFDModel<float>&, const TrainState&, const EpochReport&)> on_epoch;
    // Stops after this many optimizer steps (0 = no limit); the state stays resumable only at epoch ends.
    std::uint64_t max_steps = 0;
    // On a non-finite loss or gradient the model and batch ids are written here before NumericError is raised.
    std::optional<std::filesystem::path> snapshot_dir;
};

// Continues from `state` until `cfg.epochs` epochs are complete. Each epoch
// shuffles the sample order with the data stream; gate noise uses the noise stream.
TrainReport train(MoEFFDModel<float>& model, TrainState& state, const std::vector<ImageSample>& data,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

// Eval-mode (noise-free) scoring. With a perturbation, sample i is perturbed
// with seed derive_seed(perturb_seed, id).
EvalResult evaluate(const MoEFFDModel<float>& model, const std::vector<ImageSample>& data,
                    std::optional<PerturbationSpec> perturbation = std::nullopt, std::uint64_t perturb_seed = 0);

}  // namespace moeffd
