// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moeffd/config.hpp"

namespace moeffd {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// Root for run directories when a config leaves out_dir empty.
inline constexpr const char* kOutputRootEnv = "MOEFFD_OUTPUT_ROOT";
std::filesystem::path output_root();
std::filesystem::path run_directory(const RunConfig& cfg);

// Train and test splits of the configured dataset, loaded from disk or generated in memory.
std::vector<ImageSample> load_split(const RunConfig& cfg, bool test);

// Returns the train manifest path; the test split goes next to it.
std::filesystem::path cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir);
std::filesystem::path cmd_regenerate(const std::filesystem::path& manifest_dir, const std::filesystem::path& out_dir);

struct TrainOutcome {
    std::filesystem::path run_dir;
    TrainReport report;
    EvalResult test;
};
TrainOutcome cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt,
                       std::ostream* log = nullptr);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> data_dir;  // default: the checkpoint config's test split
    std::optional<std::filesystem::path> out_dir;   // default: <checkpoint dir>/eval
    std::vector<PerturbationKind> perturbations;
    std::vector<int> severities;                    // applied to every listed perturbation
    std::uint64_t perturb_seed = 0;
};
// Writes metrics.csv, expert_freq.csv and gate_records.csv; returns the metric rows.
std::vector<MetricsRow> cmd_eval(const EvalOptions& opts);

// Sweeps rank | adapter_kind | top_k | lambda | moe_vs_multi; writes ablation.csv in the run directory.
std::filesystem::path cmd_ablate(const RunConfig& cfg, const std::string& sweep, std::ostream* log = nullptr);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moeffd
