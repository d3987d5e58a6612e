// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration as one JSON document:
//   { "preset": "desk", "seed": 0, "run_id": "...", "out_dir": "...",
//     "model": {...}, "train": {...}, "data": {...} }
// Every object rejects unknown keys.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "moeffd/model_config.hpp"
#include "moeffd/train.hpp"

namespace moeffd {

struct DataConfig {
    std::string train_dir;
    std::string test_dir;
    std::size_t n_train_real = 1000, n_train_fake = 1000;
    std::size_t n_test_real = 250, n_test_fake = 250;
    std::uint64_t seed = 0;  // generator seed; test split uses derive_seed(seed, 1)
};

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    std::string run_id = "run";
    std::string out_dir;
    ModelConfig model = ModelConfig::desk();
    TrainConfig train;
    DataConfig data;

    void validate() const;  // ConfigError
};

ModelConfig preset_model(const std::string& name);  // desk | tiny | full_scale

nlohmann::json to_json(const ModelConfig& m);
nlohmann::json to_json(const TrainConfig& t);
nlohmann::json to_json(const DataConfig& d);
nlohmann::json to_json(const RunConfig& r);

// Starts from the preset named in `j` (default desk) and applies every key; ConfigError on unknown keys or bad types.
RunConfig run_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base);

// "train.lambda=0.1": the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace moeffd
