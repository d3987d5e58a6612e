// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout:
//   "MFFD0001" | u64 LE header length | UTF-8 JSON header | raw LE payloads
// The header lists {name, dtype, shape, offset, nbytes, sha256} per tensor
// (offsets relative to the payload start, in header order), the run config
// snapshot, and the resumable training state.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moeffd/train.hpp"

namespace moeffd {

inline constexpr char kCheckpointMagic[] = "MFFD0001";

struct Checkpoint {
    nlohmann::json config;                     // run config snapshot
    std::vector<std::string> names;            // payload order
    std::map<std::string, Tensor<float>> tensors;
    std::optional<TrainState> state;           // Adam moments stay in `tensors` until restore_state
};

// Parameters are stored under their own names; Adam moments as "adam.m.<name>" / "adam.v.<name>".
void save_checkpoint(const std::filesystem::path& path, const MoEFFDModel<float>& model, const TrainState* state,
                     const nlohmann::json& config);
std::vector<std::uint8_t> checkpoint_bytes(const MoEFFDModel<float>& model, const TrainState* state,
                                           const nlohmann::json& config);

// IoError on a bad magic, truncation or hash mismatch (the message names the tensor).
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// VersionError when the tensor set or any shape differs from the model.
void restore_model(const Checkpoint& ckpt, MoEFFDModel<float>& model);
TrainState restore_state(const Checkpoint& ckpt, const MoEFFDModel<float>& model);

struct CheckpointVerification {
    bool ok = true;
    std::vector<std::string> corrupted;  // tensor names whose payload hash does not match
    std::string message;
};
CheckpointVerification verify_checkpoint(const std::filesystem::path& path);

}  // namespace moeffd
