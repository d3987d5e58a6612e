// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moeffd/tensor.hpp"

namespace moeffd {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p);

// Little-endian element bytes of a tensor, independent of host byte order.
template <typename T>
std::vector<std::uint8_t> tensor_bytes(const Tensor<T>& t);
template <typename T>
Tensor<T> tensor_from_bytes(Shape shape, std::span<const std::uint8_t> bytes);

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
template <typename T>
std::string tensor_sha256(const Tensor<T>& t) {
    return sha256_hex(tensor_bytes(t));
}

}  // namespace moeffd
