// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace moeffd {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string() + " for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + p.string());
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& p) {
    auto b = read_file(p);
    return std::string(b.begin(), b.end());
}

template <typename T>
std::vector<std::uint8_t> tensor_bytes(const Tensor<T>& t) {
    std::vector<std::uint8_t> out(t.numel() * sizeof(T));
    std::memcpy(out.data(), t.ptr(), out.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < t.numel(); ++i)
            std::reverse(out.begin() + i * sizeof(T), out.begin() + (i + 1) * sizeof(T));
    }
    return out;
}

template <typename T>
Tensor<T> tensor_from_bytes(Shape shape, std::span<const std::uint8_t> bytes) {
    const std::size_t n = shape_numel(shape);
    if (bytes.size() != n * sizeof(T))
        throw IoError("tensor payload of " + std::to_string(bytes.size()) + " bytes does not match shape " +
                      shape_str(shape));
    std::vector<T> data(n);
    std::memcpy(data.data(), bytes.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        auto* raw = reinterpret_cast<std::uint8_t*>(data.data());
        for (std::size_t i = 0; i < n; ++i) std::reverse(raw + i * sizeof(T), raw + (i + 1) * sizeof(T));
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw IoError("truncated 64-bit field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
    return v;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 computation failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

template std::vector<std::uint8_t> tensor_bytes(const Tensor<float>&);
template std::vector<std::uint8_t> tensor_bytes(const Tensor<double>&);
template Tensor<float> tensor_from_bytes(Shape, std::span<const std::uint8_t>);
template Tensor<double> tensor_from_bytes(Shape, std::span<const std::uint8_t>);

}  // namespace moeffd
