// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic "local forgery" data.
//
// Real image, per channel: four random low-frequency plane-wave cosines
// (0.5–3 cycles per image), min-max normalised and mapped into [0.1, 0.9],
// plus Gaussian texture σ = 0.02.
// Fake image: a real image whose elliptical region (semi-axes 15–35% of
// min(H, W)) is replaced by blur(σ = 1.5) + a ±0.1 intensity shift + noise
// σ = 0.05, alpha-blended over a 2-pixel margin outside the ellipse.
// Everything is clipped to [0, 1] and derived from (seed, sample id) only.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "moeffd/rng.hpp"
#include "moeffd/tensor.hpp"

namespace moeffd {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr double kTextureSigma = 0.02;
inline constexpr double kForgeryBlurSigma = 1.5;
inline constexpr double kForgeryShift = 0.1;
inline constexpr double kForgeryNoiseSigma = 0.05;
inline constexpr double kBlendMargin = 2.0;
inline constexpr int kBlockPlacementAttempts = 100;

struct ImageSample {
    Tensor<float> image;  // [3 × H × W] in [0, 1]
    int label = 0;        // 0 real, 1 fake
    std::uint64_t id = 0;
};

struct ForgeryRegion {
    double center_y = 0, center_x = 0;
    double semi_a = 0, semi_b = 0;  // along the rotated x / y axes, pixels
    double angle = 0;               // radians
    double shift = 0;               // ±kForgeryShift
};

Tensor<float> generate_real(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width);
ForgeryRegion forgery_region(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width);
// Blend weight per pixel [H × W]: 1 inside the ellipse, linear ramp to 0 across the margin.
Tensor<double> forgery_alpha(const ForgeryRegion& region, std::size_t height, std::size_t width);
Tensor<float> generate_fake(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width);

// Ids 0..n_real−1 are real, n_real..n_real+n_fake−1 fake. H, W ≥ 16.
std::vector<ImageSample> generate_dataset(std::size_t n_real, std::size_t n_fake, std::size_t height,
                                          std::size_t width, std::uint64_t seed);

// Separable Gaussian blur, radius ⌈3σ⌉, edge-clamped borders.
Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma);

enum class PerturbationKind : std::uint8_t { GaussianBlur, GaussianNoise, BlockWise };
std::string perturbation_name(PerturbationKind k);
PerturbationKind perturbation_from_name(const std::string& s);
inline constexpr PerturbationKind kAllPerturbations[] = {PerturbationKind::GaussianBlur,
                                                         PerturbationKind::GaussianNoise,
                                                         PerturbationKind::BlockWise};

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::GaussianBlur;
    int severity = 1;  // 1..5; 0 means no perturbation
};

// Severity tables (index = severity − 1):
//   gaussian_blur  σ      {0.5, 1.0, 1.5, 2.0, 2.5}
//   gaussian_noise σ      {0.02, 0.04, 0.06, 0.08, 0.10}
//   block_wise     blocks {2, 4, 6, 8, 10}, 8×8 each, uniform random gray level;
//                  blocks never overlap, and one that finds no free spot in
//                  kBlockPlacementAttempts position draws is skipped
double perturbation_parameter(const PerturbationSpec& spec);

// Output clipped to [0, 1]. For a fixed seed, higher severities reuse the
// lower severities' random draws as a prefix.
Tensor<float> perturb(const Tensor<float>& image, const PerturbationSpec& spec, std::uint64_t seed);

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::size_t n_real = 0, n_fake = 0;
    std::size_t height = 64, width = 64;
    std::string split = "train";
    std::vector<std::uint64_t> ids;
    std::vector<int> labels;
    std::vector<std::string> files;  // relative to the dataset directory
};

// Writes manifest.json plus one raw little-endian float32 file per sample.
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<ImageSample>& samples,
                              std::uint64_t seed, std::size_t n_real, std::size_t n_fake, std::size_t height,
                              std::size_t width, const std::string& split);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<ImageSample> load_dataset(const std::filesystem::path& dir);
// Rebuilds the samples from the manifest's (seed, sizes) alone.
std::vector<ImageSample> regenerate(const DatasetManifest& manifest);

}  // namespace moeffd
