// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/data_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"
#include "moeffd/io.hpp"

namespace moeffd {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kContentStream = 0;
constexpr std::uint64_t kForgeryStream = 1;

Rng sample_rng(std::uint64_t seed, std::uint64_t id, std::uint64_t stream) {
    return Rng(derive_seed(derive_seed(seed, id), stream));
}

void check_size(std::size_t h, std::size_t w) {
    if (h < 16 || w < 16)
        throw ArgumentError("image size " + std::to_string(h) + "×" + std::to_string(w) + " is below 16×16");
}

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Tensor<float> generate_real(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width) {
    check_size(height, width);
    Rng rng = sample_rng(seed, id, kContentStream);
    Tensor<float> img({kImageChannels, height, width});
    std::vector<double> field(height * width);
    for (std::size_t c = 0; c < kImageChannels; ++c) {
        std::fill(field.begin(), field.end(), 0.0);
        for (int k = 0; k < 4; ++k) {
            const double amp = rng.uniform(0.5, 1.0);
            const double freq = rng.uniform(0.5, 3.0);
            const double theta = rng.uniform(0.0, std::numbers::pi);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double fx = freq * std::cos(theta) / static_cast<double>(width);
            const double fy = freq * std::sin(theta) / static_cast<double>(height);
            for (std::size_t i = 0; i < height; ++i)
                for (std::size_t j = 0; j < width; ++j)
                    field[i * width + j] +=
                        amp * std::cos(2.0 * std::numbers::pi * (fx * double(j) + fy * double(i)) + phase);
        }
        const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
        const double span = std::max(*hi - *lo, 1e-12);
        for (std::size_t p = 0; p < field.size(); ++p) {
            const double base = 0.1 + 0.8 * (field[p] - *lo) / span;
            img[c * height * width + p] = clip01(base + rng.normal(0.0, kTextureSigma));
        }
    }
    return img;
}

namespace {

ForgeryRegion draw_region(Rng& rng, std::size_t height, std::size_t width) {
    const double m = static_cast<double>(std::min(height, width));
    ForgeryRegion r;
    r.center_y = rng.uniform(0.25, 0.75) * static_cast<double>(height);
    r.center_x = rng.uniform(0.25, 0.75) * static_cast<double>(width);
    r.semi_a = rng.uniform(0.15, 0.35) * m;
    r.semi_b = rng.uniform(0.15, 0.35) * m;
    r.angle = rng.uniform(0.0, std::numbers::pi);
    r.shift = rng.uniform() < 0.5 ? -kForgeryShift : kForgeryShift;
    return r;
}

}  // namespace

ForgeryRegion forgery_region(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width) {
    check_size(height, width);
    Rng rng = sample_rng(seed, id, kForgeryStream);
    return draw_region(rng, height, width);
}

Tensor<double> forgery_alpha(const ForgeryRegion& region, std::size_t height, std::size_t width) {
    Tensor<double> alpha({height, width});
    const double ca = std::cos(region.angle), sa = std::sin(region.angle);
    const double scale = std::min(region.semi_a, region.semi_b);
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
            const double dy = double(i) - region.center_y, dx = double(j) - region.center_x;
            const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
            const double r = std::sqrt((u / region.semi_a) * (u / region.semi_a) + (v / region.semi_b) * (v / region.semi_b));
            const double outside = (r - 1.0) * scale;  // approximate distance past the boundary, px
            alpha[i * width + j] = outside <= 0.0 ? 1.0 : std::max(0.0, 1.0 - outside / kBlendMargin);
        }
    return alpha;
}

Tensor<float> generate_fake(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width) {
    const Tensor<float> real = generate_real(seed, id, height, width);
    Rng rng = sample_rng(seed, id, kForgeryStream);
    const ForgeryRegion region = draw_region(rng, height, width);
    const Tensor<double> alpha = forgery_alpha(region, height, width);
    const Tensor<float> blurred = gaussian_blur(real, kForgeryBlurSigma);
    Tensor<float> fake = real;
    const std::size_t hw = height * width;
    for (std::size_t c = 0; c < kImageChannels; ++c)
        for (std::size_t p = 0; p < hw; ++p) {
            const double noise = rng.normal(0.0, kForgeryNoiseSigma);
            const double a = alpha[p];
            if (a <= 0.0) continue;
            const double manipulated = double(blurred[c * hw + p]) + region.shift + noise;
            fake[c * hw + p] = clip01(a * manipulated + (1.0 - a) * double(real[c * hw + p]));
        }
    return fake;
}

std::vector<ImageSample> generate_dataset(std::size_t n_real, std::size_t n_fake, std::size_t height,
                                          std::size_t width, std::uint64_t seed) {
    check_size(height, width);
    std::vector<ImageSample> out;
    out.reserve(n_real + n_fake);
    for (std::size_t i = 0; i < n_real; ++i) out.push_back({generate_real(seed, i, height, width), 0, i});
    for (std::size_t i = n_real; i < n_real + n_fake; ++i) out.push_back({generate_fake(seed, i, height, width), 1, i});
    return out;
}

Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
    if (image.rank() != 3) throw DimensionError("gaussian_blur: expected C×H×W, got " + shape_str(image.shape()));
    if (!(sigma > 0.0)) return image;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) sum += (k[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma)));
    for (auto& v : k) v /= sum;
    const long c = long(image.dim(0)), h = long(image.dim(1)), w = long(image.dim(2));
    std::vector<double> tmp(std::size_t(c * h * w));
    for (long ch = 0; ch < c; ++ch)
        for (long i = 0; i < h; ++i)
            for (long j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[t + radius] * image[std::size_t((ch * h + i) * w + std::clamp(j + t, 0L, w - 1))];
                tmp[std::size_t((ch * h + i) * w + j)] = acc;
            }
    Tensor<float> out(image.shape());
    for (long ch = 0; ch < c; ++ch)
        for (long i = 0; i < h; ++i)
            for (long j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += k[t + radius] * tmp[std::size_t((ch * h + std::clamp(i + t, 0L, h - 1)) * w + j)];
                out[std::size_t((ch * h + i) * w + j)] = static_cast<float>(acc);
            }
    return out;
}

std::string perturbation_name(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::GaussianBlur: return "gaussian_blur";
        case PerturbationKind::GaussianNoise: return "gaussian_noise";
        case PerturbationKind::BlockWise: return "block_wise";
    }
    return "?";
}

PerturbationKind perturbation_from_name(const std::string& s) {
    for (auto k : kAllPerturbations)
        if (perturbation_name(k) == s) return k;
    throw ArgumentError("unknown perturbation kind '" + s + "'");
}

double perturbation_parameter(const PerturbationSpec& spec) {
    static constexpr double blur[] = {0.5, 1.0, 1.5, 2.0, 2.5};
    static constexpr double noise[] = {0.02, 0.04, 0.06, 0.08, 0.10};
    static constexpr double blocks[] = {2, 4, 6, 8, 10};
    if (spec.severity < 1 || spec.severity > 5)
        throw ArgumentError("perturbation severity " + std::to_string(spec.severity) + " outside 1..5");
    const auto i = static_cast<std::size_t>(spec.severity - 1);
    switch (spec.kind) {
        case PerturbationKind::GaussianBlur: return blur[i];
        case PerturbationKind::GaussianNoise: return noise[i];
        case PerturbationKind::BlockWise: return blocks[i];
    }
    throw ArgumentError("unknown perturbation kind");
}

Tensor<float> perturb(const Tensor<float>& image, const PerturbationSpec& spec, std::uint64_t seed) {
    if (image.rank() != 3) throw DimensionError("perturb: expected C×H×W, got " + shape_str(image.shape()));
    if (spec.severity == 0) return image;
    const double param = perturbation_parameter(spec);
    Rng rng(seed);
    Tensor<float> out = image;
    switch (spec.kind) {
        case PerturbationKind::GaussianBlur:
            out = gaussian_blur(image, param);
            break;
        case PerturbationKind::GaussianNoise:
            for (auto& v : out.storage()) v = static_cast<float>(double(v) + param * rng.normal());
            break;
        case PerturbationKind::BlockWise: {
            const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
            const std::size_t bh = std::min<std::size_t>(8, h), bw = std::min<std::size_t>(8, w);
            std::vector<std::pair<std::size_t, std::size_t>> placed;
            auto overlaps = [&](std::size_t y, std::size_t x) {
                for (auto [py, px] : placed)
                    if (y < py + bh && py < y + bh && x < px + bw && px < x + bw) return true;
                return false;
            };
            for (int b = 0; b < static_cast<int>(param); ++b) {
                std::size_t y0 = 0, x0 = 0;
                bool found = false;
                for (int attempt = 0; attempt < kBlockPlacementAttempts && !found; ++attempt) {
                    y0 = rng.below(h - bh + 1);
                    x0 = rng.below(w - bw + 1);
                    found = !overlaps(y0, x0);
                }
                if (!found) continue;
                placed.emplace_back(y0, x0);
                const auto gray = static_cast<float>(rng.uniform());
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = y0; i < y0 + bh; ++i)
                        for (std::size_t j = x0; j < x0 + bw; ++j) out.at(ch, i, j) = gray;
            }
            break;
        }
    }
    for (auto& v : out.storage()) v = clip01(v);
    return out;
}

namespace {

json manifest_json(const DatasetManifest& m) {
    json samples = json::array();
    for (std::size_t i = 0; i < m.ids.size(); ++i)
        samples.push_back({{"id", m.ids[i]}, {"label", m.labels[i]}, {"file", m.files[i]}});
    return {{"format", "moeffd-dataset/1"}, {"seed", m.seed},   {"n_real", m.n_real},
            {"n_fake", m.n_fake},           {"height", m.height}, {"width", m.width},
            {"channels", kImageChannels},   {"split", m.split}, {"samples", samples}};
}

std::string sample_file(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "samples/%06llu.bin", static_cast<unsigned long long>(id));
    return buf;
}

}  // namespace

DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<ImageSample>& samples,
                              std::uint64_t seed, std::size_t n_real, std::size_t n_fake, std::size_t height,
                              std::size_t width, const std::string& split) {
    DatasetManifest m{seed, n_real, n_fake, height, width, split, {}, {}, {}};
    std::error_code ec;
    std::filesystem::create_directories(dir / "samples", ec);
    if (ec) throw IoError("cannot create " + (dir / "samples").string() + ": " + ec.message());
    for (const auto& s : samples) {
        m.ids.push_back(s.id);
        m.labels.push_back(s.label);
        m.files.push_back(sample_file(s.id));
        write_file(dir / m.files.back(), tensor_bytes(s.image));
    }
    write_text(dir / "manifest.json", manifest_json(m).dump(2) + "\n");
    return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
    json j;
    try {
        j = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    if (j.value("format", "") != "moeffd-dataset/1") throw VersionError("unsupported dataset format in " + dir.string());
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_real = j.at("n_real").get<std::size_t>();
    m.n_fake = j.at("n_fake").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.split = j.value("split", "train");
    for (const auto& s : j.at("samples")) {
        m.ids.push_back(s.at("id").get<std::uint64_t>());
        m.labels.push_back(s.at("label").get<int>());
        m.files.push_back(s.at("file").get<std::string>());
    }
    return m;
}

std::vector<ImageSample> load_dataset(const std::filesystem::path& dir) {
    const DatasetManifest m = read_manifest(dir);
    std::vector<ImageSample> out;
    out.reserve(m.ids.size());
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
        auto bytes = read_file(dir / m.files[i]);
        out.push_back({tensor_from_bytes<float>({kImageChannels, m.height, m.width}, bytes), m.labels[i], m.ids[i]});
    }
    return out;
}

std::vector<ImageSample> regenerate(const DatasetManifest& manifest) {
    return generate_dataset(manifest.n_real, manifest.n_fake, manifest.height, manifest.width, manifest.seed);
}

}  // namespace moeffd
