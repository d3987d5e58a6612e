// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "moeffd/io.hpp"

namespace moeffd {

namespace {

using json = nlohmann::json;
constexpr std::size_t kMagicLen = 8;

json rng_json(const Rng::State& s) {
    return {{"x", s.x}, {"has_spare", s.has_spare}, {"spare_bits", std::bit_cast<std::uint64_t>(s.spare)}};
}

Rng::State rng_from_json(const json& j) {
    return {j.at("x").get<std::uint64_t>(), j.at("has_spare").get<bool>(),
            std::bit_cast<double>(j.at("spare_bits").get<std::uint64_t>())};
}

struct RawHeader {
    json header;
    std::size_t payload_start = 0;
};

RawHeader read_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0)
        throw IoError("not a checkpoint (bad magic)");
    const std::uint64_t len = get_u64_le(bytes.subspan(kMagicLen, 8));
    if (len > bytes.size() - kMagicLen - 8) throw IoError("checkpoint header truncated");
    RawHeader h;
    try {
        h.header = json::parse(bytes.begin() + kMagicLen + 8, bytes.begin() + kMagicLen + 8 + len);
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    if (h.header.value("version", 0) != 1) throw VersionError("unsupported checkpoint version");
    h.payload_start = kMagicLen + 8 + len;
    return h;
}

std::span<const std::uint8_t> payload_of(std::span<const std::uint8_t> bytes, const RawHeader& h, const json& t) {
    const auto off = t.at("offset").get<std::uint64_t>(), nb = t.at("nbytes").get<std::uint64_t>();
    if (h.payload_start + off + nb > bytes.size())
        throw IoError("checkpoint payload truncated at tensor " + t.at("name").get<std::string>());
    return bytes.subspan(h.payload_start + off, nb);
}

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const MoEFFDModel<float>& model, const TrainState* state,
                                           const nlohmann::json& config) {
    std::vector<std::pair<std::string, const Tensor<float>*>> items;
    const auto params = model.parameters();
    for (const auto* p : params) items.emplace_back(p->name, &p->value);
    if (state) {
        if (state->adam.m.size() != params.size()) throw ArgumentError("checkpoint: Adam state does not match model");
        for (std::size_t i = 0; i < params.size(); ++i) items.emplace_back("adam.m." + params[i]->name, &state->adam.m[i]);
        for (std::size_t i = 0; i < params.size(); ++i) items.emplace_back("adam.v." + params[i]->name, &state->adam.v[i]);
    }
    json tensors = json::array();
    std::vector<std::uint8_t> payload;
    for (const auto& [name, t] : items) {
        auto b = tensor_bytes(*t);
        tensors.push_back({{"name", name},
                           {"dtype", dtype_name(DType::F32)},
                           {"shape", t->shape()},
                           {"offset", payload.size()},
                           {"nbytes", b.size()},
                           {"sha256", sha256_hex(b)}});
        payload.insert(payload.end(), b.begin(), b.end());
    }
    json header = {{"format", "MFFD0001"}, {"version", 1}, {"config", config}, {"tensors", tensors}};
    if (state)
        header["state"] = {{"epoch", state->epoch},
                           {"step", state->step},
                           {"adam_step", state->adam.step},
                           {"data_rng", rng_json(state->data_rng)},
                           {"noise_rng", rng_json(state->noise_rng)}};
    const std::string h = header.dump();
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
    put_u64_le(out, h.size());
    out.insert(out.end(), h.begin(), h.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const MoEFFDModel<float>& model, const TrainState* state,
                     const nlohmann::json& config) {
    write_file(path, checkpoint_bytes(model, state, config));
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    const RawHeader h = read_header(bytes);
    Checkpoint ck;
    ck.config = h.header.value("config", json::object());
    for (const auto& t : h.header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        if (t.at("dtype").get<std::string>() != dtype_name(DType::F32))
            throw VersionError("checkpoint tensor " + name + " has unsupported dtype");
        const auto data = payload_of(bytes, h, t);
        if (sha256_hex(data) != t.at("sha256").get<std::string>())
            throw IoError("checkpoint tensor " + name + " is corrupted (sha256 mismatch)");
        ck.tensors.emplace(name, tensor_from_bytes<float>(t.at("shape").get<Shape>(), data));
        ck.names.push_back(name);
    }
    if (h.header.contains("state")) {
        const auto& s = h.header["state"];
        TrainState st;
        st.epoch = s.at("epoch").get<std::size_t>();
        st.step = s.at("step").get<std::uint64_t>();
        st.adam.step = s.at("adam_step").get<std::uint64_t>();
        st.data_rng = rng_from_json(s.at("data_rng"));
        st.noise_rng = rng_from_json(s.at("noise_rng"));
        ck.state = std::move(st);
    }
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return parse_checkpoint(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void restore_model(const Checkpoint& ckpt, MoEFFDModel<float>& model) {
    for (auto* p : model.parameters()) {
        const auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end()) throw VersionError("checkpoint lacks tensor " + p->name);
        if (it->second.shape() != p->value.shape())
            throw VersionError("checkpoint tensor " + p->name + " has shape " + shape_str(it->second.shape()) +
                               ", model expects " + shape_str(p->value.shape()));
        p->value = it->second;
    }
}

TrainState restore_state(const Checkpoint& ckpt, const MoEFFDModel<float>& model) {
    if (!ckpt.state) throw VersionError("checkpoint carries no training state");
    TrainState st = *ckpt.state;
    st.adam.m.clear();
    st.adam.v.clear();
    for (const auto* p : model.parameters()) {
        for (const char* which : {"adam.m.", "adam.v."}) {
            const auto it = ckpt.tensors.find(which + p->name);
            if (it == ckpt.tensors.end() || it->second.shape() != p->value.shape())
                throw VersionError("checkpoint Adam state for " + p->name + " missing or mis-shaped");
            (which[5] == 'm' ? st.adam.m : st.adam.v).push_back(it->second);
        }
    }
    return st;
}

CheckpointVerification verify_checkpoint(const std::filesystem::path& path) {
    CheckpointVerification v;
    try {
        const auto bytes = read_file(path);
        const RawHeader h = read_header(bytes);
        for (const auto& t : h.header.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            if (sha256_hex(payload_of(bytes, h, t)) != t.at("sha256").get<std::string>()) v.corrupted.push_back(name);
        }
        v.ok = v.corrupted.empty();
        v.message = v.ok ? "all tensors match their hashes" : "corrupted tensor: " + v.corrupted.front();
    } catch (const std::exception& e) {
        v.ok = false;
        v.message = e.what();
    }
    return v;
}

}  // namespace moeffd
