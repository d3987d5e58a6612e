// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/config.hpp"

#include <set>

namespace moeffd {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <typename V>
void take(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
    }
}

}  // namespace

ModelConfig preset_model(const std::string& name) {
    if (name == "desk") return ModelConfig::desk();
    if (name == "tiny") return ModelConfig::tiny();
    if (name == "full_scale") return ModelConfig::full_scale();
    throw ConfigError("unknown preset '" + name + "'");
}

json to_json(const ModelConfig& m) {
    json kinds = json::array();
    for (auto k : m.adapter_kinds) kinds.push_back(kind_name(k));
    return {{"image_size", m.image_size}, {"channels", m.channels},     {"patch_size", m.patch_size},
            {"depth", m.depth},           {"embed_dim", m.embed_dim},   {"heads", m.heads},
            {"adapter_mid", m.adapter_mid}, {"lora_ranks", m.lora_ranks}, {"adapter_kinds", kinds},
            {"top_k", m.top_k},           {"mode", routing_mode_name(m.mode, m.fixed_expert)},
            {"ln_eps", m.ln_eps},         {"init_std", m.init_std}, {"fan_in_backbone", m.fan_in_backbone}};
}

json to_json(const TrainConfig& t) {
    return {{"lambda", t.lambda},         {"lr_gate", t.adam.lr_gate}, {"lr_other", t.adam.lr_other},
            {"beta1", t.adam.beta1},      {"beta2", t.adam.beta2},     {"adam_eps", t.adam.eps},
            {"epochs", t.epochs},         {"batch_size", t.batch_size}, {"checkpoint_every", t.checkpoint_every}};
}

json to_json(const DataConfig& d) {
    return {{"train_dir", d.train_dir},       {"test_dir", d.test_dir},         {"n_train_real", d.n_train_real},
            {"n_train_fake", d.n_train_fake}, {"n_test_real", d.n_test_real},   {"n_test_fake", d.n_test_fake},
            {"seed", d.seed}};
}

json to_json(const RunConfig& r) {
    return {{"preset", r.preset}, {"seed", r.seed},          {"run_id", r.run_id}, {"out_dir", r.out_dir},
            {"model", to_json(r.model)}, {"train", to_json(r.train)}, {"data", to_json(r.data)}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig m) {
    const std::string w = "model";
    reject_unknown(j, {"image_size", "channels", "patch_size", "depth", "embed_dim", "heads", "adapter_mid",
                       "lora_ranks", "adapter_kinds", "top_k", "mode", "ln_eps", "init_std", "fan_in_backbone"},
                   w);
    take(j, "image_size", m.image_size, w);
    take(j, "channels", m.channels, w);
    take(j, "patch_size", m.patch_size, w);
    take(j, "depth", m.depth, w);
    take(j, "embed_dim", m.embed_dim, w);
    take(j, "heads", m.heads, w);
    take(j, "adapter_mid", m.adapter_mid, w);
    take(j, "lora_ranks", m.lora_ranks, w);
    take(j, "top_k", m.top_k, w);
    take(j, "ln_eps", m.ln_eps, w);
    take(j, "init_std", m.init_std, w);
    take(j, "fan_in_backbone", m.fan_in_backbone, w);
    if (j.contains("adapter_kinds")) {
        std::vector<std::string> names;
        take(j, "adapter_kinds", names, w);
        m.adapter_kinds.clear();
        try {
            for (const auto& n : names) m.adapter_kinds.push_back(kind_from_name(n));
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("mode")) {
        std::string mode;
        take(j, "mode", mode, w);
        try {
            m.mode = parse_routing_mode(mode, &m.fixed_expert);
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
    return m;
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, {"preset", "seed", "run_id", "out_dir", "model", "train", "data"}, "");
    RunConfig r;
    take(j, "preset", r.preset, "");
    r.model = preset_model(r.preset);
    take(j, "seed", r.seed, "");
    take(j, "run_id", r.run_id, "");
    take(j, "out_dir", r.out_dir, "");
    if (j.contains("model")) r.model = model_config_from_json(j["model"], r.model);
    if (j.contains("train")) {
        const auto& t = j["train"];
        const std::string w = "train";
        reject_unknown(t, {"lambda", "lr_gate", "lr_other", "beta1", "beta2", "adam_eps", "epochs", "batch_size",
                           "checkpoint_every"},
                       w);
        take(t, "lambda", r.train.lambda, w);
        take(t, "lr_gate", r.train.adam.lr_gate, w);
        take(t, "lr_other", r.train.adam.lr_other, w);
        take(t, "beta1", r.train.adam.beta1, w);
        take(t, "beta2", r.train.adam.beta2, w);
        take(t, "adam_eps", r.train.adam.eps, w);
        take(t, "epochs", r.train.epochs, w);
        take(t, "batch_size", r.train.batch_size, w);
        take(t, "checkpoint_every", r.train.checkpoint_every, w);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        const std::string w = "data";
        reject_unknown(d, {"train_dir", "test_dir", "n_train_real", "n_train_fake", "n_test_real", "n_test_fake",
                           "seed"},
                       w);
        take(d, "train_dir", r.data.train_dir, w);
        take(d, "test_dir", r.data.test_dir, w);
        take(d, "n_train_real", r.data.n_train_real, w);
        take(d, "n_train_fake", r.data.n_train_fake, w);
        take(d, "n_test_real", r.data.n_test_real, w);
        take(d, "n_test_fake", r.data.n_test_fake, w);
        take(d, "seed", r.data.seed, w);
    }
    r.model.seed = r.seed;
    r.validate();
    return r;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos)
        throw ConfigError("run_id must be a non-empty name without path separators");
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace moeffd
