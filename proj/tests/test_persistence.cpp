// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "moeffd/checkpoint.hpp"
#include "moeffd/config.hpp"
#include "moeffd/io.hpp"

using namespace moeffd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("moeffd_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig tiny_run() {
    RunConfig cfg = run_config_from_json({{"preset", "tiny"}, {"seed", 4}});
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint bytes round-trip exactly", "[persistence]") {
    const auto cfg = tiny_run();
    MoEFFDModel<float> model(cfg.model, cfg.seed);
    auto state = make_train_state(model, cfg.seed);
    const auto data = generate_dataset(4, 4, 16, 16, 1);
    train(model, state, data, cfg.train);

    const auto bytes = checkpoint_bytes(model, &state, to_json(cfg));
    const auto ck = parse_checkpoint(bytes);
    MoEFFDModel<float> back(cfg.model, 99);
    restore_model(ck, back);
    const auto st = restore_state(ck, back);
    CHECK(checkpoint_bytes(back, &st, ck.config) == bytes);
    CHECK(st.epoch == 1);
    CHECK(st.step == 2);
    CHECK(st.adam.step == state.adam.step);
    CHECK(st.data_rng.x == state.data_rng.x);

    const auto dir = scratch("ckpt");
    save_checkpoint(dir / "a.ckpt", model, &state, to_json(cfg));
    CHECK(read_file(dir / "a.ckpt") == bytes);
    CHECK(verify_checkpoint(dir / "a.ckpt").ok);
    fs::remove_all(dir);
}

TEST_CASE("corruption names the damaged tensor", "[persistence]") {
    const auto cfg = tiny_run();
    MoEFFDModel<float> model(cfg.model, cfg.seed);
    auto bytes = checkpoint_bytes(model, nullptr, to_json(cfg));
    bytes.back() ^= 0x40;
    CHECK_THROWS_WITH(parse_checkpoint(bytes), Catch::Matchers::ContainsSubstring("head.b"));
    const auto dir = scratch("ckpt_bad");
    write_file(dir / "bad.ckpt", bytes);
    const auto v = verify_checkpoint(dir / "bad.ckpt");
    CHECK(!v.ok);
    CHECK(v.corrupted == std::vector<std::string>{"head.b"});

    auto truncated = checkpoint_bytes(model, nullptr, to_json(cfg));
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(parse_checkpoint(truncated), IoError);
    std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e', 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(parse_checkpoint(junk), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("restoring into another architecture is a version error", "[persistence]") {
    const auto cfg = tiny_run();
    MoEFFDModel<float> model(cfg.model, cfg.seed);
    const auto ck = parse_checkpoint(checkpoint_bytes(model, nullptr, to_json(cfg)));
    ModelConfig other = cfg.model;
    other.lora_ranks = {1, 2, 5};
    MoEFFDModel<float> wrong(other, 0);
    CHECK_THROWS_AS(restore_model(ck, wrong), VersionError);
    MoEFFDModel<float> same(cfg.model, 0);
    CHECK_THROWS_AS(restore_state(ck, same), VersionError);
}

TEST_CASE("epochs=0 leaves the model at initialisation", "[persistence]") {
    auto cfg = tiny_run();
    cfg.train.epochs = 0;
    MoEFFDModel<float> model(cfg.model, cfg.seed), init(cfg.model, cfg.seed);
    auto state = make_train_state(model, cfg.seed);
    const auto rep = train(model, state, generate_dataset(2, 2, 16, 16, 1), cfg.train);
    CHECK(rep.epochs.empty());
    CHECK(rep.steps.empty());
    CHECK(checkpoint_bytes(model, nullptr, {}) == checkpoint_bytes(init, nullptr, {}));
}

TEST_CASE("lambda only enters through the balancing term", "[persistence]") {
    auto cfg = tiny_run();
    cfg.model.top_k = 2;
    const auto data = generate_dataset(6, 6, 16, 16, 3);
    std::vector<double> first_ce;
    for (double lambda : {0.0, 1.0}) {
        cfg.train.lambda = lambda;
        MoEFFDModel<float> model(cfg.model, cfg.seed);
        auto state = make_train_state(model, cfg.seed);
        const auto rep = train(model, state, data, cfg.train);
        first_ce.push_back(rep.steps.front().loss.ce);
    }
    CHECK(first_ce[0] == first_ce[1]);
}

TEST_CASE("run configs are strict", "[config]") {
    CHECK_THROWS_AS(run_config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"model", {{"depthh", 2}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"train", {{"lambda", "big"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"train", {{"lambda", -1.0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"preset", "huge"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"model", {{"top_k", 9}}}}), ConfigError);

    const auto desk = run_config_from_json(nlohmann::json::object());
    CHECK(desk.model.depth == 4);
    CHECK(desk.model.embed_dim == 64);
    CHECK(desk.model.lora_ranks == std::vector<std::size_t>{2, 4, 8, 16});
    CHECK(desk.train.lambda == 1.0);
    CHECK(desk.data.n_train_real + desk.data.n_train_fake == 2000);
    CHECK(desk.data.n_test_real + desk.data.n_test_fake == 500);

    const auto round = run_config_from_json(to_json(desk));
    CHECK(to_json(round) == to_json(desk));

    nlohmann::json doc = nlohmann::json::object();
    apply_override(doc, "train.lambda=0.1");
    apply_override(doc, "model.mode=multi_experts");
    apply_override(doc, "model.lora_ranks=[2,4]");
    apply_override(doc, "run_id=abc");
    const auto o = run_config_from_json(doc);
    CHECK(o.train.lambda == 0.1);
    CHECK(o.model.mode == RoutingMode::MultiExperts);
    CHECK(o.model.lora_ranks == std::vector<std::size_t>{2, 4});
    CHECK(o.run_id == "abc");
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
}
