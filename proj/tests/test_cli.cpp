// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "moeffd/checkpoint.hpp"
#include "moeffd/cli.hpp"
#include "moeffd/io.hpp"

using namespace moeffd;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "moeffd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_root(const std::string& name) {
    const auto root = fs::temp_directory_path() / ("moeffd_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    setenv(kOutputRootEnv, root.c_str(), 1);
    return root;
}

const std::vector<std::string> kSmall = {"--preset",      "tiny", "--set", "data.n_train_real=6", "--set",
                                         "data.n_train_fake=6", "--set", "data.n_test_real=4",  "--set",
                                         "data.n_test_fake=4",  "--set", "train.batch_size=4"};

std::vector<std::string> with_small(std::vector<std::string> args) {
    args.insert(args.end(), kSmall.begin(), kSmall.end());
    return args;
}

}  // namespace

TEST_CASE("usage errors exit with the config code", "[cli]") {
    fresh_root("usage");
    CHECK(run({}).code == kExitConfig);
    CHECK(run({"frobnicate"}).code == kExitConfig);
    CHECK(run({"train", "--set", "train.nope=1"}).code == kExitConfig);
    CHECK(run({"train", "--mode", "dense"}).code == kExitConfig);
    CHECK(run({"verify", "--level", "slow"}).code == kExitConfig);
    CHECK(run({"ablate", "--sweep", "depth"}).code == kExitConfig);
    CHECK(run({"eval", "--checkpoint", "/nonexistent/x.ckpt"}).code == kExitIo);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("gen-data is reproducible and regenerates from its manifest", "[cli]") {
    const auto root = fresh_root("gen");
    auto a = run(with_small({"gen-data", "--out", (root / "a").string()}));
    REQUIRE(a.code == kExitOk);
    auto b = run(with_small({"gen-data", "--out", (root / "b").string()}));
    REQUIRE(b.code == kExitOk);
    CHECK(sha256_hex(read_file(root / "a/train/manifest.json")) == sha256_hex(read_file(root / "b/train/manifest.json")));
    auto r = run({"gen-data", "--from-manifest", (root / "a/test").string(), "--out", (root / "c").string()});
    REQUIRE(r.code == kExitOk);
    for (const auto& e : fs::directory_iterator(root / "a/test/samples"))
        CHECK(read_file(e.path()) == read_file(root / "c/samples" / e.path().filename()));

    auto empty = run({"gen-data", "--preset", "tiny", "--set", "data.n_train_real=0", "--set", "data.n_train_fake=0",
                      "--set", "data.n_test_real=0", "--set", "data.n_test_fake=0", "--out", (root / "e").string()});
    CHECK(empty.code == kExitOk);
    CHECK(read_manifest(root / "e/train").ids.empty());
}

TEST_CASE("train, resume, eval and report-experts", "[cli]") {
    const auto root = fresh_root("train");
    auto straight = run(with_small({"train", "--epochs", "3", "--top-k", "2", "--run-id", "straight", "--set",
                                    "train.checkpoint_every=1", "--set", "train.lr_other=0.001"}));
    INFO(straight.err);
    REQUIRE(straight.code == kExitOk);
    const auto dir = root / "straight";
    for (const char* f : {"config.json", "final.ckpt", "loss_curve.csv", "epochs.csv", "metrics.csv",
                          "expert_freq.csv", "gate_records.csv", "checkpoints/epoch_002.ckpt"})
        CHECK(fs::exists(dir / f));

    auto resumed = run(with_small({"train", "--epochs", "3", "--top-k", "2", "--run-id", "resumed", "--set",
                                   "train.lr_other=0.001", "--resume", (dir / "checkpoints/epoch_001.ckpt").string()}));
    REQUIRE(resumed.code == kExitOk);
    const auto full = read_text(dir / "loss_curve.csv");
    const auto tail = read_text(root / "resumed/loss_curve.csv");
    const auto header_end = tail.find('\n') + 1;
    const auto epoch2 = full.find("\n2,") + 1;
    CHECK(full.substr(epoch2) == tail.substr(header_end));
    const auto a = load_checkpoint(dir / "final.ckpt"), b = load_checkpoint(root / "resumed/final.ckpt");
    CHECK(a.names == b.names);
    for (const auto& n : a.names) CHECK(a.tensors.at(n) == b.tensors.at(n));

    auto mismatch = run({"train", "--preset", "tiny", "--top-k", "1", "--run-id", "bad", "--resume",
                         (dir / "final.ckpt").string()});
    CHECK(mismatch.code == kExitIo);

    auto e1 = run({"eval", "--checkpoint", (dir / "final.ckpt").string(), "--out", (root / "ev1").string(),
                   "--perturb", "gaussian_noise", "--severity", "0", "5"});
    auto e2 = run({"eval", "--checkpoint", (dir / "final.ckpt").string(), "--out", (root / "ev2").string(),
                   "--perturb", "gaussian_noise", "--severity", "0", "5"});
    REQUIRE(e1.code == kExitOk);
    CHECK(read_text(root / "ev1/metrics.csv") == read_text(root / "ev2/metrics.csv"));
    CHECK(read_text(root / "ev1/expert_freq.csv") == read_text(dir / "expert_freq.csv"));
    std::istringstream lines(read_text(root / "ev1/metrics.csv"));
    std::string header, plain, sev0;
    std::getline(lines, header);
    std::getline(lines, plain);
    std::getline(lines, sev0);
    CHECK(plain.substr(plain.find(",test,") + 6) == sev0.substr(sev0.find("/0,") + 3));

    auto rep = run({"report-experts", "--records", (dir / "gate_records.csv").string()});
    REQUIRE(rep.code == kExitOk);
    CHECK(rep.out == read_text(dir / "expert_freq.csv"));
    auto rep2 = run({"report-experts", "--checkpoint", (dir / "final.ckpt").string()});
    CHECK(rep2.out == rep.out);
    CHECK(run({"report-experts"}).code == kExitConfig);
}

TEST_CASE("backbone_only leaves every expert tensor at its initial value", "[cli]") {
    const auto root = fresh_root("bb");
    auto r = run(with_small({"train", "--epochs", "1", "--mode", "backbone_only", "--run-id", "bb"}));
    REQUIRE(r.code == kExitOk);
    const auto ck = load_checkpoint(root / "bb/final.ckpt");
    const auto cfg = run_config_from_json(ck.config);
    MoEFFDModel<float> init(cfg.model, cfg.seed);
    for (const auto* p : std::as_const(init).parameters()) {
        const bool head = p->name == "head.w" || p->name == "head.b";
        INFO(p->name);
        CHECK((ck.tensors.at(p->name) == p->value) != head);
    }
}

TEST_CASE("ablation cells are isolated", "[cli]") {
    const auto root = fresh_root("ablate");
    auto r = run(with_small({"ablate", "--sweep", "rank", "--epochs", "1", "--run-id", "abl", "--set",
                             "model.lora_ranks=[3,1,2]"}));
    REQUIRE(r.code == kExitOk);
    const auto csv = read_text(root / "abl/ablation.csv");
    CHECK(csv.find("rank,r3,ok") < csv.find("rank,r1,ok"));
    CHECK(csv.find("rank,r1,ok") < csv.find("rank,r2,ok"));

    auto bad = run(with_small({"ablate", "--sweep", "top_k", "--epochs", "1", "--run-id", "abl_k"}));
    REQUIRE(bad.code == kExitOk);
    const auto k = read_text(root / "abl_k/ablation.csv");
    CHECK(k.find("top_k,k1,ok") != std::string::npos);
    CHECK(k.find("top_k,k3,ok") != std::string::npos);

    auto lam = run(with_small({"ablate", "--sweep", "lambda", "--epochs", "0", "--run-id", "abl_l", "--set",
                               "model.lora_ranks=[1]", "--set", "model.adapter_kinds=[\"cdc\"]"}));
    REQUIRE(lam.code == kExitOk);
    const auto l = read_text(root / "abl_l/ablation.csv");
    for (const char* cell : {"lambda,0,", "lambda,0.1,", "lambda,1,", "lambda,5,", "lambda,10,"})
        CHECK(l.find(cell) != std::string::npos);
}

TEST_CASE("verify flags a corrupted checkpoint by name", "[cli]") {
    const auto root = fresh_root("verify");
    auto t = run(with_small({"train", "--epochs", "0", "--run-id", "v"}));
    REQUIRE(t.code == kExitOk);
    auto bytes = read_file(root / "v/final.ckpt");
    bytes.back() ^= 1;
    write_file(root / "v/bad.ckpt", bytes);
    const auto v = verify_checkpoint(root / "v/bad.ckpt");
    CHECK(!v.ok);
    CHECK(v.message.find(v.corrupted.front()) != std::string::npos);
}
