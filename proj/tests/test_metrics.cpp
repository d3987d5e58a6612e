// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "moeffd/metrics.hpp"
#include "moeffd/verify.hpp"

using namespace moeffd;

TEST_CASE("auc examples", "[metrics]") {
    ScoredBatch sep{{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}};
    CHECK(auc(sep) == 1.0);
    ScoredBatch flat{{0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}};
    CHECK(auc(flat) == 0.5);
    ScoredBatch inv{{0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}};
    CHECK(auc(inv) == 0.0);
    ScoredBatch half{{0.1, 0.4, 0.4, 0.9}, {0, 1, 0, 1}};
    CHECK(auc(half) == 0.875);
}

TEST_CASE("eer examples", "[metrics]") {
    ScoredBatch sep{{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}};
    CHECK(eer(sep) == 0.0);
    ScoredBatch inv{{0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}};
    CHECK(eer(inv) == 1.0);
    ScoredBatch flat{{0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}};
    CHECK(eer(flat) == 0.5);
}

TEST_CASE("metrics match brute-force oracles", "[metrics][property]") {
    Rng rng(51);
    for (int t = 0; t < 100; ++t) {
        ScoredBatch b;
        const std::size_t n = 40;
        for (std::size_t i = 0; i < n; ++i) {
            b.labels.push_back(i < 2 ? int(i) : int(rng.below(2)));
            b.scores.push_back(std::round(rng.uniform() * 12.0) / 12.0);
        }
        CHECK(auc(b) == oracle::pair_count_auc(b));
        CHECK(eer(b) == oracle::exhaustive_eer(b));
    }
}

TEST_CASE("scored batches are validated", "[metrics]") {
    CHECK_THROWS_AS(auc(ScoredBatch{{0.1, 0.2}, {0}}), ArgumentError);
    CHECK_THROWS_AS(auc(ScoredBatch{{0.1, 0.2}, {1, 1}}), ArgumentError);
    CHECK_THROWS_AS(eer(ScoredBatch{{0.1, NAN}, {0, 1}}), ArgumentError);
    CHECK_THROWS_AS(auc(ScoredBatch{{0.1, 0.2}, {0, 2}}), ArgumentError);
}

namespace {

GateDecision one_hot(std::size_t n, std::size_t i) {
    std::vector<double> h(n, 0.0);
    h[i] = 5.0;
    return topk_gate(h, 1);
}

std::vector<std::vector<GateRecord>> fixed_records(std::size_t samples) {
    std::vector<std::vector<GateRecord>> recs(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        recs[s].push_back({0, GateType::LoRA, one_hot(4, 2)});
        recs[s].push_back({0, GateType::Adapter, one_hot(5, s % 5)});
        recs[s].push_back({1, GateType::LoRA, one_hot(4, s % 2)});
    }
    return recs;
}

}  // namespace

TEST_CASE("expert frequencies", "[metrics]") {
    const auto recs = fixed_records(10);
    const auto rep = expert_frequencies(recs);
    CHECK(rep.samples == 10);
    REQUIRE(rep.gates.size() == 3);
    CHECK(rep.gates[0].counts == std::vector<std::size_t>{0, 0, 10, 0});
    CHECK(rep.gates[1].counts == std::vector<std::size_t>{2, 2, 2, 2, 2});
    for (const auto& g : rep.gates) {
        std::size_t total = 0;
        for (auto c : g.counts) total += c;
        CHECK(total == 10);
    }
    CHECK(std::isinf(rep.max_min_share(GateType::LoRA)));
    CHECK(rep.max_min_share(GateType::Adapter) == 1.0);
}

TEST_CASE("csv round trips", "[metrics]") {
    const auto recs = fixed_records(7);
    const auto rep = expert_frequencies(recs);
    const auto replayed = expert_frequencies(parse_gate_records_csv(gate_records_csv(recs)));
    CHECK(expert_freq_csv(replayed) == expert_freq_csv(rep));
    const auto parsed = parse_expert_freq_csv(expert_freq_csv(rep));
    REQUIRE(parsed.gates.size() == rep.gates.size());
    for (std::size_t i = 0; i < rep.gates.size(); ++i) CHECK(parsed.gates[i].counts == rep.gates[i].counts);

    std::vector<MetricsRow> rows{{"r1", "test", 0.75, 0.25}};
    const auto csv = metrics_csv(rows);
    CHECK(csv.rfind("run_id,split,auc,eer\n", 0) == 0);
    CHECK(csv.find("r1,test,0.75,0.25") != std::string::npos);
    CHECK_THROWS(parse_gate_records_csv("sample,block\n1,2\n"));
}
