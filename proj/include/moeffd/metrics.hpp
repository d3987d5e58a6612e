// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "moeffd/model.hpp"

namespace moeffd {

struct ScoredBatch {
    std::vector<double> scores;  // probability of fake
    std::vector<int> labels;     // 0 real, 1 fake

    void validate() const;  // ArgumentError on length mismatch, non-finite score, bad label or a single class
};

// Mann–Whitney rank statistic; tied pairs count one half.
double auc(const ScoredBatch& batch);

// Sweeps every distinct score threshold (score ≥ t ⇒ fake) plus one above
// the maximum, picks the smallest |FPR − FNR| and returns (FPR + FNR) / 2.
// Among equal gaps the lowest mean wins.
double eer(const ScoredBatch& batch);

struct GateFrequency {
    std::size_t block = 0;
    GateType type = GateType::LoRA;
    std::vector<std::size_t> counts;  // Top-1 selections per expert
};

struct ExpertFrequencyReport {
    std::size_t samples = 0;
    std::vector<GateFrequency> gates;  // gate order of the model

    // Largest over smallest Top-1 count of each gate, maximised over gates of `type`.
    // A gate with an unused expert reports +inf.
    double max_min_share(GateType type) const;
};

// `records` holds one vector of gate records per evaluated sample.
ExpertFrequencyReport expert_frequencies(const std::vector<std::vector<GateRecord>>& records);

struct MetricsRow {
    std::string run_id;
    std::string split;
    double auc = 0.0;
    double eer = 0.0;
};

std::string metrics_csv(std::span<const MetricsRow> rows);
std::string expert_freq_csv(const ExpertFrequencyReport& report);
ExpertFrequencyReport parse_expert_freq_csv(const std::string& text);

// Stored gate decisions, one line per (sample, gate): enough to rebuild the report.
std::string gate_records_csv(const std::vector<std::vector<GateRecord>>& records);
std::vector<std::vector<GateRecord>> parse_gate_records_csv(const std::string& text);

}  // namespace moeffd
