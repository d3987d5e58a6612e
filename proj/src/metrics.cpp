// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace moeffd {

void ScoredBatch::validate() const {
    if (scores.size() != labels.size())
        throw ArgumentError("scored batch: " + std::to_string(scores.size()) + " scores vs " +
                            std::to_string(labels.size()) + " labels");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw ArgumentError("scored batch: non-finite score at " + std::to_string(i));
        if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("scored batch: label must be 0 or 1");
        pos += static_cast<std::size_t>(labels[i]);
    }
    if (pos == 0 || pos == labels.size()) throw ArgumentError("scored batch needs both classes");
}

double auc(const ScoredBatch& batch) {
    batch.validate();
    const std::size_t n = batch.scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return batch.scores[a] < batch.scores[b]; });
    // Twice the rank sum of positives keeps tie midranks integral.
    std::uint64_t twice_rank_sum = 0, n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && batch.scores[order[j]] == batch.scores[order[i]]) ++j;
        const std::uint64_t twice_mid = (i + 1) + j;  // ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (batch.labels[order[t]] == 1) {
                twice_rank_sum += twice_mid;
                ++n_pos;
            }
        i = j;
    }
    const std::uint64_t n_neg = n - n_pos;
    // 2·U = 2·R − n_pos·(n_pos + 1)
    const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double eer(const ScoredBatch& batch) {
    batch.validate();
    const std::size_t n = batch.scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return batch.scores[a] > batch.scores[b]; });
    double n_pos = 0;
    for (int l : batch.labels) n_pos += l;
    const double n_neg = static_cast<double>(n) - n_pos;
    // Threshold above the maximum: nothing flagged, FPR 0, FNR 1.
    std::size_t tp = 0, fp = 0;
    double best_gap = 1.0, best = 0.5;
    for (std::size_t i = 0;;) {
        const double fpr = fp / n_neg, fnr = (n_pos - tp) / n_pos;
        const double gap = std::abs(fpr - fnr), mean = 0.5 * (fpr + fnr);
        if (gap < best_gap || (gap == best_gap && mean < best)) {
            best_gap = gap;
            best = mean;
        }
        if (i == n) break;
        std::size_t j = i;
        while (j < n && batch.scores[order[j]] == batch.scores[order[i]]) {
            (batch.labels[order[j]] == 1 ? tp : fp) += 1;
            ++j;
        }
        i = j;
    }
    return best;
}

double ExpertFrequencyReport::max_min_share(GateType type) const {
    double worst = 0.0;
    for (const auto& g : gates) {
        if (g.type != type || g.counts.empty()) continue;
        const auto [lo, hi] = std::minmax_element(g.counts.begin(), g.counts.end());
        const double r = *lo == 0 ? std::numeric_limits<double>::infinity()
                                  : static_cast<double>(*hi) / static_cast<double>(*lo);
        worst = std::max(worst, r);
    }
    return worst;
}

ExpertFrequencyReport expert_frequencies(const std::vector<std::vector<GateRecord>>& records) {
    ExpertFrequencyReport rep;
    rep.samples = records.size();
    if (records.empty()) return rep;
    for (const auto& r : records.front())
        rep.gates.push_back({r.block, r.type, std::vector<std::size_t>(r.decision.weights.size(), 0)});
    for (const auto& sample : records) {
        if (sample.size() != rep.gates.size()) throw ArgumentError("expert_frequencies: ragged gate records");
        for (std::size_t g = 0; g < sample.size(); ++g) ++rep.gates[g].counts.at(sample[g].decision.top1());
    }
    return rep;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

GateType parse_gate_type(const std::string& s) {
    if (s == "lora") return GateType::LoRA;
    if (s == "adapter") return GateType::Adapter;
    throw ArgumentError("unknown gate type '" + s + "'");
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::string out = "run_id,split,auc,eer\n";
    for (const auto& r : rows) out += r.run_id + "," + r.split + "," + fmt(r.auc) + "," + fmt(r.eer) + "\n";
    return out;
}

std::string expert_freq_csv(const ExpertFrequencyReport& report) {
    std::string out = "block,gate_type,expert_index,count\n";
    for (const auto& g : report.gates)
        for (std::size_t e = 0; e < g.counts.size(); ++e)
            out += std::to_string(g.block) + "," + gate_type_name(g.type) + "," + std::to_string(e) + "," +
                   std::to_string(g.counts[e]) + "\n";
    return out;
}

ExpertFrequencyReport parse_expert_freq_csv(const std::string& text) {
    ExpertFrequencyReport rep;
    std::stringstream ss(text);
    std::string line;
    std::getline(ss, line);
    if (line != "block,gate_type,expert_index,count") throw ArgumentError("expert_freq.csv: unexpected header");
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto c = split(line);
        if (c.size() != 4) throw ArgumentError("expert_freq.csv: malformed row '" + line + "'");
        const std::size_t block = std::stoul(c[0]), e = std::stoul(c[2]);
        const GateType type = parse_gate_type(c[1]);
        if (rep.gates.empty() || rep.gates.back().block != block || rep.gates.back().type != type)
            rep.gates.push_back({block, type, {}});
        auto& counts = rep.gates.back().counts;
        if (e != counts.size()) throw ArgumentError("expert_freq.csv: expert indices out of order");
        counts.push_back(std::stoull(c[3]));
    }
    if (!rep.gates.empty())
        for (auto v : rep.gates.front().counts) rep.samples += v;
    return rep;
}

std::string gate_records_csv(const std::vector<std::vector<GateRecord>>& records) {
    std::string out = "sample,block,gate_type,selected,weights\n";
    for (std::size_t s = 0; s < records.size(); ++s)
        for (const auto& r : records[s]) {
            std::string sel, w;
            for (std::size_t i = 0; i < r.decision.selected.size(); ++i)
                sel += (i ? ";" : "") + std::to_string(r.decision.selected[i]);
            for (std::size_t i = 0; i < r.decision.weights.size(); ++i) w += (i ? ";" : "") + fmt(r.decision.weights[i]);
            out += std::to_string(s) + "," + std::to_string(r.block) + "," + gate_type_name(r.type) + "," + sel + "," +
                   w + "\n";
        }
    return out;
}

std::vector<std::vector<GateRecord>> parse_gate_records_csv(const std::string& text) {
    std::vector<std::vector<GateRecord>> out;
    std::stringstream ss(text);
    std::string line;
    std::getline(ss, line);
    if (line != "sample,block,gate_type,selected,weights") throw ArgumentError("gate records: unexpected header");
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto c = split(line);
        if (c.size() != 5) throw ArgumentError("gate records: malformed row '" + line + "'");
        const std::size_t s = std::stoul(c[0]);
        if (s >= out.size()) out.resize(s + 1);
        GateRecord r;
        r.block = std::stoul(c[1]);
        r.type = parse_gate_type(c[2]);
        for (const auto& v : split(c[3], ';')) r.decision.selected.push_back(std::stoul(v));
        for (const auto& v : split(c[4], ';')) r.decision.weights.push_back(std::stod(v));
        out[s].push_back(std::move(r));
    }
    return out;
}

}  // namespace moeffd
