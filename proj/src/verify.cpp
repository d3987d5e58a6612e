// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "moeffd/checkpoint.hpp"
#include "moeffd/gradcheck.hpp"

namespace moeffd {

namespace oracle {

namespace {

double read0(const Tensor<double>& x, std::size_t c, long i, long j) {
    const long h = static_cast<long>(x.dim(1)), w = static_cast<long>(x.dim(2));
    if (i < 0 || j < 0 || i >= h || j >= w) return 0.0;
    return x.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
}

}  // namespace

Tensor<double> diff_conv(const Tensor<double>& x, const Tensor<double>& w, DiffConvKind kind) {
    const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
    if (w.dim(1) != ci) throw DimensionError("oracle::diff_conv: channel mismatch");
    // Clockwise ring NW, N, NE, E, SE, S, SW, W.
    const int ring[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};
    Tensor<double> y({co, h, wd});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < wd; ++j) {
                double acc = 0.0;
                const long li = static_cast<long>(i), lj = static_cast<long>(j);
                for (std::size_t c = 0; c < ci; ++c) {
                    const double xc = read0(x, c, li, lj);
                    acc += w[((o * ci + c) * 3 + 1) * 3 + 1] * xc;
                    for (int r = 0; r < 8; ++r) {
                        const int di = ring[r][0], dj = ring[r][1];
                        const double wp = w[((o * ci + c) * 3 + std::size_t(di + 1)) * 3 + std::size_t(dj + 1)];
                        const double xp = read0(x, c, li + di, lj + dj);
                        double xhat = 0.0;
                        switch (kind) {
                            case DiffConvKind::Vanilla: xhat = xp; break;
                            case DiffConvKind::CDC: xhat = xp - xc; break;
                            case DiffConvKind::ADC: {
                                const int* nx = ring[(r + 1) % 8];
                                xhat = xp - read0(x, c, li + nx[0], lj + nx[1]);
                                break;
                            }
                            case DiffConvKind::RDC: xhat = read0(x, c, li + 2 * di, lj + 2 * dj) - xp; break;
                            case DiffConvKind::SOC:
                                xhat = (read0(x, c, li + 2 * di, lj + 2 * dj) - xp) + (xc - xp);
                                break;
                        }
                        acc += wp * xhat;
                    }
                }
                y.at(o, i, j) = acc;
            }
    return y;
}

Tensor<double> conv1x1(const Tensor<double>& x, const Tensor<double>& w) {
    const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
    if (w.dim(1) != ci) throw DimensionError("oracle::conv1x1: channel mismatch");
    Tensor<double> y({co, h, wd});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < wd; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < ci; ++c) acc += w[o * ci + c] * x.at(c, i, j);
                y.at(o, i, j) = acc;
            }
    return y;
}

double gelu(double x) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor<double> c({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * m + j];
            c[i * m + j] = acc;
        }
    return c;
}

}  // namespace

Tensor<double> lora_expert(const Tensor<double>& x, const LoRAExpert<double>& e, Projection p) {
    const auto& pair = e.pair(p);
    return naive_matmul(x, naive_matmul(pair.down.value, pair.up.value));
}

Tensor<double> adapter_expert(const Tensor<double>& x, const AdapterExpert<double>& e) {
    const std::size_t nt = x.dim(0), d = x.dim(1);
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(nt - 1))));
    Tensor<double> grid({d, side, side});
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j)
            for (std::size_t c = 0; c < d; ++c) grid.at(c, i, j) = x[(1 + i * side + j) * d + c];
    auto h = conv1x1(grid, e.conv_down.value);
    for (auto& v : h.storage()) v = gelu(v);
    h = diff_conv(h, e.conv_mid.value, e.kind);
    for (auto& v : h.storage()) v = gelu(v);
    h = conv1x1(h, e.conv_up.value);
    Tensor<double> out({nt, d});
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j)
            for (std::size_t c = 0; c < d; ++c) out[(1 + i * side + j) * d + c] = h.at(c, i, j);
    return out;
}

std::vector<double> dense_gate(const Tensor<double>& x, const GateWeights<double>& g) {
    const std::size_t nt = x.dim(0), d = x.dim(1), ne = g.num_experts();
    std::vector<double> pooled(d, 0.0), logits(ne, 0.0);
    for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t c = 0; c < d; ++c) pooled[c] += x[t * d + c] / double(nt);
    for (std::size_t e = 0; e < ne; ++e)
        for (std::size_t c = 0; c < d; ++c) logits[e] += pooled[c] * g.w_gate.value[c * ne + e];
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (auto& l : logits) l /= z;
    return logits;
}

double pair_count_auc(const ScoredBatch& b) {
    std::uint64_t twice = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < b.labels.size(); ++i) (b.labels[i] == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw ArgumentError("pair_count_auc needs both classes");
    for (std::size_t i = 0; i < b.scores.size(); ++i) {
        if (b.labels[i] != 1) continue;
        for (std::size_t j = 0; j < b.scores.size(); ++j) {
            if (b.labels[j] != 0) continue;
            if (b.scores[i] > b.scores[j]) twice += 2;
            else if (b.scores[i] == b.scores[j]) twice += 1;
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double exhaustive_eer(const ScoredBatch& b) {
    std::vector<double> thresholds = b.scores;
    thresholds.push_back(std::numeric_limits<double>::infinity());
    double pos = 0, neg = 0;
    for (int l : b.labels) (l == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw ArgumentError("exhaustive_eer needs both classes");
    double best_gap = std::numeric_limits<double>::infinity(), best = 0.0;
    for (double t : thresholds) {
        double fp = 0, fn = 0;
        for (std::size_t i = 0; i < b.scores.size(); ++i) {
            if (b.labels[i] == 0 && b.scores[i] >= t) fp += 1;
            if (b.labels[i] == 1 && b.scores[i] < t) fn += 1;
        }
        const double fpr = fp / neg, fnr = fn / pos;
        const double gap = std::abs(fpr - fnr), mean = 0.5 * (fpr + fnr);
        if (gap < best_gap || (gap == best_gap && mean < best)) {
            best_gap = gap;
            best = mean;
        }
    }
    return best;
}

}  // namespace oracle

namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(const std::string& name, const std::function<void(CheckResult&)>& body) {
    CheckResult r;
    r.name = name;
    const auto t0 = Clock::now();
    try {
        r.passed = true;
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

std::string sci(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

Tensor<double> random_tensor(Shape s, Rng& rng, double stddev = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
    return t;
}

template <typename T>
void randomize(MoEFFDModel<T>& m, Rng& rng, double stddev, bool trainable_only) {
    for (auto* p : m.parameters())
        if (!trainable_only || !p->frozen)
            for (auto& v : p->value.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
}

// Tensor class used to group gradient results.
std::string param_class(const std::string& name) {
    auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
    if (has(".gate.w_gate")) return "gate.w_gate";
    if (has(".gate.w_noise")) return "gate.w_noise";
    if (has(".lora.") && has(".down")) return "lora.down";
    if (has(".lora.") && has(".up")) return "lora.up";
    if (has("conv_down")) return "adapter.conv_down";
    if (has("conv_mid")) return "adapter.conv_mid";
    if (has("conv_up")) return "adapter.conv_up";
    if (has("head.w")) return "head.w";
    if (has("head.b")) return "head.b";
    return "other";
}

}  // namespace

CheckResult check_diffconv_oracle(std::size_t cases, std::uint64_t seed) {
    return timed("diffconv_oracle", [&](CheckResult& r) {
        Rng rng(seed);
        double worst = 0.0;
        for (std::size_t n = 0; n < cases; ++n) {
            const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(3);
            const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
            const auto x = random_tensor({ci, h, w}, rng);
            const auto k = random_tensor({co, ci, 3, 3}, rng);
            for (auto kind : kAllDiffConvKinds) {
                const auto fast = diff_conv_forward(x, DiffKernel<double>{kind, k});
                worst = std::max(worst, max_abs_diff(fast, oracle::diff_conv(x, k, kind)));
            }
        }
        r.passed = worst <= 1e-9;
        r.detail = std::to_string(cases) + " cases x 5 kinds, max abs err " + sci(worst) + " (tol 1e-9)";
    });
}

CheckResult check_gradients(double tolerance, std::uint64_t seed) {
    return timed("gradient_suite", [&](CheckResult& r) {
        ModelConfig cfg = ModelConfig::tiny();
        cfg.depth = 2;
        cfg.lora_ranks = {1, 2, 3, 4, 5};
        cfg.top_k = 5;
        MoEFFDModel<double> model(cfg, seed);
        Rng rng(seed);
        randomize(model, rng, 0.3, false);
        std::vector<Tensor<double>> images;
        for (int i = 0; i < 3; ++i) {
            Tensor<double> t({cfg.channels, cfg.image_size, cfg.image_size});
            for (auto& v : t.storage()) v = rng.uniform();
            images.push_back(std::move(t));
        }
        std::vector<const Tensor<double>*> ptrs;
        for (const auto& t : images) ptrs.push_back(&t);
        const std::vector<int> labels = {0, 1, 1};
        const double lambda = 0.7;

        std::map<std::string, double> worst;
        std::map<std::string, double> norms;
        for (bool noisy : {false, true}) {
            const std::uint64_t noise_seed = seed + 99;
            Rng nr(noise_seed);
            const auto g = compute_batch_gradients<double>(model, ptrs, labels, lambda, noisy, noisy ? &nr : nullptr);
            auto objective = [&] {
                Rng fresh(noise_seed);
                auto fwd = model_forward<double>(ptrs, model, noisy, noisy ? &fresh : nullptr);
                return total_loss(fwd.logits, labels, fwd.records, lambda).total;
            };
            auto params = model.parameters();
            std::vector<GradCheckTarget> targets;
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (params[i]->frozen) continue;
                const std::string cls = param_class(params[i]->name);
                if (noisy && cls != "gate.w_noise") continue;
                targets.push_back({params[i]->name, &params[i]->value, &g.grads[i]});
                double n2 = 0.0;
                for (double v : g.grads[i].storage()) n2 += v * v;
                norms[cls] += n2;
            }
            const auto rep = finite_difference_gradcheck(objective, targets, {1e-5, 1.0, seed});
            for (const auto& t : rep.tensors) {
                auto& w = worst[param_class(t.name)];
                w = std::max(w, t.rel_error);
            }
        }
        std::ostringstream os;
        for (const auto& [cls, err] : worst) {
            const bool live = norms[cls] > 0.0;
            if (err > tolerance || !live) r.passed = false;
            os << cls << " " << sci(err) << (live ? "" : " (zero gradient)") << "; ";
        }
        os << "tol " << sci(tolerance);
        r.detail = os.str();
    });
}

CheckResult check_gating_properties(std::size_t vectors, std::uint64_t seed) {
    return timed("gating_properties", [&](CheckResult& r) {
        Rng rng(seed);
        std::size_t failures = 0;
        std::string first;
        auto fail = [&](const std::string& what) {
            if (failures++ == 0) first = what;
        };
        for (std::size_t n = 0; n < vectors; ++n) {
            const std::size_t ne = 3 + rng.below(6);
            std::vector<double> h(ne);
            for (auto& v : h) v = rng.normal(0.0, 2.0);
            const double shift = rng.uniform(-5.0, 5.0);
            std::vector<std::size_t> perm(ne);
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm.begin(), perm.end());
            for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{3}, ne}) {
                const auto d = topk_gate(h, k);
                std::size_t nz = 0;
                double sum = 0.0;
                for (double w : d.weights) {
                    nz += w > 0.0;
                    sum += w;
                }
                if (nz != std::min(k, ne)) fail("nonzero count");
                if (std::abs(sum - 1.0) > 1e-6) fail("weights do not sum to 1");
                std::vector<double> hs(h);
                for (auto& v : hs) v += shift;
                const auto ds = topk_gate(hs, k);
                if (ds.selected != d.selected) fail("shift changed the selection");
                for (std::size_t e = 0; e < ne; ++e)
                    if (std::abs(ds.weights[e] - d.weights[e]) > 1e-12) fail("shift changed the weights");
                std::vector<double> hp(ne);
                for (std::size_t e = 0; e < ne; ++e) hp[perm[e]] = h[e];
                const auto dp = topk_gate(hp, k);
                for (std::size_t e = 0; e < ne; ++e)
                    if (std::abs(dp.weights[perm[e]] - d.weights[e]) > 1e-15) fail("not permutation equivariant");
            }
            const double c = rng.uniform(0.1, 10.0);
            if (moe_loss(std::vector<double>(ne, c)) != 0.0) fail("moe_loss of a constant vector is not 0");
            std::vector<double> imp(ne);
            for (auto& v : imp) v = rng.uniform(0.01, 3.0);
            std::vector<double> scaled(imp);
            const double alpha = rng.uniform(0.1, 10.0);
            for (auto& v : scaled) v *= alpha;
            if (std::abs(moe_loss(scaled) - moe_loss(imp)) > 1e-12) fail("moe_loss is not scale invariant");
        }
        const std::vector<double> pair = {1.0, 3.0};
        if (moe_loss(pair) != 0.25) fail("moe_loss([1,3]) != 0.25");
        r.passed = failures == 0;
        r.detail = std::to_string(vectors) + " vectors, k in {1,2,3,N_e}: " +
                   (failures ? std::to_string(failures) + " failures, first: " + first : "all properties hold");
    });
}

CheckResult check_dispatch_equivalence(std::size_t inputs, std::uint64_t seed) {
    return timed("dispatch_equivalence", [&](CheckResult& r) {
        ModelConfig cfg = ModelConfig::tiny();
        Rng rng(seed);
        double worst = 0.0;
        for (std::size_t n = 0; n < inputs; ++n) {
            auto lora = make_moe_lora_layer<double>(cfg, "lora", rng);
            auto adapter = make_moe_adapter_layer<double>(cfg, "adapter", rng);
            for (auto& e : lora.experts)
                for (auto& p : e.proj) {
                    p.down.value = random_tensor(p.down.value.shape(), rng, 0.5);
                    p.up.value = random_tensor(p.up.value.shape(), rng, 0.5);
                }
            for (auto& e : adapter.experts) {
                e.conv_down.value = random_tensor(e.conv_down.value.shape(), rng, 0.5);
                e.conv_mid.value = random_tensor(e.conv_mid.value.shape(), rng, 0.5);
                e.conv_up.value = random_tensor(e.conv_up.value.shape(), rng, 0.5);
            }
            for (auto* g : {&lora.gate, &adapter.gate}) {
                g->w_gate.value = random_tensor(g->w_gate.value.shape(), rng, 0.5);
                g->w_noise.value = random_tensor(g->w_noise.value.shape(), rng, 0.5);
            }
            const auto x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng);

            Tape<double> tape;
            auto xv = tape.input(x, false);
            const auto lw = oracle::dense_gate(x, lora.gate);
            const auto ld = moe_lora_forward(xv, lora, {RoutingMode::MoE, lora.experts.size(), 0}, false, nullptr);
            const std::array<const std::optional<Var<double>>*, 3> got = {&ld.q, &ld.k, &ld.v};
            for (std::size_t p = 0; p < 3; ++p) {
                Tensor<double> dense({cfg.num_tokens(), cfg.attn_dim()});
                for (std::size_t e = 0; e < lora.experts.size(); ++e) {
                    auto t = oracle::lora_expert(x, lora.experts[e], static_cast<Projection>(p));
                    for (std::size_t i = 0; i < t.numel(); ++i) dense[i] += lw[e] * t[i];
                }
                worst = std::max(worst, max_abs_diff((*got[p])->value(), dense));
            }
            const auto aw = oracle::dense_gate(x, adapter.gate);
            const auto ad =
                moe_adapter_forward(xv, adapter, {RoutingMode::MoE, adapter.experts.size(), 0}, false, nullptr);
            Tensor<double> dense({cfg.num_tokens(), cfg.embed_dim});
            for (std::size_t e = 0; e < adapter.experts.size(); ++e) {
                auto t = oracle::adapter_expert(x, adapter.experts[e]);
                for (std::size_t i = 0; i < t.numel(); ++i) dense[i] += aw[e] * t[i];
            }
            worst = std::max(worst, max_abs_diff(ad.delta->value(), dense));
        }
        r.passed = worst <= 1e-9;
        r.detail = std::to_string(inputs) + " inputs, LoRA and adapter layers at k = N, max abs err " + sci(worst) +
                   " (tol 1e-9)";
    });
}

CheckResult check_metrics_oracles(std::size_t batches, std::uint64_t seed) {
    return timed("metrics_oracles", [&](CheckResult& r) {
        Rng rng(seed);
        std::size_t auc_mismatch = 0, eer_mismatch = 0, property = 0;
        for (std::size_t n = 0; n < batches; ++n) {
            ScoredBatch b;
            const std::size_t size = 2 + rng.below(99);
            const bool coarse = n % 2 == 0;  // coarse scores force ties
            for (std::size_t i = 0; i < size; ++i) {
                const int label = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng.below(2));
                double s = rng.uniform() + 0.3 * label;
                if (coarse) s = std::round(s * 5.0) / 5.0;
                b.scores.push_back(s);
                b.labels.push_back(label);
            }
            const double a = auc(b);
            if (a != oracle::pair_count_auc(b)) ++auc_mismatch;
            if (eer(b) != oracle::exhaustive_eer(b)) ++eer_mismatch;
            ScoredBatch inv = b;
            for (auto& l : inv.labels) l = 1 - l;
            if (a + auc(inv) != 1.0) ++property;
            if (a == 1.0 && eer(b) != 0.0) ++property;
        }
        r.passed = auc_mismatch == 0 && eer_mismatch == 0 && property == 0;
        r.detail = std::to_string(batches) + " batches: auc mismatches " + std::to_string(auc_mismatch) +
                   ", eer mismatches " + std::to_string(eer_mismatch) + ", property violations " +
                   std::to_string(property);
    });
}

namespace {

std::vector<ImageSample> tiny_dataset(std::uint64_t seed) { return generate_dataset(12, 12, 16, 16, seed); }

}  // namespace

CheckResult check_checkpoint_roundtrip(std::uint64_t seed) {
    return timed("checkpoint_roundtrip", [&](CheckResult& r) {
        const ModelConfig cfg = ModelConfig::tiny();
        MoEFFDModel<float> model(cfg, seed);
        Rng rng(seed);
        randomize(model, rng, 0.5, true);
        TrainState st = make_train_state(model, seed);
        st.epoch = 3;
        st.step = 42;
        st.adam.step = 42;
        for (auto* v : {&st.adam.m, &st.adam.v})
            for (auto& t : *v)
                for (auto& x : t.storage()) x = static_cast<float>(rng.uniform());
        Rng noise(seed + 1);
        noise.normal();  // leaves a cached spare in the state
        st.noise_rng = noise.state();
        const nlohmann::json config = {{"note", "roundtrip"}};
        const auto bytes = checkpoint_bytes(model, &st, config);
        const auto ck = parse_checkpoint(bytes);
        MoEFFDModel<float> other(cfg, seed + 7);
        restore_model(ck, other);
        const TrainState st2 = restore_state(ck, other);
        const auto again = checkpoint_bytes(other, &st2, ck.config);
        std::size_t differing = 0;
        const auto a = model.parameters();
        const auto b = other.parameters();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (std::memcmp(a[i]->value.ptr(), b[i]->value.ptr(), a[i]->value.numel() * sizeof(float)) != 0)
                ++differing;
        const bool rng_ok = st2.noise_rng.x == st.noise_rng.x && st2.noise_rng.has_spare == st.noise_rng.has_spare &&
                            std::memcmp(&st2.noise_rng.spare, &st.noise_rng.spare, sizeof(double)) == 0;
        r.passed = again == bytes && differing == 0 && rng_ok;
        r.detail = std::to_string(bytes.size()) + " bytes; re-serialisation " + (again == bytes ? "identical" : "DIFFERS") +
                   ", " + std::to_string(differing) + " tensors differ after restore";
    });
}

CheckResult check_resume_equivalence(std::uint64_t seed) {
    return timed("resume_equivalence", [&](CheckResult& r) {
        ModelConfig cfg = ModelConfig::tiny();
        cfg.top_k = 2;
        const auto data = tiny_dataset(seed);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 5;
        tc.adam.lr_other = 1e-3;
        tc.adam.lr_gate = 1e-3;

        MoEFFDModel<float> straight(cfg, seed);
        TrainState s1 = make_train_state(straight, seed);
        const auto full = train(straight, s1, data, tc);

        MoEFFDModel<float> first(cfg, seed);
        TrainState s2 = make_train_state(first, seed);
        TrainConfig one = tc;
        one.epochs = 1;
        train(first, s2, data, one);
        const auto ck = parse_checkpoint(checkpoint_bytes(first, &s2, {}));
        MoEFFDModel<float> resumed(cfg, seed + 1000);
        restore_model(ck, resumed);
        TrainState s3 = restore_state(ck, resumed);
        const auto rest = train(resumed, s3, data, tc);

        std::size_t offset = full.steps.size() - rest.steps.size(), mismatched = 0;
        for (std::size_t i = 0; i < rest.steps.size(); ++i) {
            const auto& a = full.steps[offset + i].loss;
            const auto& b = rest.steps[i].loss;
            if (a.total != b.total || a.ce != b.ce || a.moe != b.moe) ++mismatched;
        }
        const bool same_params = checkpoint_bytes(straight, &s1, {}) == checkpoint_bytes(resumed, &s3, {});
        r.passed = mismatched == 0 && same_params && !rest.steps.empty();
        r.detail = std::to_string(rest.steps.size()) + " resumed steps, " + std::to_string(mismatched) +
                   " loss mismatches; final state " + (same_params ? "identical" : "DIFFERS");
    });
}

CheckResult check_end_to_end_gradcheck(double fraction, double tolerance, std::uint64_t seed) {
    return timed("end_to_end_gradcheck", [&](CheckResult& r) {
        const ModelConfig cfg = ModelConfig::desk();
        MoEFFDModel<double> model(cfg, seed);
        Rng rng(seed);
        randomize(model, rng, 0.05, true);
        const auto samples = generate_dataset(1, 1, cfg.image_size, cfg.image_size, seed);
        std::vector<Tensor<double>> images;
        for (const auto& s : samples) images.push_back(s.image.cast<double>());
        std::vector<const Tensor<double>*> ptrs = {&images[0], &images[1]};
        const std::vector<int> labels = {0, 1};
        const auto g = compute_batch_gradients<double>(model, ptrs, labels, 1.0, false, nullptr);
        auto params = model.parameters();
        std::vector<GradCheckTarget> targets;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i]->frozen) targets.push_back({params[i]->name, &params[i]->value, &g.grads[i]});
        const auto rep = finite_difference_gradcheck(
            [&] {
                auto fwd = model_forward<double>(ptrs, model, false, nullptr);
                return total_loss(fwd.logits, labels, fwd.records, 1.0).total;
            },
            targets, {1e-5, fraction, seed});
        r.passed = rep.max_rel_error <= tolerance;
        r.detail = std::to_string(rep.checked) + " coordinates, worst " + rep.worst_name + " " +
                   sci(rep.max_rel_error) + " (tol " + sci(tolerance) + ")";
    });
}

CheckResult check_checkpoint_file(const std::filesystem::path& path) {
    return timed("checkpoint_file", [&](CheckResult& r) {
        const auto v = verify_checkpoint(path);
        r.passed = v.ok;
        r.detail = path.string() + ": " + v.message;
    });
}

std::vector<CheckResult> run_verification(VerifyLevel level, const std::optional<std::filesystem::path>& checkpoint) {
    std::vector<CheckResult> out;
    out.push_back(check_diffconv_oracle());
    out.push_back(check_gradients());
    out.push_back(check_gating_properties());
    out.push_back(check_dispatch_equivalence());
    out.push_back(check_metrics_oracles());
    out.push_back(check_checkpoint_roundtrip());
    if (level == VerifyLevel::Full) {
        out.push_back(check_resume_equivalence());
        out.push_back(check_end_to_end_gradcheck());
    }
    if (checkpoint) out.push_back(check_checkpoint_file(*checkpoint));
    return out;
}

}  // namespace moeffd
