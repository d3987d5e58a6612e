// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/train.hpp"

#include <cmath>
#include <numeric>

#include "moeffd/checkpoint.hpp"
#include "moeffd/io.hpp"

namespace moeffd {

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value ≥ 0");
    if (!(adam.lr_gate > 0.0) || !(adam.lr_other > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be ≥ 1");
}

TrainState make_train_state(const MoEFFDModel<float>& model, std::uint64_t run_seed) {
    TrainState st;
    st.data_rng = Rng(derive_seed(run_seed, static_cast<std::uint64_t>(SeedStream::Data))).state();
    st.noise_rng = Rng(derive_seed(run_seed, static_cast<std::uint64_t>(SeedStream::Noise))).state();
    for (const auto* p : model.parameters()) {
        st.adam.m.push_back(Tensor<float>::zeros_like(p->value));
        st.adam.v.push_back(Tensor<float>::zeros_like(p->value));
    }
    return st;
}

namespace {

[[noreturn]] void abort_numeric(const MoEFFDModel<float>& model, const TrainHooks& hooks, std::size_t epoch,
                                std::uint64_t step, const std::vector<std::uint64_t>& batch_ids,
                                const std::string& what) {
    std::string msg = "numeric failure at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step) +
                      ": " + what;
    if (hooks.snapshot_dir) {
        nlohmann::json diag = {{"epoch", epoch + 1}, {"step", step}, {"batch_ids", batch_ids}, {"error", what}};
        save_checkpoint(*hooks.snapshot_dir / "nan_snapshot.ckpt", model, nullptr, diag);
        write_text(*hooks.snapshot_dir / "nan_snapshot.json", diag.dump(2) + "\n");
        msg += " (snapshot in " + hooks.snapshot_dir->string() + ")";
    }
    throw NumericError(msg);
}

}  // namespace

TrainReport train(MoEFFDModel<float>& model, TrainState& state, const std::vector<ImageSample>& data,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    TrainReport report;
    if (state.epoch >= cfg.epochs) return report;
    if (data.empty()) throw ArgumentError("train: empty dataset");
    bool has_real = false, has_fake = false;
    for (const auto& s : data) (s.label == 1 ? has_fake : has_real) = true;
    if (!has_real || !has_fake) throw ArgumentError("train: dataset needs both classes");

    Rng data_rng, noise_rng;
    data_rng.set_state(state.data_rng);
    noise_rng.set_state(state.noise_rng);
    const auto params = model.parameters();
    std::uint64_t steps_done = 0;

    while (state.epoch < cfg.epochs) {
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        data_rng.shuffle(order.begin(), order.end());

        EpochReport ep;
        ep.epoch = state.epoch + 1;
        std::size_t batches = 0;
        std::vector<std::vector<GateRecord>> routing;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const Tensor<float>*> images;
            std::vector<int> labels;
            std::vector<std::uint64_t> ids;
            for (std::size_t i = start; i < end; ++i) {
                images.push_back(&data[order[i]].image);
                labels.push_back(data[order[i]].label);
                ids.push_back(data[order[i]].id);
            }
            BatchGradients<float> g;
            try {
                g = compute_batch_gradients<float>(model, images, labels, cfg.lambda, true, &noise_rng);
            } catch (const NumericError& e) {
                abort_numeric(model, hooks, state.epoch, state.step, ids, e.what());
            }
            if (!std::isfinite(g.loss.total)) abort_numeric(model, hooks, state.epoch, state.step, ids, "loss is NaN");
            try {
                adam_step(params, g.grads, state.adam, cfg.adam);
            } catch (const NumericError& e) {
                abort_numeric(model, hooks, state.epoch, state.step, ids, e.what());
            }
            ++state.step;
            ++batches;
            for (auto& r : g.forward.records) routing.push_back(std::move(r));
            report.steps.push_back({ep.epoch, state.step, g.loss});
            ep.loss += g.loss.total;
            ep.ce += g.loss.ce;
            ep.moe += g.loss.moe;
            if (g.loss.total > 0.0) ep.moe_share += cfg.lambda * g.loss.moe / g.loss.total;
            if (hooks.max_steps && ++steps_done >= hooks.max_steps) {
                state.data_rng = data_rng.state();
                state.noise_rng = noise_rng.state();
                return report;
            }
        }
        const double nb = static_cast<double>(batches);
        ep.loss /= nb;
        ep.ce /= nb;
        ep.moe /= nb;
        ep.moe_share /= nb;
        ep.routing = expert_frequencies(routing);
        ++state.epoch;
        state.data_rng = data_rng.state();
        state.noise_rng = noise_rng.state();
        if (hooks.eval_set && !hooks.eval_set->empty()) ep.eval = evaluate(model, *hooks.eval_set);
        if (hooks.on_epoch) hooks.on_epoch(model, state, ep);
        report.epochs.push_back(std::move(ep));
    }
    return report;
}

EvalResult evaluate(const MoEFFDModel<float>& model, const std::vector<ImageSample>& data,
                    std::optional<PerturbationSpec> perturbation, std::uint64_t perturb_seed) {
    EvalResult res;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        std::vector<Tensor<float>> perturbed;
        std::vector<const Tensor<float>*> images;
        if (perturbation && perturbation->severity > 0) {
            perturbed.reserve(end - start);
            for (std::size_t i = start; i < end; ++i)
                perturbed.push_back(perturb(data[i].image, *perturbation, derive_seed(perturb_seed, data[i].id)));
            for (const auto& t : perturbed) images.push_back(&t);
        } else {
            for (std::size_t i = start; i < end; ++i) images.push_back(&data[i].image);
        }
        auto fwd = model_forward<float>(images, model, false, nullptr);
        for (std::size_t i = 0; i < end - start; ++i) {
            const double l0 = fwd.logits[2 * i], l1 = fwd.logits[2 * i + 1];
            res.batch.scores.push_back(1.0 / (1.0 + std::exp(l0 - l1)));
            res.batch.labels.push_back(data[start + i].label);
            res.records.push_back(std::move(fwd.records[i]));
        }
    }
    res.auc = auc(res.batch);
    res.eer = eer(res.batch);
    res.frequencies = expert_frequencies(res.records);
    return res;
}

}  // namespace moeffd
