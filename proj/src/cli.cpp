// Copyright (C) 2026 MoE-FFD desk contributors
// SPDX-License-Identifier: Apache-2.0

#include "moeffd/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "moeffd/checkpoint.hpp"
#include "moeffd/io.hpp"
#include "moeffd/verify.hpp"

namespace moeffd {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

void check_image_size(const std::vector<ImageSample>& data, const ModelConfig& m, const std::string& what) {
    for (const auto& s : data)
        if (s.image.dim(1) != m.image_size || s.image.dim(2) != m.image_size)
            throw VersionError(what + " holds " + std::to_string(s.image.dim(1)) + "×" +
                               std::to_string(s.image.dim(2)) + " images but the model expects " +
                               std::to_string(m.image_size) + "×" + std::to_string(m.image_size));
}

std::string loss_curve_csv(const TrainReport& rep) {
    std::string out = "epoch,step,loss,ce,moe\n";
    for (const auto& s : rep.steps)
        out += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + num(s.loss.total) + "," +
               num(s.loss.ce) + "," + num(s.loss.moe) + "\n";
    return out;
}

std::string epochs_header() {
    return "epoch,loss,ce,moe,moe_share,train_lora_max_min,train_adapter_max_min,test_auc,test_eer\n";
}

std::string epoch_row(const EpochReport& e) {
    return std::to_string(e.epoch) + "," + num(e.loss) + "," + num(e.ce) + "," + num(e.moe) + "," +
           num(e.moe_share) + "," + num(e.routing.max_min_share(GateType::LoRA)) + "," +
           num(e.routing.max_min_share(GateType::Adapter)) + "," + (e.eval ? num(e.eval->auc) : "") + "," +
           (e.eval ? num(e.eval->eer) : "") + "\n";
}

std::string checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
    return buf;
}

RunConfig config_from_checkpoint(const Checkpoint& ck) {
    try {
        return run_config_from_json(ck.config);
    } catch (const ConfigError& e) {
        throw VersionError(std::string("checkpoint carries an incompatible config: ") + e.what());
    }
}

}  // namespace

fs::path output_root() {
    const char* env = std::getenv(kOutputRootEnv);
    return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path run_directory(const RunConfig& cfg) {
    return cfg.out_dir.empty() ? output_root() / cfg.run_id : fs::path(cfg.out_dir);
}

std::vector<ImageSample> load_split(const RunConfig& cfg, bool test) {
    const std::string& dir = test ? cfg.data.test_dir : cfg.data.train_dir;
    std::vector<ImageSample> data;
    if (!dir.empty()) {
        data = load_dataset(dir);
    } else {
        const std::uint64_t seed = test ? derive_seed(cfg.data.seed, 1) : cfg.data.seed;
        data = test ? generate_dataset(cfg.data.n_test_real, cfg.data.n_test_fake, cfg.model.image_size,
                                       cfg.model.image_size, seed)
                    : generate_dataset(cfg.data.n_train_real, cfg.data.n_train_fake, cfg.model.image_size,
                                       cfg.model.image_size, seed);
    }
    check_image_size(data, cfg.model, test ? "test split" : "train split");
    return data;
}

fs::path cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
    const std::size_t s = cfg.model.image_size;
    const std::uint64_t test_seed = derive_seed(cfg.data.seed, 1);
    write_dataset(out_dir / "train", generate_dataset(cfg.data.n_train_real, cfg.data.n_train_fake, s, s, cfg.data.seed),
                  cfg.data.seed, cfg.data.n_train_real, cfg.data.n_train_fake, s, s, "train");
    write_dataset(out_dir / "test", generate_dataset(cfg.data.n_test_real, cfg.data.n_test_fake, s, s, test_seed),
                  test_seed, cfg.data.n_test_real, cfg.data.n_test_fake, s, s, "test");
    return out_dir / "train" / "manifest.json";
}

fs::path cmd_regenerate(const fs::path& manifest_dir, const fs::path& out_dir) {
    const auto m = read_manifest(manifest_dir);
    write_dataset(out_dir, regenerate(m), m.seed, m.n_real, m.n_fake, m.height, m.width, m.split);
    return out_dir / "manifest.json";
}

TrainOutcome cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume, std::ostream* log) {
    cfg.validate();
    TrainOutcome outcome;
    outcome.run_dir = run_directory(cfg);
    const fs::path dir = outcome.run_dir;
    const json config = to_json(cfg);
    write_text(dir / "config.json", config.dump(2) + "\n");

    MoEFFDModel<float> model(cfg.model, cfg.seed);
    TrainState state = make_train_state(model, cfg.seed);
    if (resume) {
        const auto ck = load_checkpoint(*resume);
        const RunConfig prev = config_from_checkpoint(ck);
        if (to_json(prev.model) != to_json(cfg.model) || prev.seed != cfg.seed)
            throw VersionError("checkpoint " + resume->string() + " was written for a different model or seed");
        restore_model(ck, model);
        state = restore_state(ck, model);
        if (log) *log << "resuming from " << resume->string() << " at epoch " << state.epoch << "\n";
    }
    const auto train_set = load_split(cfg, false);
    const auto test_set = load_split(cfg, true);

    std::string epochs_csv = epochs_header();
    TrainHooks hooks;
    hooks.eval_set = &test_set;
    hooks.snapshot_dir = dir;
    hooks.on_epoch = [&](const MoEFFDModel<float>& m, const TrainState& st, const EpochReport& e) {
        epochs_csv += epoch_row(e);
        if (log)
            *log << "epoch " << e.epoch << "/" << cfg.train.epochs << "  loss " << short_num(e.loss) << "  ce "
                 << short_num(e.ce) << "  moe " << short_num(e.moe) << "  test auc "
                 << (e.eval ? short_num(e.eval->auc) : "-") << std::endl;
        if (cfg.train.checkpoint_every && e.epoch % cfg.train.checkpoint_every == 0)
            save_checkpoint(dir / "checkpoints" / checkpoint_name(e.epoch), m, &st, config);
    };
    outcome.report = train(model, state, train_set, cfg.train, hooks);
    save_checkpoint(dir / "final.ckpt", model, &state, config);
    write_text(dir / "loss_curve.csv", loss_curve_csv(outcome.report));
    write_text(dir / "epochs.csv", epochs_csv);

    std::vector<MetricsRow> rows;
    const auto train_eval = evaluate(model, train_set);
    rows.push_back({cfg.run_id, "train", train_eval.auc, train_eval.eer});
    outcome.test = evaluate(model, test_set);
    rows.push_back({cfg.run_id, "test", outcome.test.auc, outcome.test.eer});
    write_text(dir / "metrics.csv", metrics_csv(rows));
    write_text(dir / "expert_freq.csv", expert_freq_csv(outcome.test.frequencies));
    write_text(dir / "gate_records.csv", gate_records_csv(outcome.test.records));
    return outcome;
}

std::vector<MetricsRow> cmd_eval(const EvalOptions& opts) {
    const auto ck = load_checkpoint(opts.checkpoint);
    RunConfig cfg = config_from_checkpoint(ck);
    MoEFFDModel<float> model(cfg.model, cfg.seed);
    restore_model(ck, model);
    std::vector<ImageSample> data;
    std::string split = "test";
    if (opts.data_dir) {
        data = load_dataset(*opts.data_dir);
        split = read_manifest(*opts.data_dir).split;
        check_image_size(data, cfg.model, opts.data_dir->string());
    } else {
        data = load_split(cfg, true);
    }
    const fs::path out = opts.out_dir ? *opts.out_dir : opts.checkpoint.parent_path() / "eval";

    std::vector<MetricsRow> rows;
    const auto plain = evaluate(model, data);
    rows.push_back({cfg.run_id, split, plain.auc, plain.eer});
    for (auto kind : opts.perturbations)
        for (int sev : opts.severities) {
            const auto r = evaluate(model, data, PerturbationSpec{kind, sev}, opts.perturb_seed);
            rows.push_back({cfg.run_id, split + "/" + perturbation_name(kind) + "/" + std::to_string(sev), r.auc, r.eer});
        }
    write_text(out / "metrics.csv", metrics_csv(rows));
    write_text(out / "expert_freq.csv", expert_freq_csv(plain.frequencies));
    write_text(out / "gate_records.csv", gate_records_csv(plain.records));
    return rows;
}

namespace {

struct AblationCell {
    std::string name;
    RunConfig cfg;
};

std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::string& sweep) {
    std::vector<AblationCell> cells;
    auto cell = [&](const std::string& name) -> RunConfig& {
        cells.push_back({name, base});
        cells.back().cfg.run_id = sweep + "_" + name;
        cells.back().cfg.out_dir = (run_directory(base) / (sweep + "_" + name)).string();
        return cells.back().cfg;
    };
    if (sweep == "rank") {
        for (auto r : base.model.lora_ranks) {
            auto& c = cell("r" + std::to_string(r));
            c.model.lora_ranks = {r};
            c.model.top_k = 1;
        }
    } else if (sweep == "adapter_kind") {
        for (auto k : base.model.adapter_kinds) {
            auto& c = cell(std::string(kind_name(k)));
            c.model.adapter_kinds = {k};
            c.model.top_k = 1;
        }
    } else if (sweep == "top_k") {
        for (std::size_t k : {1, 2, 3}) cell("k" + std::to_string(k)).model.top_k = k;
    } else if (sweep == "lambda") {
        for (double l : {0.0, 0.1, 1.0, 5.0, 10.0}) {
            std::ostringstream name;
            name << l;
            cell(name.str()).train.lambda = l;
        }
    } else if (sweep == "moe_vs_multi") {
        cell("moe").model.mode = RoutingMode::MoE;
        cell("multi_experts").model.mode = RoutingMode::MultiExperts;
    } else {
        throw ConfigError("unknown ablation sweep '" + sweep + "' (rank, adapter_kind, top_k, lambda, moe_vs_multi)");
    }
    return cells;
}

}  // namespace

fs::path cmd_ablate(const RunConfig& base, const std::string& sweep, std::ostream* log) {
    const auto cells = ablation_cells(base, sweep);
    const fs::path dir = run_directory(base);
    std::string csv = "sweep,cell,status,auc,eer,lora_max_min_share,adapter_max_min_share\n";
    for (const auto& c : cells) {
        if (log) *log << "== " << sweep << " / " << c.name << "\n";
        try {
            c.cfg.validate();
            const auto res = cmd_train(c.cfg, std::nullopt, log);
            csv += sweep + "," + c.name + ",ok," + num(res.test.auc) + "," + num(res.test.eer) + "," +
                   num(res.test.frequencies.max_min_share(GateType::LoRA)) + "," +
                   num(res.test.frequencies.max_min_share(GateType::Adapter)) + "\n";
        } catch (const std::exception& e) {
            std::string msg = e.what();
            for (auto& ch : msg)
                if (ch == ',' || ch == '\n') ch = ' ';
            csv += sweep + "," + c.name + ",error: " + msg + ",,,,\n";
            if (log) *log << "cell failed: " << e.what() << "\n";
        }
    }
    write_text(dir / "ablation.csv", csv);
    return dir / "ablation.csv";
}

namespace {

struct CommonFlags {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, top_k;
    std::optional<double> lambda;
    std::optional<std::string> mode, run_id, out, preset;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_file, "JSON run config");
        app->add_option("--set", sets, "Override a config key, e.g. train.lambda=0.1")->take_all();
        app->add_option("--preset", preset, "desk | tiny | full_scale");
        app->add_option("--seed", seed, "Run seed");
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--lambda", lambda, "MoE loss weight");
        app->add_option("--top-k", top_k, "Experts per gate");
        app->add_option("--mode", mode, "moe | multi_experts | single_expert:<id> | backbone_only");
        app->add_option("--run-id", run_id, "Run name under the output root");
        app->add_option("--out", out, "Output directory");
    }

    RunConfig resolve() const {
        json doc = json::object();
        if (!config_file.empty()) {
            try {
                doc = json::parse(read_text(config_file));
            } catch (const json::exception& e) {
                throw ConfigError(config_file + ": " + e.what());
            }
        }
        if (preset) doc["preset"] = *preset;
        if (seed) doc["seed"] = *seed;
        if (epochs) apply_override(doc, "train.epochs=" + std::to_string(*epochs));
        if (lambda) apply_override(doc, "train.lambda=" + num(*lambda));
        if (top_k) apply_override(doc, "model.top_k=" + std::to_string(*top_k));
        if (mode) doc["model"]["mode"] = *mode;
        if (run_id) doc["run_id"] = *run_id;
        for (const auto& s : sets) apply_override(doc, s);
        return run_config_from_json(doc);
    }
};

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MoE-FFD desk-scale reference: data generation, training, evaluation and checks"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, ablate_flags;
    auto* gen = app.add_subcommand("gen-data", "Write the synthetic train/test datasets");
    gen_flags.attach(gen);
    std::string from_manifest;
    gen->add_option("--from-manifest", from_manifest, "Regenerate the dataset described by this directory");

    auto* tr = app.add_subcommand("train", "Train a model and write a run directory");
    train_flags.attach(tr);
    std::string resume;
    tr->add_option("--resume", resume, "Continue from a checkpoint");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint, optionally under perturbations");
    EvalOptions eo;
    std::string ev_ckpt, ev_data, ev_out;
    std::vector<std::string> ev_perturb;
    std::vector<int> ev_sev;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Dataset directory (default: the run's test split)");
    ev->add_option("--out", ev_out, "Output directory");
    ev->add_option("--perturb", ev_perturb, "gaussian_blur | gaussian_noise | block_wise | all")->take_all();
    ev->add_option("--severity", ev_sev, "Severities 0..5 (default 1..5 with --perturb)")->take_all();
    ev->add_option("--perturb-seed", eo.perturb_seed, "Perturbation seed");

    auto* ab = app.add_subcommand("ablate", "Run an ablation sweep");
    ablate_flags.attach(ab);
    std::string sweep;
    ab->add_option("--sweep", sweep, "rank | adapter_kind | top_k | lambda | moe_vs_multi")->required();

    auto* ver = app.add_subcommand("verify", "Run gradient checks and oracle suites");
    std::string level = "fast", ver_ckpt;
    ver->add_option("--level", level, "fast | full")->check(CLI::IsMember({"fast", "full"}));
    ver->add_option("--checkpoint", ver_ckpt, "Also verify this checkpoint's tensor hashes");

    auto* rep = app.add_subcommand("report-experts", "Top-1 expert selection frequencies");
    std::string rep_ckpt, rep_data, rep_records, rep_out;
    rep->add_option("--checkpoint", rep_ckpt, "Checkpoint to evaluate");
    rep->add_option("--data", rep_data, "Dataset directory (default: the run's test split)");
    rep->add_option("--records", rep_records, "Rebuild from a gate_records.csv instead");
    rep->add_option("--out", rep_out, "Write expert_freq.csv here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (gen->parsed()) {
        const fs::path target = gen_flags.out ? fs::path(*gen_flags.out) : output_root() / "data";
        const fs::path manifest =
            from_manifest.empty() ? cmd_gen_data(gen_flags.resolve(), target) : cmd_regenerate(from_manifest, target);
        out << manifest.string() << "\n";
        return kExitOk;
    }
    if (tr->parsed()) {
        RunConfig cfg = train_flags.resolve();
        if (train_flags.out) cfg.out_dir = *train_flags.out;
        const auto res = cmd_train(cfg, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), &out);
        out << "test auc " << short_num(res.test.auc) << "  eer " << short_num(res.test.eer) << "\n"
            << res.run_dir.string() << "\n";
        return kExitOk;
    }
    if (ev->parsed()) {
        eo.checkpoint = ev_ckpt;
        if (!ev_data.empty()) eo.data_dir = ev_data;
        if (!ev_out.empty()) eo.out_dir = ev_out;
        for (const auto& p : ev_perturb) {
            if (p == "all") {
                eo.perturbations.assign(std::begin(kAllPerturbations), std::end(kAllPerturbations));
                continue;
            }
            try {
                eo.perturbations.push_back(perturbation_from_name(p));
            } catch (const ArgumentError& e) {
                throw ConfigError(e.what());
            }
        }
        eo.severities = ev_sev.empty() ? std::vector<int>{1, 2, 3, 4, 5} : ev_sev;
        for (int s : eo.severities)
            if (s < 0 || s > 5) throw ConfigError("severity must lie in 0..5");
        const auto rows = cmd_eval(eo);
        out << metrics_csv(rows);
        return kExitOk;
    }
    if (ab->parsed()) {
        RunConfig cfg = ablate_flags.resolve();
        if (ablate_flags.out) cfg.out_dir = *ablate_flags.out;
        const auto path = cmd_ablate(cfg, sweep, &out);
        out << read_text(path) << path.string() << "\n";
        return kExitOk;
    }
    if (ver->parsed()) {
        const auto results = run_verification(level == "full" ? VerifyLevel::Full : VerifyLevel::Fast,
                                              ver_ckpt.empty() ? std::nullopt : std::optional<fs::path>(ver_ckpt));
        bool ok = true;
        for (const auto& r : results) {
            ok = ok && r.passed;
            char secs[32];
            std::snprintf(secs, sizeof secs, "%.2fs", r.seconds);
            out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << secs << ")  " << r.detail << "\n";
        }
        out << (ok ? "verify: all checks passed" : "verify: FAILED") << "\n";
        return ok ? kExitOk : kExitVerifyFailed;
    }
    if (rep->parsed()) {
        ExpertFrequencyReport report;
        if (!rep_records.empty()) {
            report = expert_frequencies(parse_gate_records_csv(read_text(rep_records)));
        } else if (!rep_ckpt.empty()) {
            const auto ck = load_checkpoint(rep_ckpt);
            RunConfig cfg = config_from_checkpoint(ck);
            MoEFFDModel<float> model(cfg.model, cfg.seed);
            restore_model(ck, model);
            std::vector<ImageSample> data;
            if (!rep_data.empty()) {
                data = load_dataset(rep_data);
                check_image_size(data, cfg.model, rep_data);
            } else {
                data = load_split(cfg, true);
            }
            report = evaluate(model, data).frequencies;
        } else {
            throw ConfigError("report-experts needs --checkpoint or --records");
        }
        const std::string csv = expert_freq_csv(report);
        if (!rep_out.empty()) write_text(fs::path(rep_out) / "expert_freq.csv", csv);
        out << csv;
        return kExitOk;
    }
    return kExitConfig;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(argc, argv, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ArgumentError& e) {
        err << "invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const VersionError& e) {
        err << "version error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << "\n";
        return kExitConfig;
    }
}

}  // namespace moeffd
