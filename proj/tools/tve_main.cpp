#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tve/checkpoint.hpp"
#include "tve/config.hpp"
#include "tve/evaluation.hpp"
#include "tve/heatmap_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace tve;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitThresholdMiss = 4;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "Override config keys (dotted.key=value); flags win");
}

RunConfig resolve(const CommonArgs& args) {
    return RunConfig::resolve(args.config_path, args.overrides);
}

fs::path dataset_dir(const RunConfig& cfg, const std::string& task) {
    if (cfg.paths.dataset.empty()) throw ValidationError("paths.dataset is not set");
    return fs::path(cfg.paths.dataset) / task;
}

fs::path ck_root(const RunConfig& cfg) {
    if (cfg.paths.checkpoints.empty()) throw ValidationError("paths.checkpoints is not set");
    return cfg.paths.checkpoints;
}

fs::path out_root(const RunConfig& cfg) {
    if (cfg.paths.output.empty()) throw ValidationError("paths.output is not set");
    return cfg.paths.output;
}

// The quadrant task's classifier is the general head H_g.
fs::path head_dir_for(const RunConfig& cfg, const std::string& task) {
    return ck_root(cfg) / (task == "quadrant" ? std::string("head_general") : "head_" + task);
}

void echo_config(const RunConfig& cfg, const fs::path& dir, const std::string& command) {
    fs::create_directories(dir);
    std::ofstream out(dir / (command + ".config.json"));
    if (!out) throw ValidationError("cannot write config echo in " + dir.string());
    out << cfg.to_json().dump(2) << "\n";
}

void write_trace(const fs::path& path, const std::vector<StepLog>& trace) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write trace " + path.string());
    for (const auto& s : trace) {
        ordered_json j = {{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}};
        out << j.dump() << "\n";
    }
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

uint64_t task_stream(const std::string& task) {
    if (task == "quadrant") return 0;
    if (task == "parity") return 1;
    if (task == "shape") return 2;
    throw ValidationError("unknown task '" + task + "'");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, bool force) {
    const fs::path root = cfg.paths.dataset.empty() ? fs::path() : fs::path(cfg.paths.dataset);
    if (root.empty()) throw ValidationError("paths.dataset is not set");
    if (fs::exists(root) && !fs::is_empty(root) && !force)
        throw ValidationError(root.string() + " exists and is not empty (use --force)");

    const Rng master(cfg.seed);
    const struct {
        const char* task;
        int64_t n_train, n_test;
    } specs[] = {
        {"quadrant", cfg.data.pretrain_train, cfg.data.pretrain_test},
        {"parity", cfg.data.downstream_train, cfg.data.downstream_test},
        {"shape", cfg.data.downstream_train, cfg.data.downstream_test},
    };
    for (const auto& s : specs) {
        const uint64_t seed = master.derive(task_stream(s.task)).seed();
        const Dataset ds =
            generate_dataset(cfg.grid, s.task, s.n_train, s.n_test, seed, cfg.data.gen);
        save_dataset(root / s.task, ds);
        std::cout << s.task << ": " << s.n_train << " train + " << s.n_test << " test\n";
    }
    echo_config(cfg, root, "gen-data");
    return kExitOk;
}

int cmd_train_backbone(const RunConfig& cfg) {
    const Dataset ds = load_dataset(dataset_dir(cfg, "quadrant"));
    Rng rng(cfg.seed);
    BackboneEncoder enc(cfg.grid, encoder_config(cfg), rng);
    ClassifierHead head(cfg.model.embed_dim, ds.n_classes, rng);
    const TrainReport rep = pretrain_backbone(enc, head, ds, cfg.backbone, cfg.seed);
    enc.freeze();

    const fs::path root = ck_root(cfg);
    save_backbone(root / "backbone", enc, cfg.seed);
    save_head(root / "head_general", head, cfg.grid, cfg.seed);
    write_trace(root / "backbone_trace.jsonl", rep.trace);
    echo_config(cfg, root, "train-backbone");
    std::cout << "final loss " << rep.final_loss << ", train accuracy " << rep.train_accuracy
              << ", test accuracy " << eval_accuracy(enc, head, ds, "test") << "\n";
    return kExitOk;
}

int cmd_finetune_head(const RunConfig& cfg, const std::string& task) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    enc.freeze();
    Rng rng = Rng(cfg.seed).derive(0x0EAD ^ task_stream(task));
    ClassifierHead head(enc.embed_dim(), ds.n_classes, rng);
    const TrainReport rep = finetune_head(enc, head, ds, cfg.head, rng.seed());

    const fs::path dir = head_dir_for(cfg, task);
    save_head(dir, head, cfg.grid, cfg.seed);
    write_trace(ck_root(cfg) / ("head_" + task + "_trace.jsonl"), rep.trace);
    echo_config(cfg, dir, "finetune-head");
    std::cout << task << ": train accuracy " << rep.train_accuracy << ", test accuracy "
              << eval_accuracy(enc, head, ds, "test") << "\n";
    return kExitOk;
}

int cmd_finetune_full(const RunConfig& cfg, const std::string& task) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    ClassifierHead head = load_head(head_dir_for(cfg, task));
    const TrainReport rep = finetune_full(enc, head, ds, cfg.full, cfg.seed);
    enc.freeze();

    const fs::path dir = ck_root(cfg) / ("full_" + task);
    save_backbone(dir / "backbone", enc, cfg.seed);
    save_head(dir / "head", head, cfg.grid, cfg.seed);
    write_trace(dir / "trace.jsonl", rep.trace);
    echo_config(cfg, dir, "finetune-full");
    std::cout << task << ": train accuracy " << rep.train_accuracy << ", test accuracy "
              << eval_accuracy(enc, head, ds, "test") << "\n";
    return kExitOk;
}

int cmd_pretrain_explainer(const RunConfig& cfg) {
    const Dataset ds = load_dataset(dataset_dir(cfg, "quadrant"));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    enc.freeze();
    Rng rng = Rng(cfg.seed).derive(0xE);
    ExplainerModel explainer(cfg.grid, explainer_config(cfg), rng);

    const fs::path dir = ck_root(cfg) / "explainer";
    fs::create_directories(dir / "steps");
    char stepname[32];
    const TrainReport rep = train_explainer(
        explainer, enc, ds, cfg.explainer, rng.seed(),
        [&](int64_t step, const ExplainerModel& e) {
            std::snprintf(stepname, sizeof(stepname), "step_%06lld", (long long)step);
            save_explainer(dir / "steps" / stepname, e, cfg.seed);
        });
    save_explainer(dir, explainer, cfg.seed);
    write_trace(dir / "trace.jsonl", rep.trace);
    echo_config(cfg, dir, "pretrain-explainer");
    std::cout << "final loss " << rep.final_loss << " over " << cfg.explainer.steps << " steps\n";
    return kExitOk;
}

int cmd_finetune_explainer(const RunConfig& cfg, const std::string& task, bool scratch,
                           bool use_pretrain_encoder) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    const fs::path enc_dir = use_pretrain_encoder
                                 ? ck_root(cfg) / "backbone"
                                 : ck_root(cfg) / ("full_" + task) / "backbone";
    BackboneEncoder enc = load_backbone(enc_dir);
    enc.freeze();

    Rng rng = Rng(cfg.seed).derive(0xF7 ^ task_stream(task));
    ExplainerModel explainer =
        scratch ? ExplainerModel(cfg.grid, explainer_config(cfg), rng)
                : load_explainer(ck_root(cfg) / "explainer");

    const fs::path dir =
        ck_root(cfg) / ((scratch ? "explainer_scratch_" : "explainer_ft_") + task);
    const TrainReport rep = train_explainer(explainer, enc, ds, cfg.explainer, rng.seed());
    save_explainer(dir, explainer, cfg.seed);
    write_trace(dir / "trace.jsonl", rep.trace);
    echo_config(cfg, dir, "finetune-explainer");
    std::cout << "final loss " << rep.final_loss << "\n";
    return kExitOk;
}

std::vector<int64_t> eval_slice(const Dataset& ds, int64_t n, const std::string& split) {
    std::vector<int64_t> idx = ds.split_indices(split);
    if (idx.empty()) throw ValidationError("dataset has no '" + split + "' split");
    if (n < int64_t(idx.size())) idx.resize(size_t(n));
    return idx;
}

int cmd_explain(const RunConfig& cfg, const std::string& task, const std::string& mode,
                int64_t count) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    enc.freeze();
    const ClassifierHead head = load_head(head_dir_for(cfg, task));
    const TargetModel model{&enc, &head};

    std::optional<ExplainerModel> explainer;
    if (mode == "amortized") explainer = load_explainer(ck_root(cfg) / "explainer");

    const fs::path dir = out_root(cfg) / ("explain_" + mode + "_" + task);
    fs::create_directories(dir);
    const auto idx = eval_slice(ds, count, "test");
    const Rng master(cfg.seed);
    char stem[32];
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& entry = ds.entries[size_t(idx[i])];
        const int64_t y = model.predicted_class(entry.image);
        Rng rng = master.derive(uint64_t(i));
        ExplanationHeatmap hm;
        if (mode == "exact") {
            std::vector<float> values(static_cast<size_t>(cfg.grid.patch_count()));
            for (int64_t bit = 0; bit < cfg.grid.patch_count(); ++bit)
                values[size_t(bit)] = float(
                    exact_attribution(model, entry.image, patch_from_bit(bit, cfg.grid), y));
            hm.values = Tensor::from_data({cfg.grid.patches_per_side, cfg.grid.patches_per_side},
                                          std::move(values));
            hm.label = y;
            hm.provenance = HeatmapProvenance::exact;
        } else if (mode == "transferred") {
            hm = transfer_explain(compute_meta_attribution(enc, entry.image, cfg.grid), head, y);
        } else if (mode == "amortized") {
            hm = transfer_explain(explainer->explain(entry.image), head, y);
        } else if (mode == "mc") {
            std::vector<float> values(static_cast<size_t>(cfg.grid.patch_count()));
            for (int64_t bit = 0; bit < cfg.grid.patch_count(); ++bit)
                values[size_t(bit)] =
                    float(mc_attribution(model, entry.image, patch_from_bit(bit, cfg.grid), y,
                                         cfg.eval.mc_samples, rng));
            hm.values = Tensor::from_data({cfg.grid.patches_per_side, cfg.grid.patches_per_side},
                                          std::move(values));
            hm.label = y;
            hm.provenance = HeatmapProvenance::mc_oracle;
        } else if (mode == "random") {
            hm = random_control(rng, cfg.grid);
            hm.label = y;
        } else {
            throw ValidationError("unknown explain mode '" + mode +
                                  "' (exact|transferred|amortized|mc|random)");
        }
        std::snprintf(stem, sizeof(stem), "img_%06lld", (long long)idx[i]);
        write_heatmap(dir / stem, hm, cfg.grid);
    }
    echo_config(cfg, dir, "explain");
    std::cout << "wrote " << idx.size() << " heatmaps to " << dir.string() << "\n";
    return kExitOk;
}

// Artifact wiring for one evaluation mode. Fidelity is measured against
// `target`; the transfer head may differ (e.g. TVE_Hg).
struct ModeArtifacts {
    BackboneEncoder target_encoder;
    ClassifierHead target_head;
    std::optional<ClassifierHead> transfer_head; // defaults to target_head
    std::optional<ExplainerModel> explainer;
    bool use_exact_meta = false;
    bool use_random = false;
};

ModeArtifacts load_mode(const RunConfig& cfg, const std::string& mode, const std::string& task) {
    const fs::path root = ck_root(cfg);
    auto need = [&](const fs::path& p, const std::string& what) {
        if (!fs::exists(p / "manifest.json"))
            throw ValidationError("mode " + mode + " requires " + what + " at " + p.string());
        return p;
    };

    const bool full_ft = mode == "TVE_PT" || mode == "TVE_FT" || mode == "LFScratch";
    const fs::path enc_dir = full_ft ? need(root / ("full_" + task) / "backbone",
                                            "a fully fine-tuned backbone (run finetune-full)")
                                     : need(root / "backbone", "a trained backbone");
    const fs::path head_dir = full_ft ? need(root / ("full_" + task) / "head",
                                             "a fully fine-tuned head (run finetune-full)")
                                      : need(head_dir_for(cfg, task), "a task head");

    ModeArtifacts art{load_backbone(enc_dir), load_head(head_dir), {}, {}, false, false};
    art.target_encoder.freeze();

    if (mode == "TVE" || mode == "TVE_PT") {
        art.explainer = load_explainer(need(root / "explainer", "a pre-trained explainer"));
    } else if (mode == "TVE_Hg") {
        art.explainer = load_explainer(need(root / "explainer", "a pre-trained explainer"));
        art.transfer_head = load_head(need(root / "head_general", "the general head"));
    } else if (mode == "TVE_FT") {
        art.explainer =
            load_explainer(need(root / ("explainer_ft_" + task), "a fine-tuned explainer"));
    } else if (mode == "LFScratch") {
        art.explainer = load_explainer(
            need(root / ("explainer_scratch_" + task), "a from-scratch explainer"));
    } else if (mode == "woPT") {
        Rng rng = Rng(cfg.seed).derive(0xE); // same init stream as pretrain-explainer
        art.explainer = ExplainerModel(cfg.grid, explainer_config(cfg), rng);
    } else if (mode == "exact") {
        art.use_exact_meta = true;
    } else if (mode == "random") {
        art.use_random = true;
    } else {
        throw ValidationError("unknown evaluate mode '" + mode + "'");
    }
    return art;
}

std::string mode_model_label(const std::string& mode) {
    const bool full_ft = mode == "TVE_PT" || mode == "TVE_FT" || mode == "LFScratch";
    return full_ft ? "full_finetuned" : "classifier_tuned";
}

int cmd_evaluate(const RunConfig& cfg, const std::string& task) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    ModeArtifacts art = load_mode(cfg, cfg.mode, task);
    const TargetModel target{&art.target_encoder, &art.target_head};
    HeatmapSource src;
    src.explainer = art.explainer ? &*art.explainer : nullptr;
    src.use_exact_meta = art.use_exact_meta;
    src.use_random = art.use_random;
    src.transfer_head = art.transfer_head ? &*art.transfer_head : nullptr;

    const auto idx = eval_slice(ds, cfg.eval.n_images, "test");
    ordered_json results = ordered_json::array();
    for (FidelityDirection dir : {FidelityDirection::plus, FidelityDirection::minus}) {
        const ModeEvalResult r =
            evaluate_mode(cfg.mode, src, target, ds, idx, dir, cfg.seed, cfg.threads);
        ordered_json per_image = ordered_json::array();
        for (size_t i = 0; i < idx.size(); ++i)
            per_image.push_back({{"index", idx[i]},
                                 {"file", ds.entries[size_t(idx[i])].file},
                                 {"auc", r.per_image[i]}});
        results.push_back({{"mode", cfg.mode},
                           {"model", mode_model_label(cfg.mode)},
                           {"dataset", task},
                           {"direction", to_string(dir)},
                           {"auc_mean", r.auc_mean},
                           {"auc_std", r.auc_std},
                           {"per_image", std::move(per_image)}});
    }
    const fs::path dir = out_root(cfg) / ("evaluate_" + cfg.mode + "_" + task);
    fs::create_directories(dir);
    write_json(dir / "results.json", results);
    echo_config(cfg, dir, "evaluate");
    for (const auto& r : results)
        std::cout << cfg.mode << " " << r.at("direction").get<std::string>() << " AUC "
                  << r.at("auc_mean").get<double>() << " +- " << r.at("auc_std").get<double>()
                  << "\n";
    return kExitOk;
}

int cmd_verify_bound(const RunConfig& cfg, const std::string& task, bool use_exact_meta) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    enc.freeze();
    const ClassifierHead head = load_head(head_dir_for(cfg, task));
    std::optional<ExplainerModel> explainer;
    if (!use_exact_meta) explainer = load_explainer(ck_root(cfg) / "explainer");

    const auto idx = eval_slice(ds, cfg.eval.bound_images, "test");
    const BoundReport rep = check_bound(enc, explainer ? &*explainer : nullptr, head, ds, idx);

    const fs::path dir = out_root(cfg) / ("verify_bound_" + task);
    fs::create_directories(dir);
    write_json(dir / "bound_report.json", {{"epsilon", rep.epsilon},
                                           {"bound", rep.bound},
                                           {"mean_abs_error", rep.mean_abs_error},
                                           {"holds", rep.holds},
                                           {"applicable", rep.applicable},
                                           {"n_triples", rep.n_triples}});
    echo_config(cfg, dir, "verify-bound");
    std::cout << "epsilon " << rep.epsilon << ", bound " << rep.bound << ", mean error "
              << rep.mean_abs_error << ", holds " << (rep.holds ? "yes" : "no")
              << (rep.applicable ? "" : " (inapplicable: epsilon >= 1)") << "\n";
    return rep.applicable && !rep.holds ? kExitThresholdMiss : kExitOk;
}

int cmd_correlate(const RunConfig& cfg, const std::string& task, double min_r) {
    const Dataset ds = load_dataset(dataset_dir(cfg, task));
    BackboneEncoder enc = load_backbone(ck_root(cfg) / "backbone");
    enc.freeze();
    const ClassifierHead head = load_head(head_dir_for(cfg, task));
    const TargetModel model{&enc, &head};

    // Enough images to reach >= 200 pairs at the configured patches per image.
    const int64_t need_images =
        (200 + cfg.eval.mc_pairs_per_image - 1) / cfg.eval.mc_pairs_per_image;
    const auto idx = eval_slice(ds, std::max(need_images, cfg.eval.bound_images), "test");
    const CorrelationResult res = correlation_study(model, ds, idx, cfg.eval.mc_pairs_per_image,
                                                    cfg.eval.mc_samples, cfg.seed);

    ordered_json points = ordered_json::array();
    for (const auto& p : res.points)
        points.push_back({{"image", p.image_index},
                          {"patch", p.patch_bit},
                          {"class", p.label},
                          {"exact", p.exact_value},
                          {"mc", p.mc_value}});
    const fs::path dir = out_root(cfg) / ("correlate_" + task);
    fs::create_directories(dir);
    write_json(dir / "correlation.json",
               {{"n_samples", cfg.eval.mc_samples},
                {"n_pairs", res.n_pairs},
                {"r", res.defined ? ordered_json(res.r) : ordered_json(nullptr)},
                {"defined", res.defined},
                {"points", std::move(points)}});
    echo_config(cfg, dir, "correlate");
    if (res.defined)
        std::cout << "pearson r = " << res.r << " over " << res.n_pairs << " pairs\n";
    else
        std::cout << "pearson r undefined (degenerate variance) over " << res.n_pairs
                  << " pairs\n";
    if (min_r > -1.0 && (!res.defined || res.r < min_r)) return kExitThresholdMiss;
    return kExitOk;
}

int cmd_bench(const RunConfig& cfg) {
    // Synthetic seeded models; throughput does not depend on trained weights.
    GridSpec base = cfg.grid;
    GridSpec doubled = cfg.grid;
    doubled.patches_per_side *= 2;
    doubled.patch_side = std::max<int64_t>(1, doubled.patch_side / 2);
    doubled.image_side = doubled.patch_side * doubled.patches_per_side;
    if (doubled.image_side != base.image_side)
        throw ValidationError("grid patch side must be even to double P at fixed W");

    Rng rng(cfg.seed);
    ordered_json counts = ordered_json::array();
    ordered_json timings = ordered_json::array();

    for (const GridSpec* grid : {&base, &doubled}) {
        BackboneEncoder enc(*grid, encoder_config(cfg), rng);
        enc.freeze();
        ExplainerModel explainer(*grid, explainer_config(cfg), rng);
        const Dataset probe = generate_dataset(*grid, "quadrant", 4, 0, cfg.seed);
        std::vector<Tensor> images;
        for (const auto& e : probe.entries) images.push_back(e.image);

        for (int64_t width : {int64_t(4), int64_t(8)}) {
            ClassifierHead head(cfg.model.embed_dim, width, rng);
            const TargetModel model{&enc, &head};
            const std::string tag =
                "P" + std::to_string(grid->patches_per_side) + "_K" + std::to_string(width);
            for (ThroughputMethod m :
                 {ThroughputMethod::tve, ThroughputMethod::exact, ThroughputMethod::mc16}) {
                // The P-doubled grid only needs the exact path and the wide
                // head only the TVE path; skip the rest to stay quick.
                if (grid == &doubled && m != ThroughputMethod::exact) continue;
                if (width == 8 && m != ThroughputMethod::tve) continue;
                const ThroughputResult r =
                    bench_throughput(m, model, &explainer, tag, images, cfg.eval.bench_images,
                                     int(cfg.eval.bench_repeats), cfg.seed);
                counts.push_back({{"method", r.method},
                                  {"model", r.model_tag},
                                  {"n_images", r.n_images},
                                  {"model_evals_per_image", r.model_evals_per_image}});
                timings.push_back({{"method", r.method},
                                   {"model", r.model_tag},
                                   {"n_images", r.n_images},
                                   {"seconds_median", r.seconds},
                                   {"images_per_second", r.images_per_second}});
                std::cout << r.method << " " << r.model_tag << ": " << r.images_per_second
                          << " images/s\n";
            }
        }
    }
    const fs::path dir = out_root(cfg) / "bench";
    fs::create_directories(dir);
    // Deterministic call counts and measured rates are split so rerun
    // byte-comparisons can exclude the measurement file.
    write_json(dir / "bench_counts.json", counts);
    write_json(dir / "timings.json", timings);
    echo_config(cfg, dir, "bench");
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transferable patch-attribution toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    bool force = false;
    std::string task = "";
    std::string explain_mode = "transferred";
    int64_t explain_count = 8;
    bool scratch = false;
    bool use_pretrain_encoder = false;
    bool use_exact_meta = false;
    double min_r = -2.0;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic task corpora");
    add_common(gen, common);
    gen->add_flag("--force", force, "Overwrite an existing non-empty dataset directory");

    CLI::App* trainb = app.add_subcommand("train-backbone", "Train the backbone and general head");
    add_common(trainb, common);

    CLI::App* fth = app.add_subcommand("finetune-head", "Tune a task head on a frozen backbone");
    add_common(fth, common);
    fth->add_option("--task", task, "Task name (defaults to config task)");

    CLI::App* ftf = app.add_subcommand("finetune-full", "Fully fine-tune backbone and head");
    add_common(ftf, common);
    ftf->add_option("--task", task, "Task name (defaults to config task)");

    CLI::App* pre = app.add_subcommand("pretrain-explainer", "Pre-train the amortized explainer");
    add_common(pre, common);

    CLI::App* fte = app.add_subcommand("finetune-explainer", "Fine-tune or retrain the explainer");
    add_common(fte, common);
    fte->add_option("--task", task, "Task name (defaults to config task)");
    fte->add_flag("--scratch", scratch, "Start from a fresh explainer (LFScratch arm)");
    fte->add_flag("--pretrain-encoder", use_pretrain_encoder,
                  "Target the pre-training backbone instead of the fully fine-tuned one");

    CLI::App* exp = app.add_subcommand("explain", "Write heatmap JSON + PGM per image");
    add_common(exp, common);
    exp->add_option("--task", task, "Task name (defaults to config task)");
    exp->add_option("--mode", explain_mode, "exact|transferred|amortized|mc|random");
    exp->add_option("--count", explain_count, "Number of test images");

    CLI::App* ev = app.add_subcommand("evaluate", "Fidelity-sparsity AUC for one mode");
    add_common(ev, common);
    ev->add_option("--task", task, "Task name (defaults to config task)");

    CLI::App* vb = app.add_subcommand("verify-bound", "Check the explanation-error bound");
    add_common(vb, common);
    vb->add_option("--task", task, "Task name (defaults to config task)");
    vb->add_flag("--use-exact-meta", use_exact_meta,
                 "Inject exact meta-attribution as the prediction (ideal case)");

    CLI::App* corr = app.add_subcommand("correlate", "Two-state vs MC attribution correlation");
    add_common(corr, common);
    corr->add_option("--task", task, "Task name (defaults to config task)");
    corr->add_option("--min-r", min_r, "Exit 4 when Pearson r falls below this");

    CLI::App* bench = app.add_subcommand("bench", "Explanation throughput benchmark");
    add_common(bench, common);

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = resolve(common);
        const std::string tk = task.empty() ? cfg.task : task;
        if (gen->parsed()) return cmd_gen_data(cfg, force);
        if (trainb->parsed()) return cmd_train_backbone(cfg);
        if (fth->parsed()) return cmd_finetune_head(cfg, tk);
        if (ftf->parsed()) return cmd_finetune_full(cfg, tk);
        if (pre->parsed()) return cmd_pretrain_explainer(cfg);
        if (fte->parsed()) return cmd_finetune_explainer(cfg, tk, scratch, use_pretrain_encoder);
        if (exp->parsed()) return cmd_explain(cfg, tk, explain_mode, explain_count);
        if (ev->parsed()) return cmd_evaluate(cfg, tk);
        if (vb->parsed()) return cmd_verify_bound(cfg, tk, use_exact_meta);
        if (corr->parsed()) return cmd_correlate(cfg, tk, min_r);
        if (bench->parsed()) return cmd_bench(cfg);
        return kExitValidation;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const NonFiniteError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
