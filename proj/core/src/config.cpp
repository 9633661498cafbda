#include "tve/config.hpp"

#include <cstdlib>
#include <fstream>

#include "tve/checkpoint.hpp"

namespace tve {

using nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& j, const std::vector<std::string>& known,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ValidationError("unknown config key '" + where + it.key() + "'");
    }
}

template <typename T>
void maybe(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_train(const ordered_json& j, TrainConfig& out, const std::string& where) {
    reject_unknown(j, {"epochs", "batch", "rate", "warmup_ratio", "weight_decay"}, where);
    maybe(j, "epochs", out.epochs);
    maybe(j, "batch", out.batch);
    maybe(j, "rate", out.rate);
    maybe(j, "warmup_ratio", out.warmup_ratio);
    maybe(j, "weight_decay", out.weight_decay);
}

ordered_json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch", t.batch},
            {"rate", t.rate},
            {"warmup_ratio", t.warmup_ratio},
            {"weight_decay", t.weight_decay}};
}

} // namespace

void RunConfig::validate() const {
    grid.validate();
    if (threads < 1) throw ValidationError("threads must be >= 1");
    if (model.d_model < 1 || model.embed_dim < 1 || model.n_blocks < 0 ||
        model.feature_dim < 1 || model.n_heads < 2)
        throw ValidationError("model dims out of range");
    if (data.pretrain_train < 1 || data.pretrain_test < 0 || data.downstream_train < 1 ||
        data.downstream_test < 0)
        throw ValidationError("data counts out of range");
    if (data.gen.noise_sigma < 0.0f || data.gen.blob_amp_lo > data.gen.blob_amp_hi)
        throw ValidationError("data generator settings out of range");
    for (const TrainConfig* t : {&backbone, &head, &full}) {
        if (t->epochs < 0 || t->batch < 1 || t->rate < 0.0f || t->warmup_ratio < 0.0f ||
            t->warmup_ratio > 1.0f || t->weight_decay < 0.0f)
            throw ValidationError("train settings out of range");
    }
    if (explainer.steps < 0 || explainer.batch < 1 || explainer.patches_per_image < 1 ||
        explainer.rate < 0.0f || explainer.warmup_ratio < 0.0f || explainer.warmup_ratio > 1.0f ||
        explainer.weight_decay < 0.0f || explainer.checkpoint_every < 0)
        throw ValidationError("explainer settings out of range");
    if (explainer.patches_per_image > grid.patch_count())
        throw ValidationError("patches_per_image exceeds patch count");
    static const std::vector<std::string> kModes = {"TVE",       "TVE_Hg", "TVE_PT",
                                                    "TVE_FT",    "LFScratch", "woPT",
                                                    "exact",     "random"};
    if (std::find(kModes.begin(), kModes.end(), mode) == kModes.end())
        throw ValidationError("unknown mode '" + mode + "'");
    task_class_count(task); // validates the task name
    if (eval.n_images < 1 || eval.mc_samples < 1 || eval.mc_pairs_per_image < 1 ||
        eval.bound_images < 1 || eval.bench_images < 1 || eval.bench_repeats < 1)
        throw ValidationError("eval settings out of range");
}

ordered_json RunConfig::to_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["grid"] = grid_to_json(grid);
    j["model"] = {{"d_model", model.d_model},
                  {"D", model.embed_dim},
                  {"L", model.n_blocks},
                  {"d_e", model.feature_dim},
                  {"n_heads", model.n_heads}};
    j["data"] = {{"pretrain_train", data.pretrain_train},
                 {"pretrain_test", data.pretrain_test},
                 {"downstream_train", data.downstream_train},
                 {"downstream_test", data.downstream_test},
                 {"noise_sigma", data.gen.noise_sigma},
                 {"blob_amp_lo", data.gen.blob_amp_lo},
                 {"blob_amp_hi", data.gen.blob_amp_hi}};
    j["backbone"] = train_json(backbone);
    j["head"] = train_json(head);
    j["full"] = train_json(full);
    j["explainer"] = {{"steps", explainer.steps},
                      {"batch", explainer.batch},
                      {"patches_per_image", explainer.patches_per_image},
                      {"rate", explainer.rate},
                      {"warmup_ratio", explainer.warmup_ratio},
                      {"weight_decay", explainer.weight_decay},
                      {"checkpoint_every", explainer.checkpoint_every},
                      {"cache_targets", explainer.cache_targets}};
    j["paths"] = {{"dataset", paths.dataset},
                  {"checkpoints", paths.checkpoints},
                  {"output", paths.output}};
    j["mode"] = mode;
    j["task"] = task;
    j["eval"] = {{"n_images", eval.n_images},
                 {"mc_samples", eval.mc_samples},
                 {"mc_pairs_per_image", eval.mc_pairs_per_image},
                 {"bound_images", eval.bound_images},
                 {"bench_images", eval.bench_images},
                 {"bench_repeats", eval.bench_repeats}};
    return j;
}

RunConfig RunConfig::from_json(const ordered_json& j) {
    RunConfig c;
    reject_unknown(j,
                   {"seed", "threads", "grid", "model", "data", "backbone", "head", "full",
                    "explainer", "paths", "mode", "task", "eval"},
                   "");
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        reject_unknown(g, {"W", "C", "P", "hop_radius", "metric"}, "grid.");
        maybe(g, "W", c.grid.image_side);
        maybe(g, "C", c.grid.patch_side);
        maybe(g, "P", c.grid.patches_per_side);
        maybe(g, "hop_radius", c.grid.hop_radius);
        if (g.contains("metric"))
            c.grid.metric = neighbor_metric_from_string(g.at("metric").get<std::string>());
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, {"d_model", "D", "L", "d_e", "n_heads"}, "model.");
        maybe(m, "d_model", c.model.d_model);
        maybe(m, "D", c.model.embed_dim);
        maybe(m, "L", c.model.n_blocks);
        maybe(m, "d_e", c.model.feature_dim);
        maybe(m, "n_heads", c.model.n_heads);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d,
                       {"pretrain_train", "pretrain_test", "downstream_train", "downstream_test",
                        "noise_sigma", "blob_amp_lo", "blob_amp_hi"},
                       "data.");
        maybe(d, "pretrain_train", c.data.pretrain_train);
        maybe(d, "pretrain_test", c.data.pretrain_test);
        maybe(d, "downstream_train", c.data.downstream_train);
        maybe(d, "downstream_test", c.data.downstream_test);
        maybe(d, "noise_sigma", c.data.gen.noise_sigma);
        maybe(d, "blob_amp_lo", c.data.gen.blob_amp_lo);
        maybe(d, "blob_amp_hi", c.data.gen.blob_amp_hi);
    }
    if (j.contains("backbone")) parse_train(j.at("backbone"), c.backbone, "backbone.");
    if (j.contains("head")) parse_train(j.at("head"), c.head, "head.");
    if (j.contains("full")) parse_train(j.at("full"), c.full, "full.");
    if (j.contains("explainer")) {
        const auto& e = j.at("explainer");
        reject_unknown(e,
                       {"steps", "batch", "patches_per_image", "rate", "warmup_ratio",
                        "weight_decay", "checkpoint_every", "cache_targets"},
                       "explainer.");
        maybe(e, "steps", c.explainer.steps);
        maybe(e, "batch", c.explainer.batch);
        maybe(e, "patches_per_image", c.explainer.patches_per_image);
        maybe(e, "rate", c.explainer.rate);
        maybe(e, "warmup_ratio", c.explainer.warmup_ratio);
        maybe(e, "weight_decay", c.explainer.weight_decay);
        maybe(e, "checkpoint_every", c.explainer.checkpoint_every);
        maybe(e, "cache_targets", c.explainer.cache_targets);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, {"dataset", "checkpoints", "output"}, "paths.");
        maybe(p, "dataset", c.paths.dataset);
        maybe(p, "checkpoints", c.paths.checkpoints);
        maybe(p, "output", c.paths.output);
    }
    maybe(j, "mode", c.mode);
    maybe(j, "task", c.task);
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e,
                       {"n_images", "mc_samples", "mc_pairs_per_image", "bound_images",
                        "bench_images", "bench_repeats"},
                       "eval.");
        maybe(e, "n_images", c.eval.n_images);
        maybe(e, "mc_samples", c.eval.mc_samples);
        maybe(e, "mc_pairs_per_image", c.eval.mc_pairs_per_image);
        maybe(e, "bound_images", c.eval.bound_images);
        maybe(e, "bench_images", c.eval.bench_images);
        maybe(e, "bench_repeats", c.eval.bench_repeats);
    }
    return c;
}

RunConfig RunConfig::resolve(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    ordered_json j = ordered_json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ValidationError("cannot open config file " + config_path);
        j = ordered_json::parse(in);
    }

    if (const char* env_seed = std::getenv("TVE_SEED")) {
        try {
            j["seed"] = std::stoull(env_seed);
        } catch (const std::exception&) {
            throw ValidationError("TVE_SEED is not an unsigned integer");
        }
    }

    for (const std::string& kv : overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValidationError("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        ordered_json* cur = &j;
        size_t pos = 0;
        for (;;) {
            const size_t dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot - pos);
            if (part.empty()) throw ValidationError("--set has empty key segment in '" + kv + "'");
            if (dot == std::string::npos) {
                ordered_json parsed = ordered_json::parse(value, nullptr, false);
                (*cur)[part] = parsed.is_discarded() ? ordered_json(value) : parsed;
                break;
            }
            cur = &(*cur)[part];
            pos = dot + 1;
        }
    }

    RunConfig cfg = from_json(j);
    cfg.validate();
    return cfg;
}

void RunConfig::echo_to(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json");
    if (!out) throw ValidationError("cannot write config echo in " + dir.string());
    out << to_json().dump(2) << "\n";
}

EncoderConfig encoder_config(const RunConfig& cfg) {
    return {cfg.model.d_model, cfg.model.embed_dim, cfg.model.n_blocks};
}

ExplainerConfig explainer_config(const RunConfig& cfg) {
    return {cfg.model.feature_dim, cfg.model.n_heads, cfg.model.embed_dim, 2};
}

} // namespace tve
