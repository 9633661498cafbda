#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tve/dataset.hpp"
#include "tve/explainer.hpp"
#include "tve/models.hpp"

namespace tve {

// Resolved run configuration. JSON file -> TVE_SEED env -> --set overrides,
// later sources win. Every field is validated before any work starts and
// unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 42;
    int threads = 1;
    GridSpec grid; // defaults: W=32 C=4 P=8 hop=2 chebyshev

    struct ModelDims {
        int64_t d_model = 32;
        int64_t embed_dim = 16;  // D
        int64_t n_blocks = 2;    // L
        int64_t feature_dim = 64; // d_e
        int64_t n_heads = 4;
    } model;

    struct DataCfg {
        int64_t pretrain_train = 2000;
        int64_t pretrain_test = 400;
        int64_t downstream_train = 512;
        int64_t downstream_test = 128;
        GenSpec gen;
    } data;

    TrainConfig backbone{12, 64, 1e-3f, 0.05f, 0.05f};
    TrainConfig head{200, 64, 2e-4f, 0.05f, 0.05f};
    TrainConfig full{12, 64, 2e-4f, 0.05f, 0.05f};
    ExplainerTrainConfig explainer{5000, 16, 8, 1e-3f, 0.05f, 0.05f, 500, true};

    struct Paths {
        std::string dataset;
        std::string checkpoints;
        std::string output;
    } paths;

    std::string mode = "TVE";
    std::string task = "quadrant";

    struct EvalCfg {
        int64_t n_images = 64;
        int64_t mc_samples = 16;
        int64_t mc_pairs_per_image = 8;
        int64_t bound_images = 8;
        int64_t bench_images = 8;
        int64_t bench_repeats = 3;
    } eval;

    void validate() const;

    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::ordered_json& j);

    // Load file (optional), apply TVE_SEED if set, then apply overrides of the
    // form "dotted.key=value"; flags win.
    static RunConfig resolve(const std::string& config_path,
                             const std::vector<std::string>& overrides);

    void echo_to(const std::filesystem::path& dir) const;
};

EncoderConfig encoder_config(const RunConfig& cfg);
ExplainerConfig explainer_config(const RunConfig& cfg);

} // namespace tve
