#pragma once

#include <functional>

#include "tve/attribution.hpp"

namespace tve {

struct ExplainerConfig {
    int64_t feature_dim = 64;   // d_e, per-patch trunk width
    int64_t n_heads = 4;        // stacked FFN head blocks
    int64_t embed_dim = 16;     // D, must match the backbone
    int64_t n_trunk_blocks = 2;
};

// Amortized explainer E: one forward pass per image yields the predicted
// meta-attribution pair, independent of the downstream head or class count.
// Trunk: per-position patch embedding, pooled global context added back to
// every patch row, then residual FFN blocks per patch. Heads: n stacked FFN
// blocks (linear + layer norm + GELU with residual); the first has no skip
// and the last maps to 2D with neither GELU nor skip. Output row z splits
// into predicted g (first D) and h (last D).
class ExplainerModel {
public:
    ExplainerModel(const GridSpec& grid, ExplainerConfig cfg, Rng& rng);

    // [B*P*P, C*C*3] patch rows -> [B*P*P, 2D].
    Tensor forward_rows(const Tensor& patch_rows) const;

    MetaAttribution explain(const Tensor& image) const;

    const GridSpec& grid() const { return grid_; }
    const ExplainerConfig& config() const { return cfg_; }

    std::vector<NamedParam> named_params() const;
    std::vector<Tensor> params() const;
    ExplainerModel clone() const;

    static ExplainerModel from_params(const GridSpec& grid, ExplainerConfig cfg,
                                      const std::vector<NamedParam>& params);

private:
    struct HeadBlock {
        Tensor fc_w, fc_b, ln_gain, ln_bias;
    };

    ExplainerModel(const GridSpec& grid, ExplainerConfig cfg);

    GridSpec grid_;
    ExplainerConfig cfg_;
    Tensor embed_w_, embed_b_; // [P*P, f, d_e], [P*P, d_e]
    std::vector<FfnBlock> trunk_;
    std::vector<HeadBlock> heads_;
};

// Regression loss of Eq.-style form: mean over the sampled patches of
// ||g_hat - g||^2 + ||h_hat - h||^2 with targets from the frozen encoder,
// computed on the fly. Differentiable in the explainer parameters only.
Tensor pretrain_loss(const ExplainerModel& explainer, const BackboneEncoder& encoder,
                     const Tensor& image, const std::vector<int64_t>& sampled_patches);

struct ExplainerTrainConfig {
    int64_t steps = 5000;
    int64_t batch = 16;
    int64_t patches_per_image = 8;
    float rate = 1e-3f;
    float warmup_ratio = 0.05f;
    float weight_decay = 0.05f;
    int64_t checkpoint_every = 0; // 0 = no periodic checkpoints
    bool cache_targets = true;
};

// Called after the optimizer step at checkpoint boundaries and once at the end.
using CheckpointHook = std::function<void(int64_t step, const ExplainerModel&)>;

// Minibatch training of E against targets from the frozen encoder; drives
// both pre-training (fresh E) and fine-tuning (loaded E, fine-tuned encoder).
TrainReport train_explainer(ExplainerModel& explainer, const BackboneEncoder& frozen_encoder,
                            const Dataset& dataset, const ExplainerTrainConfig& cfg,
                            uint64_t seed, const CheckpointHook& hook = nullptr);

// Eq.-form loss evaluated over all patches of the given images; deterministic,
// used for checkpoint-quality comparisons.
double eval_explainer_loss(const ExplainerModel& explainer, const BackboneEncoder& encoder,
                           const Dataset& dataset, const std::vector<int64_t>& image_indices);

void save_explainer(const std::filesystem::path& dir, const ExplainerModel& e, uint64_t seed);
ExplainerModel load_explainer(const std::filesystem::path& dir);

} // namespace tve
