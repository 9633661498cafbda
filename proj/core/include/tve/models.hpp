#pragma once

#include <string>
#include <vector>

#include "tve/dataset.hpp"
#include "tve/grid.hpp"
#include "tve/ops.hpp"
#include "tve/optim.hpp"
#include "tve/rng.hpp"

namespace tve {

// Floor applied to classifier probabilities before any log.
constexpr float kProbFloor = 1e-7f;

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Residual feed-forward block: y = layer_norm(x + fc2(gelu(fc1(x)))).
struct FfnBlock {
    Tensor fc1_w, fc1_b, fc2_w, fc2_b, ln_gain, ln_bias;

    static FfnBlock init(int64_t dim, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct EncoderConfig {
    int64_t d_model = 32;
    int64_t embed_dim = 16; // D, the meta-attribution width
    int64_t n_blocks = 2;   // L
};

// Reference backbone G: position-dependent patch embedding, mean pool over
// patches, L residual feed-forward blocks, projection to R^D. The per-position
// embedding weights are what keep masked embeddings patch-localized after the
// pooling. Frozen models are safe to share read-only across threads.
class BackboneEncoder {
public:
    BackboneEncoder(const GridSpec& grid, EncoderConfig cfg, Rng& rng);

    // [B*P*P, C*C*3] patch rows (instance-major, patch-minor) -> [B, D].
    Tensor encode_rows(const Tensor& patch_rows) const;

    Tensor encode(const Tensor& image) const;
    Tensor encode_masked(const Tensor& image, const PatchSubset& subset) const;

    void freeze();
    void unfreeze();
    bool frozen() const { return frozen_; }

    const GridSpec& grid() const { return grid_; }
    const EncoderConfig& config() const { return cfg_; }
    int64_t embed_dim() const { return cfg_.embed_dim; }

    std::vector<NamedParam> named_params() const;
    std::vector<Tensor> params() const;

    BackboneEncoder clone() const; // deep copy of parameters

    // Reconstruction from checkpoint payloads.
    static BackboneEncoder from_params(const GridSpec& grid, EncoderConfig cfg,
                                       const std::vector<NamedParam>& params);

private:
    BackboneEncoder(const GridSpec& grid, EncoderConfig cfg);

    GridSpec grid_;
    EncoderConfig cfg_;
    bool frozen_ = false;
    Tensor embed_w_, embed_b_; // [P*P, f, d_model], [P*P, d_model]
    std::vector<FfnBlock> blocks_;
    Tensor proj_w_, proj_b_;   // [d_model, D], [D]
};

// Linear head + softmax over |Y_t| classes.
class ClassifierHead {
public:
    ClassifierHead(int64_t embed_dim, int64_t n_classes, Rng& rng);

    Tensor logits(const Tensor& emb) const;  // [B, D] -> [B, K]
    Tensor probs(const Tensor& emb) const;   // softmax rows

    // Probability of class y for one embedding, clamped to [kProbFloor, 1].
    double prob_of(const Tensor& emb_row, int64_t y) const;

    int64_t n_classes() const { return n_classes_; }
    int64_t embed_dim() const { return embed_dim_; }

    std::vector<NamedParam> named_params() const;
    std::vector<Tensor> params() const;
    ClassifierHead clone() const;

    static ClassifierHead from_params(int64_t embed_dim, int64_t n_classes,
                                      const std::vector<NamedParam>& params);

private:
    ClassifierHead(int64_t embed_dim, int64_t n_classes);

    int64_t embed_dim_, n_classes_;
    Tensor w_, b_;
};

// f_t = H_t o G with masked-input evaluation.
struct TargetModel {
    const BackboneEncoder* encoder = nullptr;
    const ClassifierHead* head = nullptr;

    // head(encode_masked(...))[y], clamped to [kProbFloor, 1].
    double predict_masked(const Tensor& image, const PatchSubset& subset, int64_t y) const;

    // Full-image class probabilities (pre-clamp) and argmax.
    Tensor predict_full(const Tensor& image) const;
    int64_t predicted_class(const Tensor& image) const;
};

struct TrainConfig {
    int64_t epochs = 5;
    int64_t batch = 64;
    float rate = 1e-3f;
    float warmup_ratio = 0.05f;
    float weight_decay = 0.05f;
};

struct StepLog {
    int64_t step;
    double loss;
    double lr;
};

struct TrainReport {
    double final_loss = 0.0;
    double train_accuracy = 0.0;
    std::vector<StepLog> trace;
    int64_t skipped_steps = 0; // non-finite-gradient steps
};

// Cross-entropy training of (G, H_g) from scratch on the train split.
// G is NOT frozen on return; callers freeze it once satisfied.
TrainReport pretrain_backbone(BackboneEncoder& encoder, ClassifierHead& head,
                              const Dataset& dataset, const TrainConfig& cfg, uint64_t seed);

// Head-only tuning against a frozen encoder; every G parameter stays
// bit-identical.
TrainReport finetune_head(const BackboneEncoder& frozen_encoder, ClassifierHead& head,
                          const Dataset& dataset, const TrainConfig& cfg, uint64_t seed);

// Full fine-tuning of both components.
TrainReport finetune_full(BackboneEncoder& encoder, ClassifierHead& head,
                          const Dataset& dataset, const TrainConfig& cfg, uint64_t seed);

// Mean argmax accuracy over the given split.
double eval_accuracy(const BackboneEncoder& encoder, const ClassifierHead& head,
                     const Dataset& dataset, const std::string& split);

} // namespace tve
