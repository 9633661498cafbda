#include "tve/models.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

namespace tve {
namespace {

Tensor init_linear(Shape dims, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const double s = std::sqrt(2.0 / double(fan_in + fan_out));
    std::vector<float> w(static_cast<size_t>(shape_numel(dims)));
    for (float& v : w) v = float(rng.normal(0.0, s));
    return Tensor::from_data(std::move(dims), std::move(w), true);
}

std::unordered_map<std::string, Tensor> param_map(const std::vector<NamedParam>& params) {
    std::unordered_map<std::string, Tensor> m;
    for (const auto& p : params) m.emplace(p.name, p.tensor);
    return m;
}

Tensor take_param(std::unordered_map<std::string, Tensor>& m, const std::string& name,
                  const Shape& dims) {
    auto it = m.find(name);
    if (it == m.end()) throw ValidationError("checkpoint missing parameter '" + name + "'");
    if (it->second.dims() != dims)
        throw ValidationError("parameter '" + name + "' has shape " + shape_str(it->second.dims()) +
                              ", expected " + shape_str(dims));
    Tensor t = it->second;
    t.set_requires_grad(true);
    m.erase(it);
    return t;
}

Tensor deep_copy(const Tensor& t) {
    return Tensor::from_data(t.dims(), t.data(), t.requires_grad());
}

} // namespace

FfnBlock FfnBlock::init(int64_t dim, Rng& rng) {
    FfnBlock b;
    b.fc1_w = init_linear({dim, dim}, dim, dim, rng);
    b.fc1_b = Tensor::zeros({dim}, true);
    b.fc2_w = init_linear({dim, dim}, dim, dim, rng);
    b.fc2_b = Tensor::zeros({dim}, true);
    b.ln_gain = Tensor::full({dim}, 1.0f, true);
    b.ln_bias = Tensor::zeros({dim}, true);
    return b;
}

Tensor FfnBlock::forward(const Tensor& x) const {
    Tensor h = add(matmul(x, fc1_w), fc1_b);
    h = gelu(h);
    h = add(matmul(h, fc2_w), fc2_b);
    return layer_norm(add(x, h), ln_gain, ln_bias);
}

void FfnBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".fc1.weight", fc1_w});
    out.push_back({prefix + ".fc1.bias", fc1_b});
    out.push_back({prefix + ".fc2.weight", fc2_w});
    out.push_back({prefix + ".fc2.bias", fc2_b});
    out.push_back({prefix + ".ln.gain", ln_gain});
    out.push_back({prefix + ".ln.bias", ln_bias});
}

BackboneEncoder::BackboneEncoder(const GridSpec& grid, EncoderConfig cfg)
    : grid_(grid), cfg_(cfg) {
    grid_.validate();
    if (cfg_.d_model < 1 || cfg_.embed_dim < 1 || cfg_.n_blocks < 0)
        throw ValidationError("encoder config out of range");
}

BackboneEncoder::BackboneEncoder(const GridSpec& grid, EncoderConfig cfg, Rng& rng)
    : BackboneEncoder(grid, cfg) {
    const int64_t pp = grid_.patch_count();
    const int64_t f = grid_.patch_side * grid_.patch_side * 3;
    embed_w_ = init_linear({pp, f, cfg_.d_model}, f, cfg_.d_model, rng);
    embed_b_ = Tensor::zeros({pp, cfg_.d_model}, true);
    for (int64_t i = 0; i < cfg_.n_blocks; ++i) blocks_.push_back(FfnBlock::init(cfg_.d_model, rng));
    proj_w_ = init_linear({cfg_.d_model, cfg_.embed_dim}, cfg_.d_model, cfg_.embed_dim, rng);
    proj_b_ = Tensor::zeros({cfg_.embed_dim}, true);
}

Tensor BackboneEncoder::encode_rows(const Tensor& patch_rows) const {
    Tensor e = per_position_embed(patch_rows, embed_w_, embed_b_);
    // Blocks run per patch row before pooling; pooling last keeps the
    // embedding generic enough for heads the backbone was never trained on.
    for (const auto& b : blocks_) e = b.forward(e);
    Tensor pooled = mean_pool_groups(e, grid_.patch_count());
    return add(matmul(pooled, proj_w_), proj_b_);
}

Tensor BackboneEncoder::encode(const Tensor& image) const {
    return encode_rows(patchify(image, grid_));
}

Tensor BackboneEncoder::encode_masked(const Tensor& image, const PatchSubset& subset) const {
    return encode_rows(patchify(apply_mask(image, subset, grid_), grid_));
}

void BackboneEncoder::freeze() {
    for (auto& p : params()) p.set_requires_grad(false);
    frozen_ = true;
}

void BackboneEncoder::unfreeze() {
    for (auto& p : params()) p.set_requires_grad(true);
    frozen_ = false;
}

std::vector<NamedParam> BackboneEncoder::named_params() const {
    std::vector<NamedParam> out;
    out.push_back({"patch_embed.weight", embed_w_});
    out.push_back({"patch_embed.bias", embed_b_});
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("block" + std::to_string(i), out);
    out.push_back({"proj.weight", proj_w_});
    out.push_back({"proj.bias", proj_b_});
    return out;
}

std::vector<Tensor> BackboneEncoder::params() const {
    std::vector<Tensor> out;
    for (auto& p : named_params()) out.push_back(p.tensor);
    return out;
}

BackboneEncoder BackboneEncoder::clone() const {
    BackboneEncoder c(grid_, cfg_);
    c.embed_w_ = deep_copy(embed_w_);
    c.embed_b_ = deep_copy(embed_b_);
    for (const auto& b : blocks_) {
        FfnBlock nb;
        nb.fc1_w = deep_copy(b.fc1_w);
        nb.fc1_b = deep_copy(b.fc1_b);
        nb.fc2_w = deep_copy(b.fc2_w);
        nb.fc2_b = deep_copy(b.fc2_b);
        nb.ln_gain = deep_copy(b.ln_gain);
        nb.ln_bias = deep_copy(b.ln_bias);
        c.blocks_.push_back(std::move(nb));
    }
    c.proj_w_ = deep_copy(proj_w_);
    c.proj_b_ = deep_copy(proj_b_);
    c.frozen_ = frozen_;
    if (frozen_) c.freeze();
    return c;
}

BackboneEncoder BackboneEncoder::from_params(const GridSpec& grid, EncoderConfig cfg,
                                             const std::vector<NamedParam>& params) {
    BackboneEncoder enc(grid, cfg);
    auto m = param_map(params);
    const int64_t pp = grid.patch_count();
    const int64_t f = grid.patch_side * grid.patch_side * 3;
    enc.embed_w_ = take_param(m, "patch_embed.weight", {pp, f, cfg.d_model});
    enc.embed_b_ = take_param(m, "patch_embed.bias", {pp, cfg.d_model});
    for (int64_t i = 0; i < cfg.n_blocks; ++i) {
        const std::string pre = "block" + std::to_string(i);
        FfnBlock b;
        b.fc1_w = take_param(m, pre + ".fc1.weight", {cfg.d_model, cfg.d_model});
        b.fc1_b = take_param(m, pre + ".fc1.bias", {cfg.d_model});
        b.fc2_w = take_param(m, pre + ".fc2.weight", {cfg.d_model, cfg.d_model});
        b.fc2_b = take_param(m, pre + ".fc2.bias", {cfg.d_model});
        b.ln_gain = take_param(m, pre + ".ln.gain", {cfg.d_model});
        b.ln_bias = take_param(m, pre + ".ln.bias", {cfg.d_model});
        enc.blocks_.push_back(std::move(b));
    }
    enc.proj_w_ = take_param(m, "proj.weight", {cfg.d_model, cfg.embed_dim});
    enc.proj_b_ = take_param(m, "proj.bias", {cfg.embed_dim});
    if (!m.empty())
        throw ValidationError("checkpoint has unexpected parameter '" + m.begin()->first + "'");
    return enc;
}

ClassifierHead::ClassifierHead(int64_t embed_dim, int64_t n_classes)
    : embed_dim_(embed_dim), n_classes_(n_classes) {
    if (embed_dim < 1 || n_classes < 2) throw ValidationError("head dims out of range");
}

ClassifierHead::ClassifierHead(int64_t embed_dim, int64_t n_classes, Rng& rng)
    : ClassifierHead(embed_dim, n_classes) {
    w_ = init_linear({embed_dim, n_classes}, embed_dim, n_classes, rng);
    b_ = Tensor::zeros({n_classes}, true);
}

Tensor ClassifierHead::logits(const Tensor& emb) const {
    if (emb.dims().size() != 2 || emb.dims()[1] != embed_dim_)
        throw ValidationError("head expects [B, " + std::to_string(embed_dim_) + "], got " +
                              shape_str(emb.dims()));
    return add(matmul(emb, w_), b_);
}

Tensor ClassifierHead::probs(const Tensor& emb) const { return softmax(logits(emb)); }

double ClassifierHead::prob_of(const Tensor& emb_row, int64_t y) const {
    if (y < 0 || y >= n_classes_)
        throw ValidationError("class " + std::to_string(y) + " outside " +
                              std::to_string(n_classes_) + " classes");
    Tensor emb = emb_row;
    if (emb.dims().size() == 1) emb = Tensor::from_data({1, emb.numel()}, emb.data());
    const Tensor p = probs(emb);
    const float v = p.data()[size_t(y)];
    return std::min(1.0, std::max(double(kProbFloor), double(v)));
}

std::vector<NamedParam> ClassifierHead::named_params() const {
    return {{"head.weight", w_}, {"head.bias", b_}};
}

std::vector<Tensor> ClassifierHead::params() const { return {w_, b_}; }

ClassifierHead ClassifierHead::clone() const {
    ClassifierHead c(embed_dim_, n_classes_);
    c.w_ = deep_copy(w_);
    c.b_ = deep_copy(b_);
    return c;
}

ClassifierHead ClassifierHead::from_params(int64_t embed_dim, int64_t n_classes,
                                           const std::vector<NamedParam>& params) {
    ClassifierHead h(embed_dim, n_classes);
    auto m = param_map(params);
    h.w_ = take_param(m, "head.weight", {embed_dim, n_classes});
    h.b_ = take_param(m, "head.bias", {n_classes});
    if (!m.empty())
        throw ValidationError("checkpoint has unexpected parameter '" + m.begin()->first + "'");
    return h;
}

double TargetModel::predict_masked(const Tensor& image, const PatchSubset& subset,
                                   int64_t y) const {
    const Tensor emb = encoder->encode_masked(image, subset);
    return head->prob_of(emb, y);
}

Tensor TargetModel::predict_full(const Tensor& image) const {
    Tensor emb = encoder->encode(image);
    emb = Tensor::from_data({1, emb.numel()}, emb.data());
    return head->probs(emb);
}

int64_t TargetModel::predicted_class(const Tensor& image) const {
    const Tensor p = predict_full(image);
    int64_t best = 0;
    for (int64_t j = 1; j < p.dims()[1]; ++j)
        if (p.data()[size_t(j)] > p.data()[size_t(best)]) best = j;
    return best;
}

namespace {

// Shared minibatch cross-entropy loop. `trainable` is what the optimizer
// updates; forward always runs through encoder+head.
TrainReport train_loop(const BackboneEncoder& encoder, const ClassifierHead& head,
                       const std::vector<Tensor>& trainable, const Dataset& dataset,
                       const TrainConfig& cfg, uint64_t seed) {
    dataset.validate();
    if (cfg.epochs < 0 || cfg.batch < 1) throw ValidationError("train config out of range");
    if (head.n_classes() != dataset.n_classes)
        throw ValidationError("head has " + std::to_string(head.n_classes()) +
                              " classes, dataset has " + std::to_string(dataset.n_classes));
    const auto train_idx = dataset.split_indices("train");
    if (train_idx.empty()) throw ValidationError("dataset has no train split");

    // Patch rows are fixed per image; build once.
    std::vector<Tensor> rows(dataset.entries.size());
    for (int64_t i : train_idx)
        rows[size_t(i)] = patchify(dataset.entries[size_t(i)].image, encoder.grid());

    const int64_t n = int64_t(train_idx.size());
    const int64_t batches_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const int64_t horizon = std::max<int64_t>(1, cfg.epochs * batches_per_epoch);

    AdamConfig acfg;
    acfg.weight_decay = cfg.weight_decay;
    acfg.schedule = {cfg.rate, cfg.warmup_ratio, horizon, 0.0f};
    AdamOptimizer opt(trainable, acfg);

    Rng order_rng = Rng(seed).derive(0xDA7A);
    TrainReport report;
    const int64_t pp = encoder.grid().patch_count();
    const int64_t f = encoder.grid().patch_side * encoder.grid().patch_side * 3;

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> perm = train_idx;
        order_rng.shuffle(perm);
        for (int64_t b0 = 0; b0 < n; b0 += cfg.batch) {
            const int64_t bs = std::min<int64_t>(cfg.batch, n - b0);
            std::vector<float> stacked(static_cast<size_t>(bs * pp * f));
            std::vector<int64_t> labels(static_cast<size_t>(bs));
            for (int64_t b = 0; b < bs; ++b) {
                const int64_t idx = perm[size_t(b0 + b)];
                const auto& src = rows[size_t(idx)].data();
                std::copy(src.begin(), src.end(), stacked.begin() + b * pp * f);
                labels[size_t(b)] = dataset.entries[size_t(idx)].label;
            }
            Tensor batch_rows = Tensor::from_data({bs * pp, f}, std::move(stacked));

            double loss_val;
            try {
                Tensor emb = encoder.encode_rows(batch_rows);
                Tensor p = softmax(head.logits(emb));
                Tensor picked = gather_per_row(p, labels);
                Tensor loss = scale(mean_all(log(clamp_min(picked, kProbFloor))), -1.0f);
                loss_val = loss.item();
                if (!std::isfinite(loss_val))
                    throw NonFiniteError("training loss is non-finite");
                opt.zero_grad();
                loss.backward();
            } catch (const NonFiniteError& e) {
                throw DivergenceError(e.what(), step);
            }
            const AdamStepResult r = opt.step();
            if (!r.applied) ++report.skipped_steps;
            report.trace.push_back({step, loss_val, double(r.learning_rate)});
            report.final_loss = loss_val;
            ++step;
        }
    }
    report.train_accuracy = eval_accuracy(encoder, head, dataset, "train");
    return report;
}

} // namespace

TrainReport pretrain_backbone(BackboneEncoder& encoder, ClassifierHead& head,
                              const Dataset& dataset, const TrainConfig& cfg, uint64_t seed) {
    std::vector<Tensor> trainable = encoder.params();
    for (auto& p : head.params()) trainable.push_back(p);
    return train_loop(encoder, head, trainable, dataset, cfg, seed);
}

TrainReport finetune_head(const BackboneEncoder& frozen_encoder, ClassifierHead& head,
                          const Dataset& dataset, const TrainConfig& cfg, uint64_t seed) {
    if (!frozen_encoder.frozen())
        throw ValidationError("finetune_head requires a frozen encoder");
    dataset.validate();
    if (cfg.epochs < 0 || cfg.batch < 1) throw ValidationError("train config out of range");
    if (head.n_classes() != dataset.n_classes)
        throw ValidationError("head has " + std::to_string(head.n_classes()) +
                              " classes, dataset has " + std::to_string(dataset.n_classes));
    const auto train_idx = dataset.split_indices("train");
    if (train_idx.empty()) throw ValidationError("dataset has no train split");

    // The encoder is frozen, so per-image embeddings are constants; compute
    // them once and train the head on embedding rows.
    const int64_t D = frozen_encoder.embed_dim();
    const int64_t n = int64_t(train_idx.size());
    std::vector<float> emb(static_cast<size_t>(n * D));
    std::vector<int64_t> all_labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const auto& e = dataset.entries[size_t(train_idx[size_t(i)])];
        const Tensor one = frozen_encoder.encode(e.image);
        std::copy(one.data().begin(), one.data().end(), emb.begin() + i * D);
        all_labels[size_t(i)] = e.label;
    }
    const Tensor emb_all = Tensor::from_data({n, D}, std::move(emb));

    const int64_t batches_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const int64_t horizon = std::max<int64_t>(1, cfg.epochs * batches_per_epoch);
    AdamConfig acfg;
    acfg.weight_decay = cfg.weight_decay;
    acfg.schedule = {cfg.rate, cfg.warmup_ratio, horizon, 0.0f};
    AdamOptimizer opt(head.params(), acfg);

    Rng order_rng = Rng(seed).derive(0xDA7A);
    TrainReport report;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        order_rng.shuffle(perm);
        for (int64_t b0 = 0; b0 < n; b0 += cfg.batch) {
            const int64_t bs = std::min<int64_t>(cfg.batch, n - b0);
            std::vector<int64_t> rows(perm.begin() + b0, perm.begin() + b0 + bs);
            std::vector<int64_t> labels(static_cast<size_t>(bs));
            for (int64_t b = 0; b < bs; ++b) labels[size_t(b)] = all_labels[size_t(rows[size_t(b)])];

            double loss_val;
            try {
                Tensor p = softmax(head.logits(select_rows(emb_all, rows)));
                Tensor picked = gather_per_row(p, labels);
                Tensor loss = scale(mean_all(log(clamp_min(picked, kProbFloor))), -1.0f);
                loss_val = loss.item();
                if (!std::isfinite(loss_val)) throw NonFiniteError("training loss is non-finite");
                opt.zero_grad();
                loss.backward();
            } catch (const NonFiniteError& e) {
                throw DivergenceError(e.what(), step);
            }
            const AdamStepResult r = opt.step();
            if (!r.applied) ++report.skipped_steps;
            report.trace.push_back({step, loss_val, double(r.learning_rate)});
            report.final_loss = loss_val;
            ++step;
        }
    }
    report.train_accuracy = eval_accuracy(frozen_encoder, head, dataset, "train");
    return report;
}

TrainReport finetune_full(BackboneEncoder& encoder, ClassifierHead& head,
                          const Dataset& dataset, const TrainConfig& cfg, uint64_t seed) {
    encoder.unfreeze();
    std::vector<Tensor> trainable = encoder.params();
    for (auto& p : head.params()) trainable.push_back(p);
    return train_loop(encoder, head, trainable, dataset, cfg, seed);
}

double eval_accuracy(const BackboneEncoder& encoder, const ClassifierHead& head,
                     const Dataset& dataset, const std::string& split) {
    const auto idx = dataset.split_indices(split);
    if (idx.empty()) return 0.0;
    int64_t hit = 0;
    TargetModel model{&encoder, &head};
    for (int64_t i : idx)
        if (model.predicted_class(dataset.entries[size_t(i)].image) ==
            dataset.entries[size_t(i)].label)
            ++hit;
    return double(hit) / double(idx.size());
}

} // namespace tve
