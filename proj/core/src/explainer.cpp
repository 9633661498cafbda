#include "tve/explainer.hpp"

#include <cmath>
#include <unordered_map>

#include "tve/checkpoint.hpp"

namespace tve {
namespace {

Tensor init_linear(Shape dims, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const double s = std::sqrt(2.0 / double(fan_in + fan_out));
    std::vector<float> w(static_cast<size_t>(shape_numel(dims)));
    for (float& v : w) v = float(rng.normal(0.0, s));
    return Tensor::from_data(std::move(dims), std::move(w), true);
}

Tensor deep_copy(const Tensor& t) {
    return Tensor::from_data(t.dims(), t.data(), t.requires_grad());
}

} // namespace

ExplainerModel::ExplainerModel(const GridSpec& grid, ExplainerConfig cfg)
    : grid_(grid), cfg_(cfg) {
    grid_.validate();
    if (cfg_.feature_dim < 1 || cfg_.embed_dim < 1 || cfg_.n_trunk_blocks < 0)
        throw ValidationError("explainer config out of range");
    if (cfg_.n_heads < 2)
        throw ValidationError("explainer needs at least 2 head blocks (first skipless, last "
                              "activation-free)");
}

ExplainerModel::ExplainerModel(const GridSpec& grid, ExplainerConfig cfg, Rng& rng)
    : ExplainerModel(grid, cfg) {
    const int64_t pp = grid_.patch_count();
    const int64_t f = grid_.patch_side * grid_.patch_side * 3;
    const int64_t de = cfg_.feature_dim;
    embed_w_ = init_linear({pp, f, de}, f, de, rng);
    embed_b_ = Tensor::zeros({pp, de}, true);
    for (int64_t i = 0; i < cfg_.n_trunk_blocks; ++i) trunk_.push_back(FfnBlock::init(de, rng));
    for (int64_t i = 0; i < cfg_.n_heads; ++i) {
        const bool last = i + 1 == cfg_.n_heads;
        const int64_t out = last ? 2 * cfg_.embed_dim : de;
        HeadBlock h;
        h.fc_w = init_linear({de, out}, de, out, rng);
        h.fc_b = Tensor::zeros({out}, true);
        if (!last) {
            h.ln_gain = Tensor::full({out}, 1.0f, true);
            h.ln_bias = Tensor::zeros({out}, true);
        }
        heads_.push_back(std::move(h));
    }
}

Tensor ExplainerModel::forward_rows(const Tensor& patch_rows) const {
    const int64_t pp = grid_.patch_count();
    Tensor x = per_position_embed(patch_rows, embed_w_, embed_b_);
    // Every patch row sees the pooled image context; predicted h[z] depends on
    // content far outside patch z.
    Tensor ctx = repeat_interleave_rows(mean_pool_groups(x, pp), pp);
    x = add(x, ctx);
    for (const auto& b : trunk_) x = b.forward(x);
    for (size_t i = 0; i < heads_.size(); ++i) {
        const auto& h = heads_[i];
        const bool last = i + 1 == heads_.size();
        Tensor y = add(matmul(x, h.fc_w), h.fc_b);
        // Last block is the raw regression output: no norm, no activation, no skip.
        if (!last) {
            y = gelu(layer_norm(y, h.ln_gain, h.ln_bias));
            x = i > 0 ? add(x, y) : y;
        } else {
            x = y;
        }
    }
    return x;
}

MetaAttribution ExplainerModel::explain(const Tensor& image) const {
    const Tensor out = forward_rows(patchify(image, grid_));
    const int64_t P = grid_.patches_per_side;
    const int64_t D = cfg_.embed_dim;
    std::vector<float> g(static_cast<size_t>(P * P * D)), h(static_cast<size_t>(P * P * D));
    const float* O = out.data().data();
    for (int64_t z = 0; z < P * P; ++z) {
        for (int64_t d = 0; d < D; ++d) {
            g[size_t(z * D + d)] = O[z * 2 * D + d];
            h[size_t(z * D + d)] = O[z * 2 * D + D + d];
        }
    }
    MetaAttribution meta;
    meta.g = Tensor::from_data({P, P, D}, std::move(g));
    meta.h = Tensor::from_data({P, P, D}, std::move(h));
    meta.grid = grid_;
    meta.source = MetaSource::predicted;
    return meta;
}

std::vector<NamedParam> ExplainerModel::named_params() const {
    std::vector<NamedParam> out;
    out.push_back({"trunk.embed.weight", embed_w_});
    out.push_back({"trunk.embed.bias", embed_b_});
    for (size_t i = 0; i < trunk_.size(); ++i)
        trunk_[i].collect("trunk.block" + std::to_string(i), out);
    for (size_t i = 0; i < heads_.size(); ++i) {
        const std::string pre = "head" + std::to_string(i);
        out.push_back({pre + ".fc.weight", heads_[i].fc_w});
        out.push_back({pre + ".fc.bias", heads_[i].fc_b});
        if (heads_[i].ln_gain.defined()) {
            out.push_back({pre + ".ln.gain", heads_[i].ln_gain});
            out.push_back({pre + ".ln.bias", heads_[i].ln_bias});
        }
    }
    return out;
}

std::vector<Tensor> ExplainerModel::params() const {
    std::vector<Tensor> out;
    for (auto& p : named_params()) out.push_back(p.tensor);
    return out;
}

ExplainerModel ExplainerModel::clone() const {
    ExplainerModel c(grid_, cfg_);
    c.embed_w_ = deep_copy(embed_w_);
    c.embed_b_ = deep_copy(embed_b_);
    for (const auto& b : trunk_) {
        FfnBlock nb;
        nb.fc1_w = deep_copy(b.fc1_w);
        nb.fc1_b = deep_copy(b.fc1_b);
        nb.fc2_w = deep_copy(b.fc2_w);
        nb.fc2_b = deep_copy(b.fc2_b);
        nb.ln_gain = deep_copy(b.ln_gain);
        nb.ln_bias = deep_copy(b.ln_bias);
        c.trunk_.push_back(std::move(nb));
    }
    for (const auto& h : heads_) {
        HeadBlock nh;
        nh.fc_w = deep_copy(h.fc_w);
        nh.fc_b = deep_copy(h.fc_b);
        if (h.ln_gain.defined()) {
            nh.ln_gain = deep_copy(h.ln_gain);
            nh.ln_bias = deep_copy(h.ln_bias);
        }
        c.heads_.push_back(std::move(nh));
    }
    return c;
}

ExplainerModel ExplainerModel::from_params(const GridSpec& grid, ExplainerConfig cfg,
                                           const std::vector<NamedParam>& params) {
    ExplainerModel e(grid, cfg);
    std::unordered_map<std::string, Tensor> m;
    for (const auto& p : params) m.emplace(p.name, p.tensor);
    auto take = [&m](const std::string& name, const Shape& dims) {
        auto it = m.find(name);
        if (it == m.end()) throw ValidationError("checkpoint missing parameter '" + name + "'");
        if (it->second.dims() != dims)
            throw ValidationError("parameter '" + name + "' has shape " +
                                  shape_str(it->second.dims()) + ", expected " + shape_str(dims));
        Tensor t = it->second;
        t.set_requires_grad(true);
        m.erase(it);
        return t;
    };
    const int64_t pp = grid.patch_count();
    const int64_t f = grid.patch_side * grid.patch_side * 3;
    const int64_t de = cfg.feature_dim;
    e.embed_w_ = take("trunk.embed.weight", {pp, f, de});
    e.embed_b_ = take("trunk.embed.bias", {pp, de});
    for (int64_t i = 0; i < cfg.n_trunk_blocks; ++i) {
        const std::string pre = "trunk.block" + std::to_string(i);
        FfnBlock b;
        b.fc1_w = take(pre + ".fc1.weight", {de, de});
        b.fc1_b = take(pre + ".fc1.bias", {de});
        b.fc2_w = take(pre + ".fc2.weight", {de, de});
        b.fc2_b = take(pre + ".fc2.bias", {de});
        b.ln_gain = take(pre + ".ln.gain", {de});
        b.ln_bias = take(pre + ".ln.bias", {de});
        e.trunk_.push_back(std::move(b));
    }
    for (int64_t i = 0; i < cfg.n_heads; ++i) {
        const std::string pre = "head" + std::to_string(i);
        const bool last = i + 1 == cfg.n_heads;
        const int64_t out = last ? 2 * cfg.embed_dim : de;
        HeadBlock h;
        h.fc_w = take(pre + ".fc.weight", {de, out});
        h.fc_b = take(pre + ".fc.bias", {out});
        if (!last) {
            h.ln_gain = take(pre + ".ln.gain", {out});
            h.ln_bias = take(pre + ".ln.bias", {out});
        }
        e.heads_.push_back(std::move(h));
    }
    if (!m.empty())
        throw ValidationError("checkpoint has unexpected parameter '" + m.begin()->first + "'");
    return e;
}

namespace {

// Meta-attribution targets for one (image, patch); plain data, no graph.
void targets_for(const BackboneEncoder& encoder, const Tensor& image, int64_t zbit,
                 std::vector<float>& g_out, std::vector<float>& h_out) {
    const GridSpec& grid = encoder.grid();
    const PatchId z = patch_from_bit(zbit, grid);
    const PatchSubset near = neighbors(z, grid);
    g_out = encoder.encode_masked(image, near).data();
    h_out = encoder.encode_masked(image, complement(near, grid)).data();
}

} // namespace

Tensor pretrain_loss(const ExplainerModel& explainer, const BackboneEncoder& encoder,
                     const Tensor& image, const std::vector<int64_t>& sampled_patches) {
    if (sampled_patches.empty()) throw ValidationError("pretrain_loss: no sampled patches");
    if (!(explainer.grid() == encoder.grid()))
        throw ValidationError("explainer and encoder grids differ");
    const int64_t D = explainer.config().embed_dim;
    if (D != encoder.embed_dim())
        throw ValidationError("explainer D does not match encoder D");

    const Tensor out = explainer.forward_rows(patchify(image, explainer.grid()));
    const Tensor sel = select_rows(out, sampled_patches);
    const Tensor g_hat = slice_cols(sel, 0, D);
    const Tensor h_hat = slice_cols(sel, D, 2 * D);

    const int64_t k = int64_t(sampled_patches.size());
    std::vector<float> gt(static_cast<size_t>(k * D)), ht(static_cast<size_t>(k * D));
    std::vector<float> gz, hz;
    for (int64_t r = 0; r < k; ++r) {
        targets_for(encoder, image, sampled_patches[size_t(r)], gz, hz);
        std::copy(gz.begin(), gz.end(), gt.begin() + r * D);
        std::copy(hz.begin(), hz.end(), ht.begin() + r * D);
    }
    const Tensor g_target = Tensor::from_data({k, D}, std::move(gt));
    const Tensor h_target = Tensor::from_data({k, D}, std::move(ht));

    // mse averages over k*D elements; scaling by D recovers the mean over
    // patches of the squared L2 norms.
    return scale(add(mse(g_hat, g_target), mse(h_hat, h_target)), float(D));
}

TrainReport train_explainer(ExplainerModel& explainer, const BackboneEncoder& frozen_encoder,
                            const Dataset& dataset, const ExplainerTrainConfig& cfg,
                            uint64_t seed, const CheckpointHook& hook) {
    dataset.validate();
    if (!frozen_encoder.frozen())
        throw ValidationError("train_explainer requires a frozen encoder");
    if (!(explainer.grid() == frozen_encoder.grid()))
        throw ValidationError("explainer and encoder grids differ");
    const GridSpec& grid = explainer.grid();
    const int64_t pp = grid.patch_count();
    if (cfg.steps < 0 || cfg.batch < 1 || cfg.patches_per_image < 1 ||
        cfg.patches_per_image > pp)
        throw ValidationError("explainer train config out of range");
    const int64_t D = explainer.config().embed_dim;
    if (D != frozen_encoder.embed_dim())
        throw ValidationError("explainer D does not match encoder D");

    const auto train_idx = dataset.split_indices("train");
    if (train_idx.empty()) throw ValidationError("dataset has no train split");
    const int64_t n = int64_t(train_idx.size());
    const int64_t f = grid.patch_side * grid.patch_side * 3;

    // Patch rows per image, built lazily (an overfit run touches few images).
    std::vector<Tensor> rows(dataset.entries.size());
    auto rows_of = [&](int64_t idx) -> const Tensor& {
        Tensor& r = rows[size_t(idx)];
        if (!r.defined()) r = patchify(dataset.entries[size_t(idx)].image, grid);
        return r;
    };

    std::unordered_map<uint64_t, std::pair<std::vector<float>, std::vector<float>>> cache;
    std::pair<std::vector<float>, std::vector<float>> scratch;
    auto target_of = [&](int64_t idx, int64_t zbit)
        -> const std::pair<std::vector<float>, std::vector<float>>& {
        if (!cfg.cache_targets) {
            targets_for(frozen_encoder, dataset.entries[size_t(idx)].image, zbit, scratch.first,
                        scratch.second);
            return scratch;
        }
        const uint64_t key = uint64_t(idx) * uint64_t(pp) + uint64_t(zbit);
        auto it = cache.find(key);
        if (it == cache.end()) {
            targets_for(frozen_encoder, dataset.entries[size_t(idx)].image, zbit, scratch.first,
                        scratch.second);
            it = cache.emplace(key, scratch).first;
        }
        return it->second;
    };

    AdamConfig acfg;
    acfg.weight_decay = cfg.weight_decay;
    acfg.schedule = {cfg.rate, cfg.warmup_ratio, std::max<int64_t>(1, cfg.steps), 0.0f};
    AdamOptimizer opt(explainer.params(), acfg);

    Rng rng = Rng(seed).derive(0x5A3);
    std::vector<int64_t> zperm(static_cast<size_t>(pp));
    TrainReport report;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        const int64_t bs = cfg.batch;
        std::vector<float> stacked(static_cast<size_t>(bs * pp * f));
        std::vector<int64_t> sel_rows;
        sel_rows.reserve(size_t(bs * cfg.patches_per_image));
        std::vector<float> gt(static_cast<size_t>(bs * cfg.patches_per_image * D));
        std::vector<float> ht(static_cast<size_t>(bs * cfg.patches_per_image * D));

        for (int64_t b = 0; b < bs; ++b) {
            const int64_t idx = train_idx[size_t(rng.uniform_int(uint64_t(n)))];
            const auto& r = rows_of(idx).data();
            std::copy(r.begin(), r.end(), stacked.begin() + b * pp * f);
            for (int64_t z = 0; z < pp; ++z) zperm[size_t(z)] = z;
            for (int64_t z = 0; z < cfg.patches_per_image; ++z) {
                const int64_t j = z + int64_t(rng.uniform_int(uint64_t(pp - z)));
                std::swap(zperm[size_t(z)], zperm[size_t(j)]);
                const int64_t zbit = zperm[size_t(z)];
                sel_rows.push_back(b * pp + zbit);
                const auto& tgt = target_of(idx, zbit);
                const int64_t row = int64_t(sel_rows.size()) - 1;
                std::copy(tgt.first.begin(), tgt.first.end(), gt.begin() + row * D);
                std::copy(tgt.second.begin(), tgt.second.end(), ht.begin() + row * D);
            }
        }

        double loss_val;
        try {
            const Tensor out =
                explainer.forward_rows(Tensor::from_data({bs * pp, f}, std::move(stacked)));
            const Tensor sel = select_rows(out, sel_rows);
            const Tensor g_hat = slice_cols(sel, 0, D);
            const Tensor h_hat = slice_cols(sel, D, 2 * D);
            const int64_t k = int64_t(sel_rows.size());
            Tensor loss =
                scale(add(mse(g_hat, Tensor::from_data({k, D}, std::move(gt))),
                          mse(h_hat, Tensor::from_data({k, D}, std::move(ht)))),
                      float(D));
            loss_val = loss.item();
            if (!std::isfinite(loss_val)) throw NonFiniteError("explainer loss is non-finite");
            opt.zero_grad();
            loss.backward();
        } catch (const NonFiniteError& e) {
            throw DivergenceError(e.what(), step);
        }
        const AdamStepResult r = opt.step();
        if (!r.applied) ++report.skipped_steps;
        report.trace.push_back({step, loss_val, double(r.learning_rate)});
        report.final_loss = loss_val;
        if (hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            hook(step + 1, explainer);
    }
    if (hook && cfg.steps > 0 &&
        !(cfg.checkpoint_every > 0 && cfg.steps % cfg.checkpoint_every == 0))
        hook(cfg.steps, explainer);
    return report;
}

double eval_explainer_loss(const ExplainerModel& explainer, const BackboneEncoder& encoder,
                           const Dataset& dataset, const std::vector<int64_t>& image_indices) {
    if (image_indices.empty()) throw ValidationError("eval_explainer_loss: no images");
    const int64_t pp = explainer.grid().patch_count();
    std::vector<int64_t> all(static_cast<size_t>(pp));
    for (int64_t z = 0; z < pp; ++z) all[size_t(z)] = z;
    double acc = 0.0;
    for (int64_t idx : image_indices) {
        const Tensor loss =
            pretrain_loss(explainer, encoder, dataset.entries[size_t(idx)].image, all);
        acc += double(loss.item());
    }
    return acc / double(image_indices.size());
}

void save_explainer(const std::filesystem::path& dir, const ExplainerModel& e, uint64_t seed) {
    CheckpointMeta meta;
    meta.kind = "explainer";
    meta.seed = seed;
    meta.grid = e.grid();
    meta.arch = {{"d_e", e.config().feature_dim},
                 {"n_heads", e.config().n_heads},
                 {"D", e.config().embed_dim},
                 {"trunk_blocks", e.config().n_trunk_blocks}};
    save_checkpoint(dir, meta, e.named_params());
}

ExplainerModel load_explainer(const std::filesystem::path& dir) {
    LoadedCheckpoint ck = load_checkpoint(dir);
    if (ck.meta.kind != "explainer")
        throw ValidationError(dir.string() + " holds a '" + ck.meta.kind +
                              "' checkpoint, expected explainer");
    ExplainerConfig cfg;
    cfg.feature_dim = ck.meta.arch.at("d_e").get<int64_t>();
    cfg.n_heads = ck.meta.arch.at("n_heads").get<int64_t>();
    cfg.embed_dim = ck.meta.arch.at("D").get<int64_t>();
    cfg.n_trunk_blocks = ck.meta.arch.at("trunk_blocks").get<int64_t>();
    return ExplainerModel::from_params(ck.meta.grid, cfg, ck.params);
}

} // namespace tve
