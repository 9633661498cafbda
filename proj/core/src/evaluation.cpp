#include "tve/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tve/threading.hpp"

namespace tve {

std::string to_string(FidelityDirection d) {
    return d == FidelityDirection::plus ? "plus" : "minus";
}

double trapezoid_auc(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw ValidationError("AUC needs at least two points");
    double acc = 0.0;
    for (size_t i = 0; i + 1 < points.size(); ++i) {
        const double ds = points[i + 1].first - points[i].first;
        if (ds <= 0.0) throw ValidationError("AUC requires strictly increasing sparsity");
        acc += ds * 0.5 * (points[i].second + points[i + 1].second);
    }
    return acc;
}

std::vector<int64_t> top_k_patches(const ExplanationHeatmap& hm, int64_t k) {
    const int64_t pp = hm.values.numel();
    if (k < 0 || k > pp) throw ValidationError("top-k out of range");
    std::vector<int64_t> order(static_cast<size_t>(pp));
    std::iota(order.begin(), order.end(), 0);
    const auto& v = hm.values.data();
    std::stable_sort(order.begin(), order.end(), [&v](int64_t a, int64_t b) {
        if (v[size_t(a)] != v[size_t(b)]) return v[size_t(a)] > v[size_t(b)];
        return a < b; // row-major tie-break
    });
    order.resize(size_t(k));
    return order;
}

FidelityCurve fidelity_curve(const TargetModel& model, const ExplanationHeatmap& hm,
                             const Tensor& image, int64_t y, FidelityDirection direction) {
    const GridSpec& grid = model.encoder->grid();
    hm.validate(grid);
    const int64_t pp = grid.patch_count();

    const std::vector<int64_t> order = top_k_patches(hm, pp);
    const double f_full = model.predict_masked(image, PatchSubset::full(grid), y);

    FidelityCurve curve;
    curve.direction = direction;
    curve.points.reserve(size_t(pp) + 1);
    PatchSubset selected = PatchSubset::empty(grid); // grows with k: nested by construction
    for (int64_t k = 0; k <= pp; ++k) {
        if (k > 0) selected.set(order[size_t(k - 1)]);
        const PatchSubset& kept =
            direction == FidelityDirection::plus ? complement(selected, grid) : selected;
        double f_masked;
        if (direction == FidelityDirection::plus && k == 0) {
            f_masked = f_full; // nothing removed
        } else if (direction == FidelityDirection::minus && k == pp) {
            f_masked = f_full; // everything kept
        } else {
            f_masked = model.predict_masked(image, kept, y);
        }
        curve.points.emplace_back(double(k) / double(pp), f_full - f_masked);
    }
    curve.auc = trapezoid_auc(curve.points);
    return curve;
}

ExplanationHeatmap heatmap_for_image(const HeatmapSource& src, const TargetModel& target,
                                     const Tensor& image, int64_t y, Rng& rng) {
    if (src.use_random) {
        ExplanationHeatmap hm = random_control(rng, target.encoder->grid());
        hm.label = y;
        return hm;
    }
    const ClassifierHead* head = src.transfer_head ? src.transfer_head : target.head;
    MetaAttribution meta;
    if (src.use_exact_meta) {
        meta = compute_meta_attribution(*target.encoder, image, target.encoder->grid());
    } else if (src.explainer) {
        meta = src.explainer->explain(image);
    } else {
        throw ValidationError("heatmap source has no explainer, exact-meta, or random setting");
    }
    return transfer_explain(meta, *head, y);
}

ModeEvalResult evaluate_mode(const std::string& mode_name, const HeatmapSource& src,
                             const TargetModel& target, const Dataset& dataset,
                             const std::vector<int64_t>& image_indices,
                             FidelityDirection direction, uint64_t seed, int threads) {
    if (image_indices.empty()) throw ValidationError("evaluate_mode: no images");
    ModeEvalResult res;
    res.mode = mode_name;
    res.direction = direction;
    res.per_image.assign(image_indices.size(), 0.0);

    const Rng master(seed);
    parallel_for(int64_t(image_indices.size()), threads, [&](int64_t i) {
        const Tensor& image = dataset.entries[size_t(image_indices[size_t(i)])].image;
        Rng rng = master.derive(uint64_t(i));
        const int64_t y = target.predicted_class(image);
        const ExplanationHeatmap hm = heatmap_for_image(src, target, image, y, rng);
        res.per_image[size_t(i)] = fidelity_curve(target, hm, image, y, direction).auc;
    });

    double mu = 0.0;
    for (double a : res.per_image) mu += a;
    mu /= double(res.per_image.size());
    double var = 0.0;
    for (double a : res.per_image) var += (a - mu) * (a - mu);
    var /= double(res.per_image.size());
    res.auc_mean = mu;
    res.auc_std = std::sqrt(var);
    return res;
}

BoundReport bound_report_from_probs(const std::vector<double>& pg,
                                    const std::vector<double>& pg_hat,
                                    const std::vector<double>& ph,
                                    const std::vector<double>& ph_hat) {
    const size_t n = pg.size();
    if (n == 0 || pg_hat.size() != n || ph.size() != n || ph_hat.size() != n)
        throw ValidationError("bound report needs four equal-length probability arrays");
    BoundReport rep;
    rep.n_triples = int64_t(n);
    double err_acc = 0.0;
    double eps = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (pg[i] <= 0.0 || pg_hat[i] <= 0.0 || ph[i] <= 0.0 || ph_hat[i] <= 0.0)
            throw ValidationError("bound report requires positive probabilities");
        const double r1 = pg_hat[i] / pg[i];
        const double r2 = ph[i] / ph_hat[i];
        eps = std::max(eps, std::abs(r1 - 1.0));
        eps = std::max(eps, std::abs(r2 - 1.0));
        const double phi = std::log(pg[i]) - std::log(ph[i]);
        const double phi_hat = std::log(pg_hat[i]) - std::log(ph_hat[i]);
        err_acc += std::abs(phi_hat - phi);
    }
    rep.epsilon = eps;
    rep.mean_abs_error = err_acc / double(n);
    if (eps >= 1.0) {
        rep.applicable = false;
        rep.bound = 0.0;
        rep.holds = false;
        return rep;
    }
    rep.bound = 2.0 * eps / (1.0 - eps);
    rep.holds = rep.mean_abs_error <= rep.bound + 1e-9;
    return rep;
}

BoundReport check_bound(const BackboneEncoder& encoder, const ExplainerModel* explainer,
                        const ClassifierHead& head, const Dataset& dataset,
                        const std::vector<int64_t>& image_indices) {
    if (image_indices.empty()) throw ValidationError("check_bound: no images");
    const GridSpec& grid = encoder.grid();
    const int64_t pp = grid.patch_count();
    const int64_t K = head.n_classes();

    std::vector<double> pg, pg_hat, ph, ph_hat;
    pg.reserve(size_t(int64_t(image_indices.size()) * pp * K));
    auto clamp01 = [](float v) {
        return std::min(1.0, std::max(double(kProbFloor), double(v)));
    };
    for (int64_t idx : image_indices) {
        const Tensor& image = dataset.entries[size_t(idx)].image;
        const MetaAttribution exact = compute_meta_attribution(encoder, image, grid);
        const MetaAttribution pred = explainer ? explainer->explain(image) : exact;
        const Tensor probs_g = head.probs(exact.g_rows());
        const Tensor probs_h = head.probs(exact.h_rows());
        const Tensor probs_gh = head.probs(pred.g_rows());
        const Tensor probs_hh = head.probs(pred.h_rows());
        for (int64_t z = 0; z < pp; ++z) {
            for (int64_t y = 0; y < K; ++y) {
                pg.push_back(clamp01(probs_g.data()[size_t(z * K + y)]));
                ph.push_back(clamp01(probs_h.data()[size_t(z * K + y)]));
                pg_hat.push_back(clamp01(probs_gh.data()[size_t(z * K + y)]));
                ph_hat.push_back(clamp01(probs_hh.data()[size_t(z * K + y)]));
            }
        }
    }
    return bound_report_from_probs(pg, pg_hat, ph, ph_hat);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y, bool& defined) {
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("pearson needs two equal-length series of >= 2 points");
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        defined = false;
        return 0.0;
    }
    defined = true;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&v](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * (double(i) + double(j)) + 1.0; // mean rank for ties
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    bool defined = false;
    const double r = pearson(ranks_of(x), ranks_of(y), defined);
    if (!defined) throw ValidationError("spearman undefined: constant ranks");
    return r;
}

CorrelationResult correlation_study(const TargetModel& model, const Dataset& dataset,
                                    const std::vector<int64_t>& image_indices,
                                    int64_t patches_per_image, int64_t n_samples, uint64_t seed) {
    if (image_indices.empty()) throw ValidationError("correlation_study: no images");
    const GridSpec& grid = model.encoder->grid();
    const int64_t pp = grid.patch_count();
    if (patches_per_image < 1 || patches_per_image > pp)
        throw ValidationError("correlation_study: patches_per_image out of range");

    CorrelationResult res;
    const Rng master(seed);
    std::vector<int64_t> zperm(static_cast<size_t>(pp));
    for (size_t i = 0; i < image_indices.size(); ++i) {
        const int64_t idx = image_indices[i];
        const Tensor& image = dataset.entries[size_t(idx)].image;
        Rng rng = master.derive(uint64_t(i));
        const int64_t y = model.predicted_class(image);
        for (int64_t z = 0; z < pp; ++z) zperm[size_t(z)] = z;
        for (int64_t s = 0; s < patches_per_image; ++s) {
            const int64_t j = s + int64_t(rng.uniform_int(uint64_t(pp - s)));
            std::swap(zperm[size_t(s)], zperm[size_t(j)]);
            const PatchId z = patch_from_bit(zperm[size_t(s)], grid);
            ScatterPoint pt;
            pt.image_index = idx;
            pt.patch_bit = zperm[size_t(s)];
            pt.label = y;
            pt.exact_value = exact_attribution(model, image, z, y);
            pt.mc_value = mc_attribution(model, image, z, y, n_samples, rng);
            res.points.push_back(pt);
        }
    }
    res.n_pairs = int64_t(res.points.size());
    std::vector<double> ex, mc;
    ex.reserve(res.points.size());
    mc.reserve(res.points.size());
    for (const auto& p : res.points) {
        ex.push_back(p.exact_value);
        mc.push_back(p.mc_value);
    }
    res.r = pearson(mc, ex, res.defined);
    return res;
}

std::string to_string(ThroughputMethod m) {
    switch (m) {
        case ThroughputMethod::tve: return "TVE";
        case ThroughputMethod::exact: return "exact";
        case ThroughputMethod::mc16: return "mc16";
    }
    throw ValidationError("bad throughput method");
}

ThroughputResult bench_throughput(ThroughputMethod method, const TargetModel& model,
                                  const ExplainerModel* explainer, const std::string& model_tag,
                                  const std::vector<Tensor>& images, int64_t n_images,
                                  int repeats, uint64_t seed) {
    if (n_images <= 0) throw ValidationError("bench_throughput: n_images must be positive");
    if (images.empty()) throw ValidationError("bench_throughput: no images supplied");
    if (repeats < 1) throw ValidationError("bench_throughput: repeats must be >= 1");
    if (method == ThroughputMethod::tve && !explainer)
        throw ValidationError("bench_throughput: TVE method needs an explainer");

    const GridSpec& grid = model.encoder->grid();
    const int64_t pp = grid.patch_count();

    auto run_one = [&](const Tensor& image, Rng& rng) {
        const int64_t y = 0; // fixed class: throughput is class-independent
        switch (method) {
            case ThroughputMethod::tve: {
                const MetaAttribution meta = explainer->explain(image);
                (void)transfer_explain(meta, *model.head, y);
                break;
            }
            case ThroughputMethod::exact: {
                const MetaAttribution meta = compute_meta_attribution(*model.encoder, image, grid);
                (void)transfer_explain(meta, *model.head, y);
                break;
            }
            case ThroughputMethod::mc16: {
                for (int64_t zbit = 0; zbit < pp; ++zbit)
                    (void)mc_attribution(model, image, patch_from_bit(zbit, grid), y, 16, rng);
                break;
            }
        }
    };

    auto run_pass = [&]() {
        Rng rng(seed);
        for (int64_t i = 0; i < n_images; ++i) run_one(images[size_t(i % images.size())], rng);
    };

    run_pass(); // warm

    std::vector<double> secs;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        run_pass();
        const auto t1 = std::chrono::steady_clock::now();
        secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(secs.begin(), secs.end());
    const double median = secs[secs.size() / 2];

    ThroughputResult res;
    res.method = to_string(method);
    res.model_tag = model_tag;
    res.n_images = n_images;
    res.seconds = median;
    res.images_per_second = double(n_images) / median;
    res.model_evals_per_image = method == ThroughputMethod::tve ? 0
                                : method == ThroughputMethod::exact ? 2 * pp
                                                                    : 2 * 16 * pp;
    return res;
}

} // namespace tve
