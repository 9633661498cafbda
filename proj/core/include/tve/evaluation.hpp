#pragma once

#include <optional>

#include "tve/explainer.hpp"

namespace tve {

enum class FidelityDirection { plus, minus };

std::string to_string(FidelityDirection d);

// Fidelity values sampled on the dense sparsity grid k = 0..P^2 with the
// trapezoidal area under the curve.
struct FidelityCurve {
    std::vector<std::pair<double, double>> points; // (sparsity, fidelity)
    FidelityDirection direction = FidelityDirection::plus;
    double auc = 0.0;
};

double trapezoid_auc(const std::vector<std::pair<double, double>>& points);

// Top-k patch bits by heatmap value, ties broken by row-major patch order.
// Selections are nested: top_k(k) is a prefix of top_k(k+1).
std::vector<int64_t> top_k_patches(const ExplanationHeatmap& hm, int64_t k);

// Sweeps k = 0..P^2. plus: f(full) - f(all but top-k); minus: f(full) - f(top-k).
FidelityCurve fidelity_curve(const TargetModel& model, const ExplanationHeatmap& hm,
                             const Tensor& image, int64_t y, FidelityDirection direction);

// How a mode sources its heatmaps. The target model is what fidelity is
// measured against; the transfer head is what turns meta-attribution into a
// task-aligned heatmap (it may differ from target.head, e.g. a generic head).
struct HeatmapSource {
    const ExplainerModel* explainer = nullptr;  // amortized modes
    bool use_exact_meta = false;                // exact meta via target encoder
    bool use_random = false;                    // uniform control
    const ClassifierHead* transfer_head = nullptr;
};

ExplanationHeatmap heatmap_for_image(const HeatmapSource& src, const TargetModel& target,
                                     const Tensor& image, int64_t y, Rng& rng);

struct ModeEvalResult {
    std::string mode;
    FidelityDirection direction;
    double auc_mean = 0.0;
    double auc_std = 0.0; // population std over images
    std::vector<double> per_image;
};

// Per-image fidelity AUCs for one mode and direction over the given images.
// Class y is the target model's predicted class. Per-image RNG streams derive
// from seed + image position, so thread count cannot change results.
ModeEvalResult evaluate_mode(const std::string& mode_name, const HeatmapSource& src,
                             const TargetModel& target, const Dataset& dataset,
                             const std::vector<int64_t>& image_indices,
                             FidelityDirection direction, uint64_t seed, int threads = 1);

// Executable form of the explanation-error bound: epsilon is the measured
// max |ratio - 1| over both probability families, the bound is 2e/(1-e), and
// holds compares the mean |phi_hat - phi| against it. epsilon >= 1 marks the
// report inapplicable rather than failed.
struct BoundReport {
    double epsilon = 0.0;
    double mean_abs_error = 0.0;
    double bound = 0.0;
    bool holds = false;
    bool applicable = true;
    int64_t n_triples = 0;
};

// Pure form over parallel probability arrays (already clamped): per triple,
// phi = log(pg) - log(ph) and phi_hat = log(pg_hat) - log(ph_hat).
BoundReport bound_report_from_probs(const std::vector<double>& pg,
                                    const std::vector<double>& pg_hat,
                                    const std::vector<double>& ph,
                                    const std::vector<double>& ph_hat);

// Collects the four families over (image, patch, class) triples with exact
// meta from the encoder and predicted meta from the explainer (or injected
// exact meta when explainer is null).
BoundReport check_bound(const BackboneEncoder& encoder, const ExplainerModel* explainer,
                        const ClassifierHead& head, const Dataset& dataset,
                        const std::vector<int64_t>& image_indices);

struct ScatterPoint {
    int64_t image_index;
    int64_t patch_bit;
    int64_t label;
    double exact_value;
    double mc_value;
};

struct CorrelationResult {
    double r = 0.0;
    bool defined = false;
    int64_t n_pairs = 0;
    std::vector<ScatterPoint> points;
};

// Pairs two-state attributions with n_samples-subset MC estimates over the
// given images; reports Pearson r (undefined on degenerate variance).
CorrelationResult correlation_study(const TargetModel& model, const Dataset& dataset,
                                    const std::vector<int64_t>& image_indices,
                                    int64_t patches_per_image, int64_t n_samples, uint64_t seed);

double pearson(const std::vector<double>& x, const std::vector<double>& y, bool& defined);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

enum class ThroughputMethod { tve, exact, mc16 };

std::string to_string(ThroughputMethod m);

struct ThroughputResult {
    std::string method;
    std::string model_tag;
    int64_t n_images = 0;
    double seconds = 0.0;        // median over repeats
    double images_per_second = 0.0;
    int64_t model_evals_per_image = 0; // forward-pass count through f_t
};

// Wall-clock heatmap throughput, single-threaded, one warm pass then
// `repeats` timed passes with the median reported.
ThroughputResult bench_throughput(ThroughputMethod method, const TargetModel& model,
                                  const ExplainerModel* explainer, const std::string& model_tag,
                                  const std::vector<Tensor>& images, int64_t n_images,
                                  int repeats = 3, uint64_t seed = 0);

} // namespace tve
