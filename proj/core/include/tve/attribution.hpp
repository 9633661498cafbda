#pragma once

#include <string>

#include "tve/models.hpp"

namespace tve {

enum class MetaSource { exact, predicted };

// Per-patch embedding pair (g, h): g[z] encodes the neighbor-only masked
// image, h[z] the complement-masked image. g and h are [P, P, D] row-major.
struct MetaAttribution {
    Tensor g;
    Tensor h;
    GridSpec grid;
    MetaSource source = MetaSource::exact;

    void validate() const;
    // Row views [P*P, D] sharing the underlying data.
    Tensor g_rows() const;
    Tensor h_rows() const;
};

enum class HeatmapProvenance { exact, transferred, amortized, mc_oracle, random_control };

std::string to_string(HeatmapProvenance p);
HeatmapProvenance heatmap_provenance_from_string(const std::string& s);

// P x P patch attribution scores for one class.
struct ExplanationHeatmap {
    Tensor values; // [P, P]
    int64_t label = 0;
    HeatmapProvenance provenance = HeatmapProvenance::exact;

    void validate(const GridSpec& grid) const;
    double at(int64_t bit) const { return values.data()[size_t(bit)]; }
};

// Two-state attribution: log f(N(z)) - log f(complement of N(z)) on class y.
double exact_attribution(const TargetModel& model, const Tensor& image, const PatchId& z,
                         int64_t y);

// Monte-Carlo estimate of the subset expectation: mean over sampled
// B within Z \ N(z) of [-log f(B) + log f(N(z) u B)]. Retains the constant
// terms the two-state form drops, so compare by correlation, not equality.
double mc_attribution(const TargetModel& model, const Tensor& image, const PatchId& z, int64_t y,
                      int64_t n_samples, Rng& rng);

// Same estimate over an explicit list of background subsets (an exhaustive
// enumeration makes this the exact subset mean).
double mc_attribution_over(const TargetModel& model, const Tensor& image, const PatchId& z,
                           int64_t y, const std::vector<PatchSubset>& backgrounds);

// Fills g[z], h[z] for every patch via 2*P*P encoder calls on masked inputs.
MetaAttribution compute_meta_attribution(const BackboneEncoder& encoder, const Tensor& image,
                                         const GridSpec& grid);

// The transfer rule: values[z] = log H(g[z])[y] - log H(h[z])[y], evaluated
// for all patches in one batched head pass. Provenance follows meta.source.
ExplanationHeatmap transfer_explain(const MetaAttribution& meta, const ClassifierHead& head,
                                    int64_t y);

// i.i.d. uniform[-1, 1] control heatmap.
ExplanationHeatmap random_control(Rng& rng, const GridSpec& grid);

} // namespace tve
