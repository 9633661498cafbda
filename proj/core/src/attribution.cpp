#include "tve/attribution.hpp"

#include <cmath>

namespace tve {

void MetaAttribution::validate() const {
    grid.validate();
    const int64_t P = grid.patches_per_side;
    if (!g.defined() || !h.defined()) throw ValidationError("meta-attribution tensors undefined");
    if (g.dims().size() != 3 || g.dims()[0] != P || g.dims()[1] != P)
        throw ValidationError("meta g has shape " + shape_str(g.dims()) + ", expected [P,P,D]");
    if (g.dims() != h.dims())
        throw ValidationError("meta g/h shape mismatch " + shape_str(g.dims()) + " vs " +
                              shape_str(h.dims()));
}

Tensor MetaAttribution::g_rows() const {
    return Tensor::from_data({grid.patch_count(), g.dims()[2]}, g.data());
}

Tensor MetaAttribution::h_rows() const {
    return Tensor::from_data({grid.patch_count(), h.dims()[2]}, h.data());
}

std::string to_string(HeatmapProvenance p) {
    switch (p) {
        case HeatmapProvenance::exact: return "exact";
        case HeatmapProvenance::transferred: return "transferred";
        case HeatmapProvenance::amortized: return "amortized";
        case HeatmapProvenance::mc_oracle: return "mc_oracle";
        case HeatmapProvenance::random_control: return "random_control";
    }
    throw ValidationError("bad provenance enum");
}

HeatmapProvenance heatmap_provenance_from_string(const std::string& s) {
    if (s == "exact") return HeatmapProvenance::exact;
    if (s == "transferred") return HeatmapProvenance::transferred;
    if (s == "amortized") return HeatmapProvenance::amortized;
    if (s == "mc_oracle") return HeatmapProvenance::mc_oracle;
    if (s == "random_control") return HeatmapProvenance::random_control;
    throw ValidationError("unknown heatmap provenance '" + s + "'");
}

void ExplanationHeatmap::validate(const GridSpec& grid) const {
    const int64_t P = grid.patches_per_side;
    if (!values.defined() || values.dims() != Shape{P, P})
        throw ValidationError("heatmap shape does not match grid");
    check_finite(values.data(), "heatmap");
}

double exact_attribution(const TargetModel& model, const Tensor& image, const PatchId& z,
                         int64_t y) {
    const GridSpec& grid = model.encoder->grid();
    const PatchSubset near = neighbors(z, grid);
    const PatchSubset far = complement(near, grid);
    const double p1 = model.predict_masked(image, near, y);
    const double p2 = model.predict_masked(image, far, y);
    return std::log(p1) - std::log(p2);
}

double mc_attribution_over(const TargetModel& model, const Tensor& image, const PatchId& z,
                           int64_t y, const std::vector<PatchSubset>& backgrounds) {
    if (backgrounds.empty()) throw ValidationError("mc_attribution: no background subsets");
    const GridSpec& grid = model.encoder->grid();
    const PatchSubset near = neighbors(z, grid);
    double acc = 0.0;
    for (const PatchSubset& b : backgrounds) {
        const double pb = model.predict_masked(image, b, y);
        const double pnb = model.predict_masked(image, near.unite(b), y);
        acc += std::log(pnb) - std::log(pb);
    }
    return acc / double(backgrounds.size());
}

double mc_attribution(const TargetModel& model, const Tensor& image, const PatchId& z, int64_t y,
                      int64_t n_samples, Rng& rng) {
    if (n_samples < 1) throw ValidationError("mc_attribution: n_samples must be >= 1");
    const GridSpec& grid = model.encoder->grid();
    const PatchSubset far = complement(neighbors(z, grid), grid);
    std::vector<PatchSubset> backgrounds;
    backgrounds.reserve(size_t(n_samples));
    for (int64_t s = 0; s < n_samples; ++s) backgrounds.push_back(sample_subset(rng, far));
    return mc_attribution_over(model, image, z, y, backgrounds);
}

MetaAttribution compute_meta_attribution(const BackboneEncoder& encoder, const Tensor& image,
                                         const GridSpec& grid) {
    if (!(encoder.grid() == grid)) throw ValidationError("encoder grid differs from requested grid");
    const int64_t P = grid.patches_per_side;
    const int64_t D = encoder.embed_dim();
    std::vector<float> gbuf(static_cast<size_t>(P * P * D));
    std::vector<float> hbuf(static_cast<size_t>(P * P * D));
    for (int64_t bit = 0; bit < P * P; ++bit) {
        const PatchId z = patch_from_bit(bit, grid);
        const PatchSubset near = neighbors(z, grid);
        const Tensor ge = encoder.encode_masked(image, near);
        const Tensor he = encoder.encode_masked(image, complement(near, grid));
        std::copy(ge.data().begin(), ge.data().end(), gbuf.begin() + bit * D);
        std::copy(he.data().begin(), he.data().end(), hbuf.begin() + bit * D);
    }
    MetaAttribution meta;
    meta.g = Tensor::from_data({P, P, D}, std::move(gbuf));
    meta.h = Tensor::from_data({P, P, D}, std::move(hbuf));
    meta.grid = grid;
    meta.source = MetaSource::exact;
    meta.validate();
    return meta;
}

ExplanationHeatmap transfer_explain(const MetaAttribution& meta, const ClassifierHead& head,
                                    int64_t y) {
    meta.validate();
    const int64_t D = meta.g.dims()[2];
    if (D != head.embed_dim())
        throw ValidationError("meta D=" + std::to_string(D) + " does not match head D=" +
                              std::to_string(head.embed_dim()));
    if (y < 0 || y >= head.n_classes())
        throw ValidationError("class " + std::to_string(y) + " outside " +
                              std::to_string(head.n_classes()) + " classes");
    const int64_t P = meta.grid.patches_per_side;
    const int64_t pp = P * P;

    // One batched pass: [2*P*P, D] stacked (g rows then h rows).
    std::vector<float> stacked(static_cast<size_t>(2 * pp * D));
    std::copy(meta.g.data().begin(), meta.g.data().end(), stacked.begin());
    std::copy(meta.h.data().begin(), meta.h.data().end(), stacked.begin() + pp * D);
    const Tensor probs = head.probs(Tensor::from_data({2 * pp, D}, std::move(stacked)));

    const int64_t K = head.n_classes();
    std::vector<float> values(static_cast<size_t>(pp));
    const float* pd = probs.data().data();
    for (int64_t zbit = 0; zbit < pp; ++zbit) {
        const double pg = std::min(1.0, std::max(double(kProbFloor), double(pd[zbit * K + y])));
        const double ph =
            std::min(1.0, std::max(double(kProbFloor), double(pd[(pp + zbit) * K + y])));
        values[size_t(zbit)] = float(std::log(pg) - std::log(ph));
    }
    ExplanationHeatmap hm;
    hm.values = Tensor::from_data({P, P}, std::move(values));
    hm.label = y;
    hm.provenance = meta.source == MetaSource::exact ? HeatmapProvenance::transferred
                                                     : HeatmapProvenance::amortized;
    hm.validate(meta.grid);
    return hm;
}

ExplanationHeatmap random_control(Rng& rng, const GridSpec& grid) {
    grid.validate();
    const int64_t P = grid.patches_per_side;
    std::vector<float> values(static_cast<size_t>(P * P));
    for (float& v : values) v = float(rng.uniform(-1.0, 1.0));
    ExplanationHeatmap hm;
    hm.values = Tensor::from_data({P, P}, std::move(values));
    hm.label = 0;
    hm.provenance = HeatmapProvenance::random_control;
    return hm;
}

} // namespace tve
