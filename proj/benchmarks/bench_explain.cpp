#include <benchmark/benchmark.h>

#include "tve/attribution.hpp"
#include "tve/dataset.hpp"
#include "tve/explainer.hpp"

using namespace tve;

namespace {

struct Fixture {
    GridSpec grid;
    Dataset data;
    BackboneEncoder encoder;
    ClassifierHead head;
    ExplainerModel explainer;

    Fixture()
        : data(generate_dataset(GridSpec{}, "quadrant", 4, 0, 9)),
          encoder(make_enc()),
          head(make_head()),
          explainer(make_exp()) {
        encoder.freeze();
    }
    static BackboneEncoder make_enc() {
        Rng rng(9);
        return BackboneEncoder(GridSpec{}, {32, 16, 2}, rng);
    }
    static ClassifierHead make_head() {
        Rng rng(9);
        return ClassifierHead(16, 4, rng);
    }
    static ExplainerModel make_exp() {
        Rng rng(10);
        return ExplainerModel(GridSpec{}, {64, 4, 16, 2}, rng);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

static void BM_EncoderMaskedCall(benchmark::State& state) {
    Fixture& f = fixture();
    Rng rng(4);
    const PatchSubset s = sample_subset(rng, PatchSubset::full(f.grid));
    for (auto _ : state) {
        Tensor e = f.encoder.encode_masked(f.data.entries[0].image, s);
        benchmark::DoNotOptimize(e.data().data());
    }
}
BENCHMARK(BM_EncoderMaskedCall);

static void BM_ExactMetaAttribution(benchmark::State& state) {
    Fixture& f = fixture();
    for (auto _ : state) {
        MetaAttribution m = compute_meta_attribution(f.encoder, f.data.entries[0].image, f.grid);
        benchmark::DoNotOptimize(m.g.data().data());
    }
}
BENCHMARK(BM_ExactMetaAttribution);

static void BM_ExplainerForward(benchmark::State& state) {
    Fixture& f = fixture();
    for (auto _ : state) {
        MetaAttribution m = f.explainer.explain(f.data.entries[0].image);
        benchmark::DoNotOptimize(m.g.data().data());
    }
}
BENCHMARK(BM_ExplainerForward);

static void BM_TransferRule(benchmark::State& state) {
    Fixture& f = fixture();
    const MetaAttribution meta = f.explainer.explain(f.data.entries[0].image);
    for (auto _ : state) {
        ExplanationHeatmap hm = transfer_explain(meta, f.head, 0);
        benchmark::DoNotOptimize(hm.values.data().data());
    }
}
BENCHMARK(BM_TransferRule);

static void BM_AmortizedHeatmap(benchmark::State& state) {
    // One explainer forward plus one batched head pass: the full per-image path.
    Fixture& f = fixture();
    for (auto _ : state) {
        ExplanationHeatmap hm =
            transfer_explain(f.explainer.explain(f.data.entries[0].image), f.head, 0);
        benchmark::DoNotOptimize(hm.values.data().data());
    }
}
BENCHMARK(BM_AmortizedHeatmap);
