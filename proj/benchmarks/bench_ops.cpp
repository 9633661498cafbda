#include <benchmark/benchmark.h>

#include "tve/ops.hpp"
#include "tve/rng.hpp"

using namespace tve;

namespace {

Tensor random_tensor(Shape dims, Rng& rng, bool requires_grad = false) {
    std::vector<float> d(static_cast<size_t>(shape_numel(dims)));
    for (float& v : d) v = float(rng.normal(0.0, 1.0));
    return Tensor::from_data(std::move(dims), std::move(d), requires_grad);
}

} // namespace

static void BM_Matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(1);
    const Tensor a = random_tensor({n, n}, rng);
    const Tensor b = random_tensor({n, n}, rng);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetComplexityN(n);
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256)->Complexity();

static void BM_MatmulBackward(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(1);
    for (auto _ : state) {
        state.PauseTiming();
        Tensor a = random_tensor({n, n}, rng, true);
        Tensor b = random_tensor({n, n}, rng, true);
        state.ResumeTiming();
        Tensor loss = mean_all(matmul(a, b));
        loss.backward();
        benchmark::DoNotOptimize(a.grad().data());
    }
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 128);

static void BM_PerPositionEmbed(benchmark::State& state) {
    const int64_t batch = state.range(0);
    Rng rng(2);
    const Tensor x = random_tensor({batch * 64, 48}, rng);
    const Tensor w = random_tensor({64, 48, 64}, rng);
    const Tensor b = random_tensor({64, 64}, rng);
    for (auto _ : state) {
        Tensor y = per_position_embed(x, w, b);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_PerPositionEmbed)->Arg(1)->Arg(8)->Arg(16);

static void BM_Softmax(benchmark::State& state) {
    Rng rng(3);
    const Tensor x = random_tensor({state.range(0), 16}, rng);
    for (auto _ : state) {
        Tensor y = softmax(x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(1024);
