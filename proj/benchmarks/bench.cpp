// Micro-benchmarks for the kernels that dominate study wall time: the
// GEMM-backed convolution (forward/backward), a full training step, and
// group profiling. Run with --benchmark_min_time=... as usual.

#include <benchmark/benchmark.h>

#include <numeric>

#include "insidebias/dataset.hpp"
#include "insidebias/layers.hpp"
#include "insidebias/model_zoo.hpp"
#include "insidebias/probe.hpp"
#include "insidebias/rng.hpp"

using namespace insidebias;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = uniform_in(rng, 0.f, 1.f);
    return t;
}

data::GroupedDataset bench_dataset(std::size_t n) {
    data::GroupedDataset::Builder b(28, 28, 10, false, "test", "bench");
    Rng rng(1);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::uint8_t> px(28 * 28);
        for (auto& p : px) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
        b.add_gray("b-" + std::to_string(i), static_cast<int>(i % 10), std::move(px));
    }
    data::ColorBiasConfig cfg;
    cfg.primary_fraction = 1.0 / 3.0;
    cfg.seed = 1;
    return data::colorize(b.finish(), cfg);
}

void BM_ConvForward(benchmark::State& state) {
    const std::size_t maps = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    Conv2dLayer conv("c", maps, maps, 3, 1, 1);
    conv.init_he_uniform(rng);
    Tensor x = random_tensor({32, maps, 28, 28}, rng);
    for (auto _ : state) {
        Tensor y = conv.forward(x, {});
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 32);
}
BENCHMARK(BM_ConvForward)->Arg(32)->Arg(64);

void BM_ConvBackward(benchmark::State& state) {
    const std::size_t maps = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    Conv2dLayer conv("c", maps, maps, 3, 1, 1);
    conv.init_he_uniform(rng);
    Tensor x = random_tensor({32, maps, 28, 28}, rng);
    Tensor gy = random_tensor({32, maps, 28, 28}, rng);
    conv.forward(x, {});
    for (auto _ : state) {
        Tensor gx = conv.backward(gy);
        benchmark::DoNotOptimize(gx.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 32);
}
BENCHMARK(BM_ConvBackward)->Arg(32)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
    Model model = zoo::build(state.range(0) == 0 ? zoo::kVggSmall : zoo::kResnetSmall,
                             {28, 28, 3}, 10, 7);
    Rng rng(5);
    Tensor x = random_tensor({64, 3, 28, 28}, rng);
    std::vector<int> labels(64);
    for (auto& l : labels) l = static_cast<int>(uniform_index(rng, 10));
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_step(model, x, labels, 0.01f, 0.9f));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 64);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1);

void BM_GroupProfile(benchmark::State& state) {
    Model model = zoo::build_vgg({28, 28, 3}, 10, 9);
    auto ds = bench_dataset(128);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (auto _ : state) {
        auto res = probe::group_profile(model, ds, idx, "g", {});
        benchmark::DoNotOptimize(res.profile.lambda);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(ds.size()));
}
BENCHMARK(BM_GroupProfile);

}  // namespace

BENCHMARK_MAIN();
