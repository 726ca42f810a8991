#include <benchmark/benchmark.h>

#include "densefix/augment.hpp"
#include "densefix/model.hpp"
#include "densefix/pseudolabel.hpp"
#include "densefix/rng.hpp"
#include "densefix/trainer.hpp"
#include "kernels.hpp"

using namespace densefix;

namespace {

Tensor random_images(int n, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> data(static_cast<std::size_t>(n) * 3 * h * w);
    for (auto& v : data) v = rng.uniform();
    return Tensor::from({n, 3, h, w}, std::move(data));
}

void BM_conv2d_forward(benchmark::State& state) {
    kernels::set_threads(static_cast<int>(state.range(0)));
    Rng rng(1);
    const int n = 8, c = 16, h = 32, w = 32;
    std::vector<double> in(static_cast<std::size_t>(n) * c * h * w), out(in.size());
    std::vector<double> kern(static_cast<std::size_t>(c) * c * 9), bias(c);
    for (auto& v : in) v = rng.uniform();
    for (auto& v : kern) v = rng.uniform(-0.1, 0.1);
    kernels::Conv2dShape s{n, c, h, w, c, 3, 3, 1};
    for (auto _ : state) {
        kernels::conv2d_forward(in.data(), kern.data(), bias.data(), out.data(), s);
        benchmark::DoNotOptimize(out.data());
    }
    const double macs = static_cast<double>(n) * c * c * 9 * h * w;
    state.counters["GFLOP/s"] =
        benchmark::Counter(2.0 * macs, benchmark::Counter::kIsIterationInvariantRate,
                           benchmark::Counter::OneK::kIs1000) /
        1e0;
}
BENCHMARK(BM_conv2d_forward)->Arg(1)->Arg(2)->UseRealTime();

void BM_model_predict(benchmark::State& state) {
    kernels::set_threads(2);
    const ParamSet params = init_model(3, {16, 16, 16}, 4);
    const Tensor images = random_images(8, 32, 32, 5);
    for (auto _ : state) {
        const Tensor probs = predict(params, images);
        benchmark::DoNotOptimize(probs.values().data());
    }
}
BENCHMARK(BM_model_predict)->UseRealTime();

void BM_warp_and_match(benchmark::State& state) {
    Rng rng(7);
    LabelMap pl(32, 32, 1);
    const AugRecord weak = sample_weak(rng, 48, 48, 32, 32, 0.5);
    StrongAugConfig cfg;
    const AugRecord strong = sample_strong(rng, 48, 48, 32, 32, cfg, weak);
    LabelMap warped = apply_geom_to_labels(weak.geometric, LabelMap(48, 48, 2));
    for (auto _ : state) {
        const LabelMap matched = match(warped, weak, strong);
        benchmark::DoNotOptimize(matched.values.data());
    }
}
BENCHMARK(BM_warp_and_match);

void BM_train_step(benchmark::State& state) {
    TrainConfig cfg;
    cfg.threads = 2;
    Trainer trainer(cfg);
    TrainState train_state = trainer.make_initial_state();
    for (auto _ : state) {
        trainer.train_step(train_state);
        benchmark::DoNotOptimize(train_state.step);
    }
    state.counters["steps/s"] = benchmark::Counter(1, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
