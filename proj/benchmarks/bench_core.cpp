#include <benchmark/benchmark.h>

#include "omnicd/detector.hpp"
#include "omnicd/encoders.hpp"
#include "omnicd/metrics.hpp"
#include "omnicd/model.hpp"

using namespace omnicd;

namespace {

ModelConfig small_cfg() {
    ModelConfig c;
    c.input_size = 64;
    c.patch_size = 16;
    c.embed_dim = 32;
    c.encoder_depth = 2;
    c.decoder_mlp_dim = 256;
    return c;
}

Tensor rand_image(int s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{3, s, s});
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform();
    return t;
}

void bench_conv2d(benchmark::State& state) {
    Rng rng(0);
    Conv2d conv(32, 32, 3, 1, 1, rng);
    Tensor x(Shape{32, 16, 16});
    for (std::int64_t i = 0; i < x.numel(); ++i) x.data[i] = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(conv.fwd(constant(x))->v.data.sum());
}
BENCHMARK(bench_conv2d);

void bench_image_encoder(benchmark::State& state) {
    ModelConfig cfg = small_cfg();
    Rng rng(0);
    ImageEncoder enc(cfg, rng);
    Tensor img = rand_image(cfg.input_size, 1);
    for (auto _ : state) benchmark::DoNotOptimize(enc.encode(constant(img)).data->v.data.sum());
}
BENCHMARK(bench_image_encoder);

void bench_full_forward(benchmark::State& state) {
    ModelConfig cfg = small_cfg();
    Model model(cfg, 0);
    Tensor a = rand_image(cfg.input_size, 1), b = rand_image(cfg.input_size, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(
            model.forward(a, b, "Identify changes in red squares in the image.")
                .filtered_prob->v.data.sum());
}
BENCHMARK(bench_full_forward);

void bench_confusion(benchmark::State& state) {
    Rng rng(0);
    Tensor pred(Shape{512, 512}), gt(Shape{512, 512});
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        pred.data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        gt.data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    for (auto _ : state) benchmark::DoNotOptimize(confusion(pred, gt).tp);
}
BENCHMARK(bench_confusion);

}  // namespace

BENCHMARK_MAIN();
