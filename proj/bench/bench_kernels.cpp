#include "printloop/kernels.hpp"
#include "printloop/metrics.hpp"
#include "printloop/sim.hpp"

#include <benchmark/benchmark.h>

using namespace printloop;

namespace {

GrayImage textured(int edge) {
    GrayImage img(edge, edge);
    for (int y = 0; y < edge; ++y) {
        for (int x = 0; x < edge; ++x) img.at(x, y) = static_cast<std::uint8_t>(kernels::pixel_hash(x, y, 7) & 0xff);
    }
    return img;
}

template <auto Fn>
void count(benchmark::State& state) {
    const auto img = textured(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Fn(img, 128, std::nullopt));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(img.size()));
}

template <auto Fn>
void shade(benchmark::State& state) {
    const auto img = kernels::serial::binarize(textured(static_cast<int>(state.range(0))), 100);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(img, 11));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(img.size()));
}

template <auto Fn>
void downsample(benchmark::State& state) {
    const auto img = textured(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(Fn(img, 4));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(img.size()));
}

void render(benchmark::State& state) {
    DefectSeverities sev;
    sev.set(FailureMode::under_extrusion, 0.4);
    sev.set(FailureMode::stringing_oozing, 0.6);
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(sim::render_layer_image(sev, ++seed));
}

void occupancy(benchmark::State& state) {
    const auto r = sim::render_layer_image(DefectSeverities{}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::occupancy(r.decorated, r.footprint));
}

}  // namespace

BENCHMARK(count<kernels::serial::count_at_least>)->Name("count_at_least/serial")->Arg(512)->Arg(2048);
BENCHMARK(count<kernels::parallel::count_at_least>)->Name("count_at_least/parallel")->Arg(512)->Arg(2048);
BENCHMARK(shade<kernels::serial::shade>)->Name("shade/serial")->Arg(512)->Arg(2048);
BENCHMARK(shade<kernels::parallel::shade>)->Name("shade/parallel")->Arg(512)->Arg(2048);
BENCHMARK(downsample<kernels::serial::box_downsample>)->Name("box_downsample/serial")->Arg(2048);
BENCHMARK(downsample<kernels::parallel::box_downsample>)->Name("box_downsample/parallel")->Arg(2048);
BENCHMARK(render)->Name("render_layer_image/512");
BENCHMARK(occupancy)->Name("occupancy/512");
BENCHMARK_MAIN();
