// Parallel kernels against their serial reference versions.
#include <vector>

#include <benchmark/benchmark.h>

#include "sparnet/kernels.hpp"
#include "sparnet/kernels_reference.hpp"
#include "sparnet/rng.hpp"

using namespace sparnet;

namespace {

std::vector<real> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(n);
  for (real& x : v) x = rng.uniform(-1, 1);
  return v;
}

kernels::ConvGeometry geometry(const benchmark::State& state) {
  kernels::ConvGeometry g;
  g.batch = 2;
  g.in_c = g.out_c = static_cast<int>(state.range(0));
  g.in_h = g.in_w = static_cast<int>(state.range(1));
  return g;
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = filled(g.input_size(), 1), w = filled(g.weight_size(), 2), b = filled(g.out_c, 3);
  std::vector<real> out(g.output_size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_forward(g, in, w, b, out);
    else
      kernels::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size()));
}

template <bool Reference>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto g = geometry(state);
  const auto go = filled(g.output_size(), 1), w = filled(g.weight_size(), 2);
  std::vector<real> gi(g.input_size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_backward_input(g, go, w, gi);
    else
      kernels::conv2d_backward_input(g, go, w, gi);
    benchmark::DoNotOptimize(gi.data());
  }
}

template <bool Reference>
void BM_ConvBackwardParams(benchmark::State& state) {
  const auto g = geometry(state);
  const auto in = filled(g.input_size(), 1), go = filled(g.output_size(), 2);
  std::vector<real> gw(g.weight_size()), gb(g.out_c);
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::conv2d_backward_params(g, in, go, gw, gb);
    else
      kernels::conv2d_backward_params(g, in, go, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Reference>
void BM_SeparableBlur(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1));
  const auto plane = filled(static_cast<std::size_t>(side) * side, 1);
  const std::vector<real> taps(k, 1.0 / k);
  std::vector<real> out(plane.size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::filter_separable(plane, side, side, taps, taps, kernels::Edge::replicate, out);
    else
      kernels::filter_separable(plane, side, side, taps, taps, kernels::Edge::replicate, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Median(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0)), k = static_cast<int>(state.range(1));
  const auto plane = filled(static_cast<std::size_t>(side) * side, 1);
  std::vector<real> out(plane.size());
  for (auto _ : state) {
    if constexpr (Reference)
      kernels::reference::median_filter(plane, side, side, k, out);
    else
      kernels::median_filter(plane, side, side, k, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_ConvForward<true>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_ConvBackwardInput<false>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_ConvBackwardInput<true>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_ConvBackwardParams<false>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_ConvBackwardParams<true>)->Args({16, 64})->Args({64, 32});
BENCHMARK(BM_SeparableBlur<false>)->Args({512, 15});
BENCHMARK(BM_SeparableBlur<true>)->Args({512, 15});
BENCHMARK(BM_Median<false>)->Args({512, 5});
BENCHMARK(BM_Median<true>)->Args({512, 5});

BENCHMARK_MAIN();
