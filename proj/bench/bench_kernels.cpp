#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mvc/kernels.hpp"
#include "mvc/parallel.hpp"

using namespace mvc;

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Square gemm of side state.range(0).
void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    reference::gemm_nn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm_nn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

// Encoder-sized 3x3 convolution: batch 100, state.range(0) channels in and
// out, 32x32 maps.
kernels::ConvGeometry conv_case(std::size_t channels) {
  return kernels::conv_geometry({100, channels, 32, 32}, {channels, channels, 3, 3}, 1, 1);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_case(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.channels * g.height * g.width, 3);
  const auto w = random_values(g.filters * g.patch(), 4);
  std::vector<float> y(g.batch * g.filters * g.out_h * g.out_w);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_forward(g, x.data(), w.data(), y.data());
    } else {
      reference::conv2d_forward(g, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_case(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.channels * g.height * g.width, 3);
  const auto w = random_values(g.filters * g.patch(), 4);
  const auto dy = random_values(g.batch * g.filters * g.out_h * g.out_w, 5);
  std::vector<float> dx(x.size()), dw(w.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::conv2d_backward(g, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    } else {
      reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx.data(), dw.data());
    }
    benchmark::DoNotOptimize(dw.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Name("BM_ConvForwardReference")->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("BM_ConvForwardParallel")->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("BM_ConvBackwardReference")->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("BM_ConvBackwardParallel")->Arg(16)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
