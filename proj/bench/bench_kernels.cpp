// Serial reference kernels against the OpenMP ones on layer shapes that
// dominate training (ResNet18 stages) and stylization (VGG19 up to relu3_1).

#include <benchmark/benchmark.h>

#include <vector>

#include "styleadv/kernels/kernels.hpp"
#include "styleadv/rng.hpp"

namespace k = styleadv::kernels;
using styleadv::Index;

namespace {

std::vector<float> filled(Index n, std::uint64_t seed) {
  styleadv::Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(styleadv::uniform01(rng) - 0.5);
  return v;
}

k::ConvGeometry conv_shape(const benchmark::State& st) {
  k::ConvGeometry g;
  g.batch = st.range(0);
  g.in_channels = st.range(1);
  g.out_channels = st.range(1);
  g.in_h = g.in_w = st.range(2);
  g.kernel = 3;
  g.pad = 1;
  return g;
}

double conv_flops(const k::ConvGeometry& g) {
  return 2.0 * static_cast<double>(g.batch * g.out_channels * g.out_h() * g.out_w() * g.patch());
}

template <bool Parallel>
void BM_Gemm(benchmark::State& st) {
  const Index n = st.range(0);
  auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::gemm(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    } else {
      k::serial::gemm(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& st) {
  const auto g = conv_shape(st);
  auto x = filled(g.batch * g.in_channels * g.in_h * g.in_w, 3);
  auto w = filled(g.out_channels * g.patch(), 4);
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h() * g.out_w()));
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::conv2d_forward(g, x.data(), w.data(), static_cast<const float*>(nullptr), y.data());
    } else {
      k::serial::conv2d_forward(g, x.data(), w.data(), static_cast<const float*>(nullptr), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["GFLOPS"] =
      benchmark::Counter(conv_flops(g), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& st) {
  const auto g = conv_shape(st);
  auto x = filled(g.batch * g.in_channels * g.in_h * g.in_w, 5);
  auto w = filled(g.out_channels * g.patch(), 6);
  auto dy = filled(g.batch * g.out_channels * g.out_h() * g.out_w(), 7);
  std::vector<float> dx(x.size()), dw(w.size());
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::conv2d_backward_data(g, dy.data(), w.data(), dx.data());
      k::parallel::conv2d_backward_params(g, x.data(), dy.data(), dw.data(), static_cast<float*>(nullptr));
    } else {
      k::serial::conv2d_backward_data(g, dy.data(), w.data(), dx.data());
      k::serial::conv2d_backward_params(g, x.data(), dy.data(), dw.data(), static_cast<float*>(nullptr));
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * conv_flops(g), benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ChannelMoments(benchmark::State& st) {
  const Index planes = st.range(0), hw = st.range(1) * st.range(1);
  auto x = filled(planes * hw, 8);
  std::vector<float> mean(static_cast<std::size_t>(planes)), sd(static_cast<std::size_t>(planes));
  for (auto _ : st) {
    if constexpr (Parallel) {
      k::parallel::channel_moments(planes, hw, x.data(), 1e-8f, mean.data(), sd.data());
    } else {
      k::serial::channel_moments(planes, hw, x.data(), 1e-8f, mean.data(), sd.data());
    }
    benchmark::DoNotOptimize(sd.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->ArgNames({"batch", "channels", "size"});
  b->Args({32, 64, 32})->Args({32, 128, 16})->Args({32, 256, 8})->Args({1, 64, 32})->Args({1, 128, 16});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_ChannelMoments<false>)->Name("channel_moments/serial")->Args({64, 32})->Args({256, 8});
BENCHMARK(BM_ChannelMoments<true>)->Name("channel_moments/parallel")->Args({64, 32})->Args({256, 8});

BENCHMARK_MAIN();
