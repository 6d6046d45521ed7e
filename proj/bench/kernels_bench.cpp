// Serial reference vs OpenMP kernels on shapes the tracker actually runs.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lfcx/kernels.hpp"

namespace k = lfcx::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

k::ConvGeom geom(std::size_t c_in, std::size_t c_out, std::size_t hw, std::size_t kk,
                 std::size_t stride, std::size_t groups) {
  k::ConvGeom g;
  g.in_c = c_in;
  g.out_c = c_out;
  g.in_h = g.in_w = hw;
  g.k = kk;
  g.stride = stride;
  g.pad = kk / 2;
  g.groups = groups;
  return g;
}

template <bool kParallel>
void conv_forward(benchmark::State& st, k::ConvGeom g) {
  auto x = random_buffer(g.batch * g.in_c * g.in_h * g.in_w, 1);
  auto w = random_buffer(g.out_c * g.in_per_group() * g.k * g.k, 2);
  auto b = random_buffer(g.out_c, 3);
  std::vector<double> y(g.batch * g.out_c * g.out_h() * g.out_w());
  for (auto _ : st) {
    if constexpr (kParallel)
      k::parallel::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    else
      k::serial::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["MAC/s"] = benchmark::Counter(double(g.macs()), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool kParallel>
void conv_backward(benchmark::State& st, k::ConvGeom g) {
  auto x = random_buffer(g.batch * g.in_c * g.in_h * g.in_w, 1);
  auto w = random_buffer(g.out_c * g.in_per_group() * g.k * g.k, 2);
  auto dy = random_buffer(g.batch * g.out_c * g.out_h() * g.out_w(), 3);
  std::vector<double> dx(x.size()), dw(w.size()), db(g.out_c);
  for (auto _ : st) {
    if constexpr (kParallel) {
      k::parallel::conv2d_backward_input(g, dy.data(), w.data(), dx.data());
      k::parallel::conv2d_backward_params(g, x.data(), dy.data(), dw.data(), db.data());
    } else {
      k::serial::conv2d_backward_input(g, dy.data(), w.data(), dx.data());
      k::serial::conv2d_backward_params(g, x.data(), dy.data(), dw.data(), db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  st.counters["MAC/s"] =
      benchmark::Counter(2.0 * double(g.macs()), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool kParallel>
void gemm(benchmark::State& st) {
  const std::size_t n = st.range(0);
  auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    if constexpr (kParallel)
      k::parallel::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, a.data(), b.data(), c.data(), false);
    else
      k::serial::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["MAC/s"] = benchmark::Counter(double(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}

void conv_forward_serial(benchmark::State& st, k::ConvGeom g) { conv_forward<false>(st, g); }
void conv_forward_omp(benchmark::State& st, k::ConvGeom g) { conv_forward<true>(st, g); }
void conv_backward_serial(benchmark::State& st, k::ConvGeom g) { conv_backward<false>(st, g); }
void conv_backward_omp(benchmark::State& st, k::ConvGeom g) { conv_backward<true>(st, g); }

}  // namespace

BENCHMARK_CAPTURE(conv_forward_serial, stem3x3_s2, geom(3, 32, 256, 3, 2, 1));
BENCHMARK_CAPTURE(conv_forward_omp, stem3x3_s2, geom(3, 32, 256, 3, 2, 1));
BENCHMARK_CAPTURE(conv_forward_serial, pw192to96, geom(192, 96, 16, 1, 1, 1));
BENCHMARK_CAPTURE(conv_forward_omp, pw192to96, geom(192, 96, 16, 1, 1, 1));
BENCHMARK_CAPTURE(conv_forward_serial, dw7, geom(96, 96, 16, 7, 1, 96));
BENCHMARK_CAPTURE(conv_forward_omp, dw7, geom(96, 96, 16, 7, 1, 96));
BENCHMARK_CAPTURE(conv_backward_serial, stage2, geom(64, 128, 32, 3, 2, 1));
BENCHMARK_CAPTURE(conv_backward_omp, stage2, geom(64, 128, 32, 3, 2, 1));
BENCHMARK_TEMPLATE(gemm, false)->Arg(64)->Arg(256);
BENCHMARK_TEMPLATE(gemm, true)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
