// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "tempo/kernels.hpp"

using namespace tempo::kernels;

namespace {

Buffer random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer b(n);
  for (double& x : b) x = u(rng);
  return b;
}

struct ScaleFixture {
  Buffer w, k, rate{0.7}, grad;
  ScaleArgs args;

  ScaleFixture(std::size_t n, CouplingMode mode)
      : w(random_buffer(n, 1)),
        k(random_buffer(mode == CouplingMode::full ? n * n : mode == CouplingMode::rank1 ? n : 1, 2)),
        grad(random_buffer(n, 3)) {
    args.weights = w;
    args.mode = mode;
    args.coupling = k;
    args.rate = rate;
    args.phase = 0.3;
  }
};

void BM_matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Buffer a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(matmul(a, b, n, n, n));
}

void BM_matmul_reference(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Buffer a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(reference::matmul(a, b, n, n, n));
}

template <ScaleEval E>
void BM_scale_forward(benchmark::State& st) {
  ScaleFixture f(static_cast<std::size_t>(st.range(0)), CouplingMode::rank1);
  for (auto _ : st) benchmark::DoNotOptimize(scale_forward(f.args, E));
}

void BM_scale_forward_reference(benchmark::State& st) {
  ScaleFixture f(static_cast<std::size_t>(st.range(0)), CouplingMode::rank1);
  for (auto _ : st) benchmark::DoNotOptimize(reference::scale_forward(f.args));
}

template <ScaleEval E>
void BM_scale_backward(benchmark::State& st) {
  ScaleFixture f(static_cast<std::size_t>(st.range(0)), CouplingMode::rank1);
  for (auto _ : st) benchmark::DoNotOptimize(scale_backward(f.args, f.grad, E));
}

void BM_scale_backward_reference(benchmark::State& st) {
  ScaleFixture f(static_cast<std::size_t>(st.range(0)), CouplingMode::rank1);
  for (auto _ : st) benchmark::DoNotOptimize(reference::scale_backward(f.args, f.grad));
}

}  // namespace

BENCHMARK(BM_matmul)->RangeMultiplier(2)->Range(16, 256);
BENCHMARK(BM_matmul_reference)->RangeMultiplier(2)->Range(16, 256);

BENCHMARK(BM_scale_forward<ScaleEval::streamed>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_scale_forward<ScaleEval::materialized>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_scale_forward<ScaleEval::factored>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_scale_forward_reference)->RangeMultiplier(4)->Range(64, 4096);

BENCHMARK(BM_scale_backward<ScaleEval::streamed>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_scale_backward<ScaleEval::materialized>)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_scale_backward<ScaleEval::factored>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_scale_backward_reference)->RangeMultiplier(4)->Range(64, 4096);

BENCHMARK_MAIN();
