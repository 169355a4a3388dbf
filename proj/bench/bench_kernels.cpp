// Compares the serial reference kernels against the OpenMP builds.
//
//   ./bench_kernels                        # all benchmarks
//   ./bench_kernels --benchmark_filter=matmul

#include <benchmark/benchmark.h>

#include "cifm/kernels.hpp"
#include "cifm/rng.hpp"

using namespace cifm;
namespace K = cifm::kernels;

namespace {

Matrix random_matrix(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.a) v = rng.normal();
  return m;
}

void bench_matmul(benchmark::State& state, bool parallel) {
  const int n = static_cast<int>(state.range(0));
  const Matrix A = random_matrix(n, n, 1);
  const Matrix B = random_matrix(n, n, 2);
  Matrix out(n, n);
  for (auto _ : state) {
    if (parallel)
      K::omp::matmul_nn(A, B, out, false);
    else
      K::serial::matmul_nn(A, B, out, false);
    benchmark::DoNotOptimize(out.a.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t{2} * n * n * n);
}

void bench_attention(benchmark::State& state, bool parallel) {
  const int batch = static_cast<int>(state.range(0));
  const int len = 32, dim = 64, heads = 2;
  const Matrix q = random_matrix(batch * len, dim, 3);
  const Matrix k = random_matrix(batch * len, dim, 4);
  const Matrix v = random_matrix(batch * len, dim, 5);
  IntMatrix mask(batch, len);
  std::fill(mask.a.begin(), mask.a.end(), 1);
  Matrix ctx(batch * len, dim), probs(batch * heads * len, len);
  for (auto _ : state) {
    if (parallel)
      K::omp::attention_forward(q, k, v, mask, batch, len, heads, ctx, probs);
    else
      K::serial::attention_forward(q, k, v, mask, batch, len, heads, ctx, probs);
    benchmark::DoNotOptimize(ctx.a.data());
  }
}

void bench_layernorm(benchmark::State& state, bool parallel) {
  const int rows = static_cast<int>(state.range(0)), cols = 64;
  const Matrix x = random_matrix(rows, cols, 6);
  Matrix gain(1, cols), bias(1, cols);
  gain.fill(1.0);
  bias.zero();
  Matrix out(rows, cols), xhat(rows, cols), inv_std(rows, 1);
  for (auto _ : state) {
    if (parallel)
      K::omp::layernorm_rows(x, gain, bias, 1e-5, out, xhat, inv_std);
    else
      K::serial::layernorm_rows(x, gain, bias, 1e-5, out, xhat, inv_std);
    benchmark::DoNotOptimize(out.a.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(bench_matmul, serial, false)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_matmul, omp, true)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_attention, serial, false)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(bench_attention, omp, true)->Arg(8)->Arg(32);
BENCHMARK_CAPTURE(bench_layernorm, serial, false)->Arg(256)->Arg(2048);
BENCHMARK_CAPTURE(bench_layernorm, omp, true)->Arg(256)->Arg(2048);

BENCHMARK_MAIN();
