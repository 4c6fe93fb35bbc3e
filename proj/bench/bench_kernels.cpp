// OpenMP kernels vs the serial reference.
//
//   bench_kernels --benchmark_filter=matmul
//   OMP_NUM_THREADS=4 bench_kernels

#include "emofilm/kernels.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

using emofilm::Matrix;
namespace kernels = emofilm::kernels;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.values()) x = u(rng);
  return m;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix out;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul(a, b, out);
    else kernels::serial::matmul(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
  state.counters["threads"] = Parallel ? omp_get_max_threads() : 1;
}

template <bool Parallel>
void BM_matmul_tn_acc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
  Matrix out(n, n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul_tn_acc(a, b, out);
    else kernels::serial::matmul_tn_acc(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_attention_forward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(len, 64, 5), k = random_matrix(len, 64, 6), v = random_matrix(len, 64, 7);
  Matrix out;
  std::vector<double> probs;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::attention_forward(q, k, v, 4, true, out, probs);
    else kernels::serial::attention_forward(q, k, v, 4, true, out, probs);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_attention_backward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Matrix q = random_matrix(len, 64, 8), k = random_matrix(len, 64, 9), v = random_matrix(len, 64, 10);
  const Matrix dout = random_matrix(len, 64, 11);
  Matrix out;
  std::vector<double> probs;
  kernels::serial::attention_forward(q, k, v, 4, true, out, probs);
  Matrix dq(len, 64), dk(len, 64), dv(len, 64);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::attention_backward(q, k, v, 4, true, probs, dout, dq, dk, dv);
    else kernels::serial::attention_backward(q, k, v, 4, true, probs, dout, dq, dk, dv);
    benchmark::DoNotOptimize(dq.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul_tn_acc<false>)->Name("matmul_tn_acc/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul_tn_acc<true>)->Name("matmul_tn_acc/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_attention_forward<false>)->Name("attention_forward/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_attention_forward<true>)->Name("attention_forward/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_attention_backward<false>)->Name("attention_backward/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_attention_backward<true>)->Name("attention_backward/omp")->RangeMultiplier(2)->Range(32, 256);

BENCHMARK_MAIN();
