#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rotinv/kernels.hpp"

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <auto Knn>
void BM_Knn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto pts = random_values(n * 3, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Knn(pts, n, 3, 16));
}

}  // namespace

BENCHMARK(BM_Gemm<rotinv::kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<rotinv::kernels::parallel::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Knn<rotinv::kernels::serial::knn>)->Name("knn/serial")->Arg(128)->Arg(1024);
BENCHMARK(BM_Knn<rotinv::kernels::parallel::knn>)->Name("knn/parallel")->Arg(128)->Arg(1024);

BENCHMARK_MAIN();
