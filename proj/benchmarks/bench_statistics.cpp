#include <benchmark/benchmark.h>

#include "cantante/analysis.hpp"
#include "cantante/rng.hpp"

using namespace cantante;

static void BM_Spearman(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  SeedStream rng(3);
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(rng.next_below(n / 2 + 1));  // ties present
    y[i] = rng.next_unit();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(spearman(x, y));
  }
}
BENCHMARK(BM_Spearman)->Arg(9)->Arg(100)->Arg(10000);

static void BM_BesselStd(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  SeedStream rng(4);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_unit();
  for (auto _ : state) {
    benchmark::DoNotOptimize(bessel_std(v));
  }
}
BENCHMARK(BM_BesselStd)->Arg(3)->Arg(1000);
