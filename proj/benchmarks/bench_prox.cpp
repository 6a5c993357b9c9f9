#include <benchmark/benchmark.h>

#include <vector>

#include "slope/distributions.hpp"
#include "slope/sorted_l1.hpp"

namespace {

void BM_Prox(benchmark::State& state) {
  const std::size_t p = static_cast<std::size_t>(state.range(0));
  slope::RngStream rng(1, 0);
  std::vector<double> y(p), w(p);
  for (double& v : y) v = 2.0 * rng.normal();
  for (std::size_t i = 0; i < p; ++i) {
    w[i] = 1.4 * static_cast<double>(i) / static_cast<double>(p);
  }
  const slope::RegularizationSequence lambda(w);
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::prox(lambda, y));
  }
  state.SetComplexityN(static_cast<benchmark::IterationCount>(p));
}

void BM_ProxPresorted(benchmark::State& state) {
  // Isolates the averaging core from the sort by feeding a sorted sequence.
  const std::size_t p = static_cast<std::size_t>(state.range(0));
  slope::RngStream rng(2, 0);
  std::vector<double> g(p);
  double acc = 0.0;
  for (double& v : g) {
    acc += rng.normal();  // random walk: plenty of decreasing stretches
    v = acc;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::average_decreasing_runs(g));
  }
}

}  // namespace

BENCHMARK(BM_Prox)->Arg(256)->Arg(1024)->Arg(4096)->Arg(16384)->Complexity();
BENCHMARK(BM_ProxPresorted)->Arg(1024)->Arg(16384);
