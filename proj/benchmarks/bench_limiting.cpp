#include <benchmark/benchmark.h>

#include "slope/distributions.hpp"
#include "slope/limiting_scalar.hpp"

namespace {

slope::PriorSpec two_point() {
  slope::PriorSpec prior;
  prior.atoms = {{0.0, 0.75}, {2.125, 0.25}};
  prior.sigma_w = 0.25;
  prior.delta = 0.64;
  return prior;
}

void BM_BuildLimitingEta(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const slope::PriorSpec prior = two_point();
  const slope::QuantileTable abs_y = slope::abs_signal_table(prior, 1.1, m);
  const slope::QuantileTable lambda =
      slope::QuantileTable::from_atoms({{0.2, 0.5}, {1.2, 0.5}});
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::build_limiting_eta(abs_y, lambda, m));
  }
}

void BM_AbsQuantileTable(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const slope::PriorSpec prior = two_point();
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::abs_signal_table(prior, 1.1, m));
  }
}

void BM_EvalScalarRule(benchmark::State& state) {
  const slope::PriorSpec prior = two_point();
  const slope::QuantileTable abs_y = slope::abs_signal_table(prior, 1.1, 4096);
  const slope::QuantileTable lambda =
      slope::QuantileTable::from_atoms({{0.2, 0.5}, {1.2, 0.5}});
  const slope::ScalarFunction eta =
      slope::build_limiting_eta(abs_y, lambda, 4096).eta;
  double y = -4.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eta(y));
    y += 0.001;
    if (y > 4.0) y = -4.0;
  }
}

}  // namespace

BENCHMARK(BM_BuildLimitingEta)->Arg(1024)->Arg(4096)->Arg(16384);
BENCHMARK(BM_AbsQuantileTable)->Arg(1024)->Arg(4096);
BENCHMARK(BM_EvalScalarRule);
