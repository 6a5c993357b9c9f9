#include <benchmark/benchmark.h>

#include "slope/design.hpp"
#include "slope/distributions.hpp"
#include "slope/solver.hpp"

namespace {

slope::PriorSpec two_point() {
  slope::PriorSpec prior;
  prior.atoms = {{0.0, 0.75}, {2.125, 0.25}};
  prior.sigma_w = 0.25;
  prior.delta = 0.64;
  return prior;
}

void BM_GenerateInstance(benchmark::State& state) {
  const std::size_t p = static_cast<std::size_t>(state.range(0));
  const slope::PriorSpec prior = two_point();
  std::uint64_t stream = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::generate_instance(prior, p, 1, stream++));
  }
}

void BM_Fit(benchmark::State& state) {
  const std::size_t p = static_cast<std::size_t>(state.range(0));
  const slope::PriorSpec prior = two_point();
  const slope::LinearInstance inst = slope::generate_instance(prior, p, 1);
  const slope::RegularizationSequence lambda = slope::lasso_sequence(1.0, p);
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::fit(inst.A, inst.y, lambda));
  }
}

}  // namespace

BENCHMARK(BM_GenerateInstance)->Arg(256)->Arg(1024)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fit)->Arg(256)->Arg(512)->Arg(1024)
    ->Unit(benchmark::kMillisecond);
