#include <benchmark/benchmark.h>

#include "slope/design.hpp"
#include "slope/distributions.hpp"
#include "slope/state_evolution.hpp"

namespace {

slope::PriorSpec two_point() {
  slope::PriorSpec prior;
  prior.atoms = {{0.0, 0.75}, {2.125, 0.25}};
  prior.sigma_w = 0.25;
  prior.delta = 0.64;
  return prior;
}

void BM_SeSolveCold(benchmark::State& state) {
  const slope::PriorSpec prior = two_point();
  const slope::QuantileTable lambda = slope::lasso_table(1.0);
  slope::SeOptions options;
  options.m = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::se_solve(prior, lambda, options));
  }
}

void BM_SeSolveWarm(benchmark::State& state) {
  const slope::PriorSpec prior = two_point();
  const slope::QuantileTable lambda = slope::lasso_table(1.0);
  const slope::SeSolution cold = slope::se_solve(prior, lambda);
  slope::SeOptions options;
  options.sigma0 = cold.sigma * 1.01;
  options.tau0 = cold.tau;
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::se_solve(prior, lambda, options));
  }
}

void BM_ExpectedSquaredError(benchmark::State& state) {
  const slope::PriorSpec prior = two_point();
  const slope::ScalarFunction eta = slope::ScalarFunction::soft_threshold(1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::expected_squared_error(prior, 1.1, eta));
  }
}

void BM_SolveInner(benchmark::State& state) {
  slope::DesignProblem problem;
  problem.prior = two_point();
  problem.grid_size = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(slope::solve_inner(problem, 1.05));
  }
}

}  // namespace

BENCHMARK(BM_SeSolveCold)->Arg(1024)->Arg(4096);
BENCHMARK(BM_SeSolveWarm)->Arg(4096);
BENCHMARK(BM_ExpectedSquaredError);
BENCHMARK(BM_SolveInner)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
