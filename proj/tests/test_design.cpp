#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "slope/design.hpp"
#include "slope/distributions.hpp"
#include "slope/limiting_scalar.hpp"
#include "slope/state_evolution.hpp"

using namespace slope;

namespace {

PriorSpec sparse_prior() {
  PriorSpec prior;
  prior.atoms = {{0.0, 0.75}, {2.125, 0.25}};
  prior.sigma_w = 0.25;
  prior.delta = 0.64;
  return prior;
}

PriorSpec null_prior() {
  PriorSpec prior;
  prior.atoms = {{0.0, 1.0}};
  prior.sigma_w = 0.5;
  prior.delta = 0.64;
  return prior;
}

DesignProblem small_problem(const PriorSpec& prior) {
  DesignProblem problem;
  problem.prior = prior;
  problem.grid_size = 512;
  problem.scan_points = 17;
  problem.lambda_samples = 20000;
  return problem;
}

}  // namespace

TEST_CASE("inner grid cells have equal mass and sane targets") {
  DesignProblem problem;
  problem.prior = sparse_prior();
  problem.grid_size = 64;
  const InnerGrid grid = build_inner_grid(problem, 1.1);

  REQUIRE(grid.masses.size() == 64);
  REQUIRE(grid.boundaries.size() == 64);
  REQUIRE(grid.midpoints.size() == 64);
  REQUIRE(grid.targets.size() == 64);
  CHECK(grid.pinned == 0);

  double total = 0.0;
  for (double m : grid.masses) {
    CHECK(m == doctest::Approx(1.0 / 64.0).epsilon(1e-9));
    total += m;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grid.boundaries.front() == 0.0);
  CHECK(std::is_sorted(grid.boundaries.begin(), grid.boundaries.end()));
  for (std::size_t k = 0; k + 1 < 64; ++k)
    CHECK(grid.boundaries[k] < grid.midpoints[k]);

  // Targets are the conditional means E[B sign(Y) | |Y| = u]; for this prior
  // they are nonnegative, below the atom, and increasing in u.
  for (std::size_t k = 0; k < 64; ++k) {
    CHECK(grid.targets[k] >= 0.0);
    CHECK(grid.targets[k] < 2.125);
    const double direct = folded_posterior_target(problem.prior, 1.1,
                                                  grid.midpoints[k]);
    CHECK(grid.targets[k] == doctest::Approx(direct).epsilon(1e-12));
  }
  CHECK(std::is_sorted(grid.targets.begin(), grid.targets.end()));
  CHECK(grid.variance_floor >= 0.0);
  CHECK(grid.variance_floor < problem.prior.second_moment());
}

TEST_CASE("max-power grids pin every cell below the acceptance threshold") {
  DesignProblem problem;
  problem.prior = sparse_prior();
  problem.mode = DesignMode::MaxPower;
  problem.alpha = 0.1;
  problem.grid_size = 128;
  const double sigma = 1.1;
  const double threshold = normal_quantile(1.0 - 0.05) * sigma;

  const InnerGrid grid = build_inner_grid(problem, sigma);
  REQUIRE(grid.pinned > 0);
  CHECK(grid.boundaries[grid.pinned] == doctest::Approx(threshold).epsilon(1e-12));
  for (std::size_t k = 0; k < grid.pinned; ++k)
    CHECK(grid.midpoints[k] < threshold);

  const InnerSolution sol = solve_inner(problem, sigma);
  CHECK(sol.converged);
  for (std::size_t k = 0; k < grid.pinned; ++k) CHECK(sol.slopes[k] == 0.0);
  CHECK(sol.eta.zero_region_end() >= threshold - 1e-9);
}

TEST_CASE("inner gradient matches finite differences and the objective is convex") {
  DesignProblem problem;
  problem.prior = sparse_prior();
  problem.grid_size = 24;
  const InnerGrid grid = build_inner_grid(problem, 0.9);
  RngStream rng(31, 0);

  std::vector<double> s(24);
  for (double& v : s) v = rng.uniform();
  const std::vector<double> g = inner_gradient(grid, s);
  const double h = 1e-6;
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::vector<double> up = s, dn = s;
    up[k] += h;
    dn[k] -= h;
    const double fd = (inner_objective(grid, up) - inner_objective(grid, dn)) /
                      (2.0 * h);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5));
  }

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(24), b(24);
    for (double& v : a) v = rng.uniform();
    for (double& v : b) v = rng.uniform();
    const double theta = rng.uniform();
    std::vector<double> mix(24);
    for (std::size_t k = 0; k < 24; ++k)
      mix[k] = theta * a[k] + (1.0 - theta) * b[k];
    CHECK(inner_objective(grid, mix) <=
          theta * inner_objective(grid, a) +
              (1.0 - theta) * inner_objective(grid, b) + 1e-10);
  }
}

TEST_CASE("inner solver agrees with an independent certified qp solve") {
  DesignProblem problem;
  problem.prior = sparse_prior();
  problem.grid_size = 64;
  const double sigma = 1.05;

  const InnerSolution sol = solve_inner(problem, sigma);
  CHECK(sol.converged);
  CHECK(sol.derivative_expectation <= problem.prior.delta + 1e-9);

  const InnerGrid grid = build_inner_grid(problem, sigma);
  const oracle::QpOracleResult ref =
      oracle::solve_cell_qp(grid, problem.prior.delta, 30000);
  CHECK(ref.fw_gap <= 1e-8);
  CHECK(sol.cell_objective <= ref.objective + ref.fw_gap + 1e-9);
  CHECK(std::abs(sol.cell_objective - ref.objective) < 1e-6);
}

TEST_CASE("pure null prior admits the zero rule at zero cost") {
  DesignProblem problem = small_problem(null_prior());
  const InnerSolution sol = solve_inner(problem, 0.7);
  CHECK(sol.converged);
  CHECK(sol.objective < 1e-12);
  CHECK(sol.eta.zero_region_end() > 0.0);
}

TEST_CASE("gaussian prior reproduces the linear shrinkage rule") {
  PriorSpec prior;
  prior.gaussians = {{0.0, 1.0, 1.0}};
  prior.sigma_w = 1.0;
  prior.delta = 4.0;
  DesignProblem problem;
  problem.prior = prior;
  problem.grid_size = 256;
  const double sigma = 0.8;
  const double kappa = 1.0 / (1.0 + sigma * sigma);

  const InnerSolution sol = solve_inner(problem, sigma);
  CHECK(sol.converged);
  CHECK_FALSE(sol.budget_active);
  // Away from the extreme tail every cell slope is the posterior-mean slope.
  for (std::size_t k = 2; k + 2 < sol.slopes.size(); ++k)
    CHECK(sol.slopes[k] == doctest::Approx(kappa).epsilon(2e-2));
  CHECK(sol.objective ==
        doctest::Approx(kappa * sigma * sigma).epsilon(1e-3));
}

TEST_CASE("relaxing the budget can only lower the inner objective") {
  PriorSpec prior = sparse_prior();
  std::vector<double> objectives;
  for (double delta : {0.3, 0.64, 1.2}) {
    prior.delta = delta;
    DesignProblem problem;
    problem.prior = prior;
    problem.grid_size = 128;
    const InnerSolution sol = solve_inner(problem, 1.0);
    CHECK(sol.converged);
    CHECK(sol.derivative_expectation <= delta + 1e-9);
    if (sol.budget_active)
      CHECK(sol.derivative_expectation ==
            doctest::Approx(delta).epsilon(1e-6));
    objectives.push_back(sol.objective);
  }
  CHECK(objectives[1] <= objectives[0] + 1e-8);
  CHECK(objectives[2] <= objectives[1] + 1e-8);
}

TEST_CASE("degenerate signal collapses the design to the zero estimator") {
  const DesignResult res = solve_design(small_problem(null_prior()));
  CHECK(res.sigma_min == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(res.tau_min == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.predicted_mse == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(res.eta.zero_region_end() > 0.0);
  // The exported weight law cannot vanish: zero weights would mean least
  // squares, not the zero rule.  It degenerates to a single positive level.
  CHECK(res.lambda_star.min_value() >= 0.0);
  CHECK(res.lambda_star.max_value() ==
        doctest::Approx(res.lambda_star.min_value()).epsilon(1e-9));
  CHECK(res.lambda_star.max_value() > 0.0);
}

TEST_CASE("design fixed point round-trips through the exported weight law") {
  const DesignResult res = solve_design(small_problem(sparse_prior()));
  CHECK(res.crossings >= 1);
  CHECK_FALSE(res.boundary);
  CHECK(res.sigma_min > 0.25);
  CHECK(res.sigma_min < sigma_upper_bound(sparse_prior()));
  CHECK(res.tau_min >= 1.0);
  CHECK(res.predicted_mse ==
        doctest::Approx(0.64 * (res.sigma_min * res.sigma_min - 0.0625))
            .epsilon(1e-6));
  CHECK(validate_membership(res.eta).ok);

  SeOptions options;
  options.sigma0 = res.sigma_min;
  options.tau0 = res.tau_min;
  const SeSolution round = se_solve(sparse_prior(), res.lambda_star, options);
  CHECK(round.converged);
  CHECK(std::abs(round.sigma - res.sigma_min) / res.sigma_min < 0.01);
  CHECK(std::abs(round.tau - res.tau_min) / res.tau_min < 0.01);
}

TEST_CASE("max-power design hits the level and the closed-form power") {
  DesignProblem problem = small_problem(sparse_prior());
  problem.mode = DesignMode::MaxPower;
  problem.alpha = 0.1;
  const DesignResult res = solve_design(problem);

  CHECK(res.predicted_type_i == doctest::Approx(0.1).epsilon(1e-3));
  REQUIRE(res.predicted_power.has_value());
  const double q = normal_quantile(1.0 - 0.05);
  const double shift = 2.125 / res.sigma_min;
  const double formula = (1.0 - normal_cdf(q - shift)) + normal_cdf(-q - shift);
  CHECK(*res.predicted_power == doctest::Approx(formula).epsilon(2e-3));
  CHECK(res.sigma_min >= 0.25);
  CHECK(validate_membership(res.eta).ok);
}

TEST_CASE("constant and step-down weight families have the textbook form") {
  const RegularizationSequence lasso = lasso_sequence(1.0, 3);
  CHECK(lasso.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(lasso[i] == 1.0);
  CHECK(lasso_table(1.0)(0.3) == 1.0);
  CHECK(lasso_table(1.0)(1.0) == 1.0);

  const RegularizationSequence bhq = bhq_sequence(1.0, 1.0, 2);
  CHECK(bhq[0] == 0.0);
  CHECK(bhq[1] == doctest::Approx(0.6745).epsilon(1e-4));

  const RegularizationSequence longer = bhq_sequence(0.1, 1.3, 64);
  CHECK(longer[0] >= 0.0);
  for (std::size_t i = 1; i < 64; ++i) CHECK(longer[i] >= longer[i - 1]);

  // The tabulated law is the large-p limit of the sequence quantiles.
  const QuantileTable table = bhq_table(0.1, 1.3, 8192);
  for (double u : {0.2, 0.5, 0.8, 0.95}) {
    const double limit =
        1.3 * std::max(0.0, normal_quantile(1.0 - 0.1 * (1.0 - u) / 2.0));
    CHECK(table(u) == doctest::Approx(limit).epsilon(1e-3));
  }
  CHECK_THROWS_AS(bhq_sequence(2.5, 1.0, 8), std::invalid_argument);
  CHECK_THROWS_AS(bhq_sequence(0.0, 1.0, 8), std::invalid_argument);
}

TEST_CASE("baseline tuning is stable under grid refinement") {
  TuneOptions coarse;
  coarse.grid = 24;
  coarse.param_lo = 0.5;
  coarse.param_hi = 2.5;
  coarse.se.m = 1024;
  coarse.table_n = 1024;
  const TuneResult a = tune_baseline(sparse_prior(), BaselineFamily::Lasso, coarse);

  TuneOptions fine = coarse;
  fine.grid = 96;
  const TuneResult b = tune_baseline(sparse_prior(), BaselineFamily::Lasso, fine);

  CHECK(a.params.size() == 24);
  CHECK(b.params.size() == 96);
  CHECK(std::abs(a.sigma - b.sigma) < 1e-3);
  CHECK(a.mse == doctest::Approx(0.64 * (a.sigma * a.sigma - 0.0625))
                     .epsilon(1e-12));
  CHECK(a.param >= 0.5);
  CHECK(a.param <= 2.5);
}

TEST_CASE("tuning a null signal approaches the noise floor") {
  TuneOptions options;
  options.grid = 16;
  options.se.m = 1024;
  options.table_n = 1024;
  const TuneResult res =
      tune_baseline(null_prior(), BaselineFamily::Lasso, options);
  CHECK(res.sigma == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("no baseline beats the designed weights") {
  const DesignResult designed = solve_design(small_problem(sparse_prior()));
  TuneOptions options;
  options.grid = 16;
  options.se.m = 1024;
  options.table_n = 1024;
  const TuneResult bhq =
      tune_baseline(sparse_prior(), BaselineFamily::Bhq, options);
  CHECK(bhq.sigma >= designed.sigma_min - 1e-6);
}
