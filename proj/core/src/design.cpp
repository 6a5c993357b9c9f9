#include "slope/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace slope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Cumulative objective/gradient core.  With use_targets false the same code
// applies the (positive semidefinite) quadratic part only, which is what the
// power iteration for the step size needs.
double objective_impl(const InnerGrid& grid, const std::vector<double>& s,
                      bool use_targets) {
  const std::size_t K = grid.masses.size();
  double acc = 0.0;
  double prefix = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double inner = prefix + s[k] * (grid.midpoints[k] - grid.boundaries[k]);
    double d = use_targets ? inner - grid.targets[k] : inner;
    acc += grid.masses[k] * d * d;
    if (k + 1 < K) {
      prefix += s[k] * (grid.boundaries[k + 1] - grid.boundaries[k]);
    }
  }
  return use_targets ? acc + grid.variance_floor : acc;
}

std::vector<double> gradient_impl(const InnerGrid& grid,
                                  const std::vector<double>& s,
                                  bool use_targets) {
  const std::size_t K = grid.masses.size();
  std::vector<double> r(K);
  double prefix = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double inner = prefix + s[k] * (grid.midpoints[k] - grid.boundaries[k]);
    double d = use_targets ? inner - grid.targets[k] : inner;
    r[k] = 2.0 * grid.masses[k] * d;
    if (k + 1 < K) {
      prefix += s[k] * (grid.boundaries[k + 1] - grid.boundaries[k]);
    }
  }
  std::vector<double> g(K);
  double suffix = 0.0;
  for (std::size_t k = K; k-- > 0;) {
    g[k] = (grid.midpoints[k] - grid.boundaries[k]) * r[k];
    g[k] += suffix * (k + 1 < K ? grid.boundaries[k + 1] - grid.boundaries[k]
                                : 0.0);
    suffix += r[k];
  }
  return g;
}

}  // namespace

InnerGrid build_inner_grid(const DesignProblem& problem, double sigma) {
  problem.prior.validate();
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("build_inner_grid: sigma must be > 0");
  }
  if (problem.grid_size < 8) {
    throw std::invalid_argument("build_inner_grid: grid_size must be >= 8");
  }
  const std::size_t K = problem.grid_size;
  std::vector<double> levels(K);
  for (std::size_t k = 0; k < K; ++k) {
    levels[k] = static_cast<double>(k) / static_cast<double>(K);
  }
  std::vector<double> boundaries =
      abs_signal_quantiles(problem.prior, sigma, levels);
  boundaries.front() = 0.0;

  if (problem.mode == DesignMode::MaxPower) {
    if (!(problem.alpha > 0.0 && problem.alpha < 1.0)) {
      throw std::invalid_argument("build_inner_grid: alpha must lie in (0,1)");
    }
    double y_star = normal_quantile(1.0 - 0.5 * problem.alpha) * sigma;
    auto it = std::lower_bound(boundaries.begin(), boundaries.end(), y_star);
    if (it == boundaries.end() ||
        std::abs(*it - y_star) > 1e-12 * (1.0 + y_star)) {
      boundaries.insert(it, y_star);
    }
  }

  InnerGrid grid;
  grid.boundaries = boundaries;
  const std::size_t B = boundaries.size();
  std::vector<double> level_at(B);
  for (std::size_t k = 0; k < B; ++k) {
    level_at[k] =
        k == 0 ? 0.0 : abs_signal_cdf(problem.prior, sigma, boundaries[k]);
  }
  std::vector<double> mid_levels(B);
  for (std::size_t k = 0; k < B; ++k) {
    double upper = k + 1 < B ? level_at[k + 1] : 1.0;
    mid_levels[k] = 0.5 * (level_at[k] + upper);
  }
  grid.midpoints = abs_signal_quantiles(problem.prior, sigma, mid_levels);
  grid.masses.resize(B);
  grid.targets.resize(B);
  for (std::size_t k = 0; k < B; ++k) {
    double upper = k + 1 < B ? level_at[k + 1] : 1.0;
    grid.masses[k] = std::max(0.0, upper - level_at[k]);
    grid.targets[k] =
        folded_posterior_target(problem.prior, sigma, grid.midpoints[k]);
  }
  if (problem.mode == DesignMode::MaxPower) {
    double y_star = normal_quantile(1.0 - 0.5 * problem.alpha) * sigma;
    std::size_t pinned = 0;
    while (pinned + 1 < B &&
           boundaries[pinned + 1] <= y_star * (1.0 + 1e-12)) {
      ++pinned;
    }
    grid.pinned = pinned;
  }
  double floor = problem.prior.second_moment();
  for (std::size_t k = 0; k < B; ++k) {
    floor -= grid.masses[k] * grid.targets[k] * grid.targets[k];
  }
  grid.variance_floor = floor;
  return grid;
}

double inner_objective(const InnerGrid& grid, const std::vector<double>& s) {
  if (s.size() != grid.masses.size()) {
    throw std::invalid_argument("inner_objective: slope count mismatch");
  }
  return objective_impl(grid, s, true);
}

std::vector<double> inner_gradient(const InnerGrid& grid,
                                   const std::vector<double>& s) {
  if (s.size() != grid.masses.size()) {
    throw std::invalid_argument("inner_gradient: slope count mismatch");
  }
  return gradient_impl(grid, s, true);
}

namespace {

// Euclidean projection onto {s in [0,1]^K, s_k = 0 for pinned k,
// sum_k masses_k s_k <= budget}: clip, then shift along the mass vector with
// one dual bisection when the budget binds.
std::vector<double> project_feasible(const InnerGrid& grid,
                                     std::vector<double> x, double budget) {
  const std::size_t K = grid.masses.size();
  auto clipped = [&](double nu, std::vector<double>& out) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double v = k < grid.pinned
                     ? 0.0
                     : std::clamp(x[k] - nu * grid.masses[k], 0.0, 1.0);
      out[k] = v;
      total += grid.masses[k] * v;
    }
    return total;
  };
  std::vector<double> s(K);
  if (clipped(0.0, s) <= budget) return s;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && clipped(hi, s) > budget; ++it) hi *= 2.0;
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    if (clipped(mid, s) > budget) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  clipped(hi, s);
  return s;
}

// Frank-Wolfe gap <g, s - c> with c the linear minimizer over the feasible
// set, found by a greedy fractional knapsack on the negative-gradient cells.
// Bounds the objective suboptimality at s, which the prox fixed-point
// residual alone cannot: near a flat face the iterate keeps crawling while
// the objective is long since settled.
double duality_gap(const InnerGrid& grid, const std::vector<double>& s,
                   const std::vector<double>& g, double budget) {
  const std::size_t K = grid.masses.size();
  double at_s = 0.0;
  for (std::size_t k = 0; k < K; ++k) at_s += g[k] * s[k];
  std::vector<std::size_t> order;
  order.reserve(K);
  for (std::size_t k = grid.pinned; k < K; ++k) {
    if (g[k] < 0.0) order.push_back(k);
  }
  // Descending value density -g_k/masses_k without dividing (masses can be 0;
  // zero-mass cells cost nothing and sort first).
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return g[a] * grid.masses[b] < g[b] * grid.masses[a];
  });
  double best = 0.0;
  double cap = budget;
  for (std::size_t k : order) {
    const double w = grid.masses[k];
    double take = 1.0;
    if (w > 0.0) {
      if (cap <= 0.0) break;
      take = std::min(1.0, cap / w);
      cap -= take * w;
    }
    best += g[k] * take;
  }
  return at_s - best;
}

InnerSolution solve_inner_impl(const DesignProblem& problem, double sigma,
                               const std::vector<double>* warm) {
  InnerGrid grid = build_inner_grid(problem, sigma);
  const std::size_t K = grid.masses.size();
  const double budget = problem.prior.delta;

  // Step size from the largest curvature of the quadratic part.
  std::vector<double> v(K, 1.0);
  double L = 1.0;
  for (int it = 0; it < 80; ++it) {
    std::vector<double> hv = gradient_impl(grid, v, false);
    double norm = 0.0;
    for (double h : hv) norm += h * h;
    norm = std::sqrt(norm);
    if (norm <= 0.0) break;
    double dot = 0.0;
    for (std::size_t k = 0; k < K; ++k) dot += v[k] * hv[k];
    L = std::max(dot, 1e-30);
    double vn = 0.0;
    for (std::size_t k = 0; k < K; ++k) vn += v[k] * v[k];
    L /= std::max(vn, 1e-300);
    for (std::size_t k = 0; k < K; ++k) v[k] = hv[k] / norm;
  }
  L = 1.05 * std::max(L, 1e-12);

  std::vector<double> s(K, 0.0);
  if (warm && warm->size() == K) {
    s = project_feasible(grid, *warm, budget);
  }
  std::vector<double> mom = s;
  double t = 1.0;
  double obj = objective_impl(grid, s, true);

  InnerSolution sol;
  const std::size_t max_iter = 20000;
  const double tol = 1e-9;  // objective error scales as the square of this
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::vector<double> g = gradient_impl(grid, mom, true);
    std::vector<double> step(K);
    for (std::size_t k = 0; k < K; ++k) step[k] = mom[k] - g[k] / L;
    std::vector<double> s_next = project_feasible(grid, step, budget);
    double obj_next = objective_impl(grid, s_next, true);
    if (obj_next > obj) {
      mom = s;
      t = 1.0;
      g = gradient_impl(grid, mom, true);
      for (std::size_t k = 0; k < K; ++k) step[k] = mom[k] - g[k] / L;
      s_next = project_feasible(grid, step, budget);
      obj_next = objective_impl(grid, s_next, true);
    }
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double shift = (t - 1.0) / t_next;
    for (std::size_t k = 0; k < K; ++k) {
      mom[k] = s_next[k] + shift * (s_next[k] - s[k]);
    }
    double move = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      move = std::max(move, std::abs(s_next[k] - s[k]));
    }
    s = std::move(s_next);
    obj = obj_next;
    t = t_next;
    sol.iterations = it + 1;
    if (move <= tol || (it % 8 == 7)) {
      std::vector<double> gs = gradient_impl(grid, s, true);
      std::vector<double> probe(K);
      for (std::size_t k = 0; k < K; ++k) probe[k] = s[k] - gs[k] / L;
      std::vector<double> fixed = project_feasible(grid, probe, budget);
      double res = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        res = std::max(res, std::abs(fixed[k] - s[k]));
      }
      // Either certificate will do: the prox fixed-point residual, or the
      // Frank-Wolfe gap when the iterate crawls along a flat face of the
      // feasible set (an active budget makes this common) with the objective
      // long since settled.
      if (res <= tol ||
          duality_gap(grid, s, gs, budget) <=
              1e-9 * std::max(1.0, std::abs(obj))) {
        sol.converged = true;
        break;
      }
    }
  }

  // Assemble the rule: knots at the cell boundaries, cumulative values, the
  // unbounded last cell supplies the tail slope.
  std::vector<double> knots = grid.boundaries;
  std::vector<double> values(K);
  values[0] = 0.0;
  for (std::size_t k = 1; k < K; ++k) {
    values[k] =
        values[k - 1] + s[k - 1] * (grid.boundaries[k] - grid.boundaries[k - 1]);
  }
  sol.eta = ScalarFunction(std::move(knots), std::move(values), s.back());
  sol.slopes = s;
  sol.cell_objective = objective_impl(grid, s, true);
  sol.objective = expected_squared_error(problem.prior, sigma, sol.eta);
  double used = 0.0;
  for (std::size_t k = 0; k < K; ++k) used += grid.masses[k] * s[k];
  sol.derivative_expectation = used;
  sol.budget_active = used >= budget - 1e-9;
  return sol;
}

}  // namespace

InnerSolution solve_inner(const DesignProblem& problem, double sigma) {
  return solve_inner_impl(problem, sigma, nullptr);
}

DesignResult solve_design(const DesignProblem& problem) {
  problem.prior.validate();
  if (problem.scan_points < 2) {
    throw std::invalid_argument("solve_design: scan_points must be >= 2");
  }
  const double sw = problem.prior.sigma_w;
  const double sw2 = sw * sw;
  const double delta = problem.prior.delta;
  const double sigma_hi = sigma_upper_bound(problem.prior);

  DesignResult result;
  std::vector<double> warm;
  auto F = [&](double sigma) {
    InnerSolution sol = solve_inner_impl(problem, sigma, &warm);
    warm = sol.slopes;
    return sol.objective - delta * (sigma * sigma - sw2);
  };

  const std::size_t S = problem.scan_points;
  result.scan_sigmas.resize(S);
  result.scan_values.resize(S);
  for (std::size_t j = 0; j < S; ++j) {
    double sigma = sw + (sigma_hi - sw) * static_cast<double>(j) /
                            static_cast<double>(S - 1);
    if (j == 0) sigma = std::max(sigma, sw * (1.0 + 1e-12));
    result.scan_sigmas[j] = sigma;
    result.scan_values[j] = F(sigma);
  }
  for (std::size_t j = 0; j + 1 < S; ++j) {
    if (result.scan_values[j] > 0.0 && result.scan_values[j + 1] <= 0.0) {
      ++result.crossings;
    }
  }

  double sigma_min;
  double zero_scale = std::max(1.0, problem.prior.second_moment());
  if (result.scan_values.front() <= 1e-12 * zero_scale) {
    // The objective already matches the excess-noise line at the lower
    // endpoint (signal-free or perfectly recoverable case).
    sigma_min = result.scan_sigmas.front();
  } else {
    std::size_t j = 0;
    while (j + 1 < S && !(result.scan_values[j] > 0.0 &&
                          result.scan_values[j + 1] <= 0.0)) {
      ++j;
    }
    if (j + 1 == S) {
      result.boundary = true;
      sigma_min = sigma_hi;
    } else {
      double lo = result.scan_sigmas[j];
      double hi = result.scan_sigmas[j + 1];
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (F(mid) > 0.0) {
          lo = mid;
        } else {
          hi = mid;
        }
        if (hi - lo <= problem.sigma_tol * std::max(1.0, hi)) break;
      }
      sigma_min = 0.5 * (lo + hi);
    }
  }

  InnerSolution final_sol = solve_inner_impl(problem, sigma_min, &warm);
  result.sigma_min = sigma_min;
  result.eta = final_sol.eta;
  result.budget_active = final_sol.budget_active;
  double denom = 1.0 - final_sol.derivative_expectation / delta;
  result.tau_min = denom > 1e-12 ? 1.0 / denom : 1e12;

  const std::size_t N = problem.lambda_samples;
  if (N < 2) {
    throw std::invalid_argument("solve_design: lambda_samples must be >= 2");
  }
  std::vector<double> levels(N);
  for (std::size_t j = 0; j < N; ++j) {
    levels[j] = (static_cast<double>(j) + 0.5) / static_cast<double>(N);
  }
  std::vector<double> ys =
      abs_signal_quantiles(problem.prior, sigma_min, levels);
  // Inside the zero region of eta any weight between y/tau and z0/tau
  // realizes the same limit; exporting the largest keeps every sub-threshold
  // coordinate strictly inside the zero set at finite p instead of exactly on
  // its boundary, where sampling noise would otherwise flip whole tied
  // blocks into spurious discoveries.
  double z0 = final_sol.eta.zero_region_end();
  double lambda_floor = std::isfinite(z0) ? z0 : ys.back();
  std::vector<double> lam(N);
  double prev = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    double v = std::max(lambda_floor, ys[j] - final_sol.eta(ys[j])) /
               result.tau_min;
    prev = std::max(prev, std::max(0.0, v));  // monotone, nonnegative
    lam[j] = prev;
  }
  result.lambda_star =
      QuantileTable(std::move(levels), std::move(lam), TableKind::Linear);

  PredictedMetrics metrics =
      predicted_metrics(problem.prior, sigma_min, final_sol.eta);
  result.predicted_mse = metrics.mse;
  result.predicted_type_i = metrics.type_i;
  result.predicted_power = metrics.power;
  return result;
}

RegularizationSequence lasso_sequence(double lambda0, std::size_t p) {
  if (!(lambda0 >= 0.0)) {
    throw std::invalid_argument("lasso_sequence: lambda0 must be >= 0");
  }
  return RegularizationSequence::constant(lambda0, p);
}

QuantileTable lasso_table(double lambda0) {
  if (!(lambda0 >= 0.0)) {
    throw std::invalid_argument("lasso_table: lambda0 must be >= 0");
  }
  return QuantileTable::constant(lambda0);
}

RegularizationSequence bhq_sequence(double q, double scale, std::size_t p) {
  if (!(q > 0.0 && q < 2.0)) {
    throw std::invalid_argument("bhq_sequence: q must lie in (0,2)");
  }
  if (!(scale > 0.0)) {
    throw std::invalid_argument("bhq_sequence: scale must be > 0");
  }
  if (p == 0) {
    throw std::invalid_argument("bhq_sequence: p must be positive");
  }
  std::vector<double> w(p);
  for (std::size_t i = 1; i <= p; ++i) {
    double level = 1.0 - static_cast<double>(p - i + 1) * q /
                             (2.0 * static_cast<double>(p));
    w[i - 1] = level <= 0.5 ? 0.0
                            : std::max(0.0, scale * normal_quantile(level));
  }
  return RegularizationSequence(std::move(w));
}

QuantileTable bhq_table(double q, double scale, std::size_t n) {
  if (!(q > 0.0 && q < 2.0)) {
    throw std::invalid_argument("bhq_table: q must lie in (0,2)");
  }
  if (!(scale > 0.0)) {
    throw std::invalid_argument("bhq_table: scale must be > 0");
  }
  return QuantileTable::from_function(
      [&](double u) {
        double level = 1.0 - 0.5 * (1.0 - u) * q;
        return level <= 0.5 ? 0.0
                            : std::max(0.0, scale * normal_quantile(level));
      },
      n);
}

TuneResult tune_baseline(const PriorSpec& prior, BaselineFamily family,
                         const TuneOptions& options) {
  prior.validate();
  if (options.grid < 2) {
    throw std::invalid_argument("tune_baseline: grid must be >= 2");
  }
  double scale_ref = sigma_upper_bound(prior);
  double lo = options.param_lo > 0.0 ? options.param_lo : 0.05 * scale_ref;
  double hi = options.param_hi > 0.0 ? options.param_hi : 6.0 * scale_ref;
  if (!(hi > lo && lo > 0.0)) {
    throw std::invalid_argument("tune_baseline: bad parameter range");
  }

  auto table_for = [&](double param) {
    return family == BaselineFamily::Lasso
               ? lasso_table(param)
               : bhq_table(options.bhq_q, param, options.table_n);
  };

  // Coarse pass over the whole grid with a reduced knot count and relaxed
  // tolerance, warm-starting each solve from its neighbor; the winner is then
  // re-solved at full resolution.
  SeOptions coarse = options.se;
  coarse.m = std::min<std::size_t>(coarse.m, 1024);
  coarse.tol = std::max(coarse.tol, 1e-8);

  TuneResult best;
  best.sigma = kInf;
  double best_tau = 0.0;
  best.params.resize(options.grid);
  best.sigmas.assign(options.grid, std::numeric_limits<double>::quiet_NaN());
  // Descending scan: large parameters solve in a few iterations (tau near 1)
  // and hand good warm starts down into the weak-regularization region.
  for (std::size_t step = 0; step < options.grid; ++step) {
    std::size_t i = options.grid - 1 - step;
    double param = lo * std::pow(hi / lo, static_cast<double>(i) /
                                              static_cast<double>(options.grid - 1));
    best.params[i] = param;
    try {
      SeSolution sol = se_solve(prior, table_for(param), coarse);
      if (!sol.converged) {
        coarse.sigma0 = 0.0;
        coarse.tau0 = 0.0;
        continue;
      }
      coarse.sigma0 = sol.sigma;
      coarse.tau0 = sol.tau;
      best.sigmas[i] = sol.sigma;
      if (sol.sigma < best.sigma) {
        best.sigma = sol.sigma;
        best_tau = sol.tau;
        best.param = param;
      }
    } catch (const std::runtime_error&) {
      coarse.sigma0 = 0.0;  // infeasible parameter; recorded as NaN
      coarse.tau0 = 0.0;
    }
  }
  if (!std::isfinite(best.sigma)) {
    throw std::runtime_error("tune_baseline: no grid point converged");
  }

  SeOptions fine = options.se;
  fine.sigma0 = best.sigma;
  fine.tau0 = best_tau;
  try {
    SeSolution sol = se_solve(prior, table_for(best.param), fine);
    if (sol.converged) best.sigma = sol.sigma;
  } catch (const std::runtime_error&) {
    // keep the coarse solution
  }
  best.mse = prior.delta * (best.sigma * best.sigma - prior.sigma_w * prior.sigma_w);
  return best;
}

}  // namespace slope
