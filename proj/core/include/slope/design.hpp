#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "slope/distributions.hpp"
#include "slope/limiting_scalar.hpp"
#include "slope/sorted_l1.hpp"
#include "slope/state_evolution.hpp"

namespace slope {

enum class DesignMode {
  MinMse,    // minimize asymptotic MSE
  MaxPower,  // maximize power subject to asymptotic type-I level alpha
};

struct DesignProblem {
  PriorSpec prior;
  DesignMode mode = DesignMode::MinMse;
  double alpha = 0.1;            // type-I level, MaxPower mode only
  std::size_t grid_size = 2048;  // slope cells in the inner problem
  std::size_t scan_points = 33;  // resolution of the sigma scan
  double sigma_tol = 1e-9;       // bisection tolerance on sigma_min
  std::size_t eta_knots = 4096;  // knots when reconstructing eta tables
  std::size_t lambda_samples = 100000;  // stratified samples for lambda table
};

/// Discretization shared by the inner solver and its test oracles.  The
/// nonnegative axis is cut into equal-mass cells of the law of |Y|,
/// Y = B + sigma*Z; candidate functions are odd, piecewise linear, with one
/// free slope per cell (the last cell extends to infinity and its slope is
/// the tail slope).  In MaxPower mode the type-I threshold is inserted as an
/// extra cell boundary and every cell below it is pinned to slope zero, so
/// the constraint "eta vanishes on [-threshold, threshold]" is exact.
struct InnerGrid {
  std::vector<double> boundaries;  // t_0 = 0 < t_1 < ... < t_{K-1}
  std::vector<double> midpoints;   // median-in-mass point of each cell, K of them
  std::vector<double> masses;      // P(|Y| in cell k), sums to 1
  std::vector<double> targets;     // m(u_k) = E[B*sign(Y) | |Y| = u_k]
  std::size_t pinned = 0;          // leading cells constrained to slope 0
  double variance_floor = 0.0;     // E[B^2] - sum_k masses_k * targets_k^2
};

InnerGrid build_inner_grid(const DesignProblem& problem, double sigma);

/// Mean squared error of the slope vector under the cell midpoint rule:
/// sum_k masses_k * (S(u_k) - targets_k)^2 + variance_floor, where S is the
/// piecewise-linear primitive of the slopes.  This is the quadratic the
/// inner solver minimizes; exposed so independent solvers can share it.
double inner_objective(const InnerGrid& grid, const std::vector<double>& slopes);

/// Gradient of inner_objective with respect to the slopes.
std::vector<double> inner_gradient(const InnerGrid& grid,
                                   const std::vector<double>& slopes);

struct InnerSolution {
  ScalarFunction eta = ScalarFunction::zero();
  std::vector<double> slopes;
  double objective = 0.0;       // E[(eta(Y)-B)^2], exact piecewise evaluation
  double cell_objective = 0.0;  // inner_objective at the solution
  double derivative_expectation = 0.0;  // E[eta'(Y)] = sum_k masses_k*slopes_k
  bool budget_active = false;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Minimum of E[(eta(B+sigma*Z) - B)^2] over odd nondecreasing 1-Lipschitz
/// eta with E[eta'(B+sigma*Z)] <= delta (and, in MaxPower mode, eta = 0
/// inside the level-alpha acceptance region).  Solved as a box-constrained
/// quadratic in the per-cell slopes by accelerated projected gradient; the
/// budget halfspace is handled inside the projection by one dual bisection.
InnerSolution solve_inner(const DesignProblem& problem, double sigma);

struct DesignResult {
  double sigma_min = 0.0;
  double tau_min = 0.0;
  ScalarFunction eta = ScalarFunction::zero();
  QuantileTable lambda_star = QuantileTable::constant(0.0);
  double predicted_mse = 0.0;
  double predicted_type_i = 0.0;
  std::optional<double> predicted_power;
  /// Diagnostics from the root scan of F(sigma) = L(sigma) -
  /// delta*(sigma^2 - sigma_w^2): grid, values, number of sign changes seen.
  std::vector<double> scan_sigmas;
  std::vector<double> scan_values;
  int crossings = 0;
  bool boundary = false;  // no sign change; returned the upper endpoint
  bool budget_active = false;
};

/// Finds the smallest admissible noise level sigma_min in
/// [sigma_w, sigma_upper_bound] as the first sign change of F on an
/// ascending scan refined by bisection, then rebuilds the optimal rule at
/// sigma_min, calibrates tau_min = 1/(1 - E[eta']/delta) and exports the
/// weight law lambda* ~ (|Y| - eta(|Y|))/tau_min as a quantile table from
/// stratified samples of |Y|.
DesignResult solve_design(const DesignProblem& problem);

/// Constant weights (the L1 special case).
RegularizationSequence lasso_sequence(double lambda0, std::size_t p);
QuantileTable lasso_table(double lambda0);

/// Step-down normal-quantile weights lambda_i = scale * max(0,
/// Phi^{-1}(1 - (p - i + 1)*q/(2p))), i = 1..p (ascending), and the matching
/// limiting law tabulated at n grid points.
RegularizationSequence bhq_sequence(double q, double scale, std::size_t p);
QuantileTable bhq_table(double q, double scale, std::size_t n = 4096);

enum class BaselineFamily { Lasso, Bhq };

struct TuneOptions {
  std::size_t grid = 64;    // geometric parameter grid
  double param_lo = 0.0;    // <= 0 selects an automatic range
  double param_hi = 0.0;
  double bhq_q = 0.1;       // step-down level when tuning the scale
  SeOptions se;
  std::size_t table_n = 4096;  // resolution of the weight-law table
};

struct TuneResult {
  double param = 0.0;   // best family parameter found
  double sigma = 0.0;   // solved noise level at the best parameter
  double mse = 0.0;     // delta * (sigma^2 - sigma_w^2)
  std::vector<double> params;  // full grid, for diagnostics
  std::vector<double> sigmas;  // NaN where the solve failed
};

/// Grid search over the scalar family parameter minimizing the solved noise
/// level.  Throws std::runtime_error if the solve fails on the whole grid.
TuneResult tune_baseline(const PriorSpec& prior, BaselineFamily family,
                         const TuneOptions& options = {});

}  // namespace slope
