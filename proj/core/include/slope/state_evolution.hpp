#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "slope/distributions.hpp"
#include "slope/limiting_scalar.hpp"

namespace slope {

/// E[(f(B + sigma*Z) - B)^2] for B ~ prior, Z ~ N(0,1).  Piecewise-linear f
/// makes every term a truncated-Gaussian second moment, so the value is exact
/// up to roundoff (no quadrature grid).
double expected_squared_error(const PriorSpec& prior, double sigma,
                              const ScalarFunction& f);

/// Same expectation through Gauss-Hermite quadrature (n nodes per Gaussian
/// direction); retained as an independent cross-check of the closed form.
double expected_squared_error_quadrature(const PriorSpec& prior, double sigma,
                                         const ScalarFunction& f,
                                         std::size_t n = 64);

/// E[f'(B + sigma*Z)] by direct integration of the piecewise slopes against
/// the law of B + sigma*Z; exact up to roundoff.
double expected_derivative(const PriorSpec& prior, double sigma,
                           const ScalarFunction& f);

/// E[Z * f(B + sigma*Z)] / sigma, which equals E[f'(B + sigma*Z)] by
/// Gaussian integration by parts; quadrature-based cross-check.
double stein_expected_derivative(const PriorSpec& prior, double sigma,
                                 const ScalarFunction& f, std::size_t n = 64);

/// Upper end of the noise bracket: sqrt(sigma_w^2 + E[B^2]/delta), the
/// effective noise level when the estimator returns identically zero.
double sigma_upper_bound(const PriorSpec& prior);

/// Residuals of the two scalar fixed-point equations at a trial (sigma, tau):
///   r1 = sigma_w^2 + E[(eta(B+sigma*Z) - B)^2]/delta - sigma^2
///   r2 = tau * (1 - E[eta'(B+sigma*Z)]/delta) - 1
/// where eta is the scalar limit built from the laws of |B+sigma*Z| and of
/// tau-scaled weights.
struct SeResiduals {
  double r1 = 0.0;
  double r2 = 0.0;
};
SeResiduals se_rhs(const PriorSpec& prior, const QuantileTable& lambda_table,
                   double sigma, double tau, std::size_t m = 4096);

enum class SeMethod {
  Auto,      // damped iteration, bisection fallback on oscillation
  Damped,    // damped iteration only
  Bisection, // one-dimensional bisection with nested tau solve
};

struct SeOptions {
  std::size_t m = 4096;        // knots for the scalar limit
  double tol = 1e-10;          // convergence: max(|r1|, |r2|*sigma_w^2) < tol
  std::size_t max_iter = 500;
  double damping = 0.5;
  SeMethod method = SeMethod::Auto;
  /// Expectation engine.  0 selects the exact piecewise evaluation; a
  /// positive value selects Gauss-Hermite quadrature with that many nodes.
  std::size_t quadrature = 0;
  /// Starting point for the damped iteration; values <= 0 select the default
  /// (the sigma upper bound and tau = 1).  Warm starts cut the iteration
  /// count sharply when solving families of nearby problems.
  double sigma0 = 0.0;
  double tau0 = 0.0;
};

struct SeSolution {
  double sigma = 0.0;
  double tau = 0.0;
  ScalarFunction eta = ScalarFunction::zero();
  double mse = 0.0;  // E[(eta(B+sigma*Z)-B)^2] at the solution
  std::size_t iterations = 0;
  bool converged = false;
  bool used_bisection = false;
};

/// Solves the coupled (sigma, tau) fixed point for a given prior and weight
/// law.  Throws std::runtime_error when no admissible tau exists (the slope
/// budget E[eta'] >= delta for every tau) or when no bracket for sigma can be
/// found.
SeSolution se_solve(const PriorSpec& prior, const QuantileTable& lambda_table,
                    const SeOptions& options = {});

/// Asymptotic performance read off a scalar rule at noise level sigma:
/// mse = E[(eta(Y)-B)^2]; type_i = P(eta(sigma*Z) != 0) for a null
/// coordinate; power = P(eta(B+sigma*Z) != 0 | B != 0), absent when the
/// prior has no nonzero part.  The zero set of eta is read off its knots.
struct PredictedMetrics {
  double mse = 0.0;
  double type_i = 0.0;
  std::optional<double> power;
};
PredictedMetrics predicted_metrics(const PriorSpec& prior, double sigma,
                                   const ScalarFunction& eta);

}  // namespace slope
