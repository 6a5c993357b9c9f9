#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <optional>

#include "slope/distributions.hpp"
#include "slope/sorted_l1.hpp"

namespace slope {

/// One synthetic regression draw: y = A*beta + w with i.i.d. N(0, 1/n)
/// design entries, signal coordinates from the prior and noise N(0,
/// sigma_w^2).  n = round(delta * p).
struct LinearInstance {
  Eigen::MatrixXd A;
  Eigen::VectorXd y;
  Eigen::VectorXd beta;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

LinearInstance generate_instance(const PriorSpec& prior, std::size_t p,
                                 std::uint64_t seed, std::uint64_t stream = 0);

double slope_objective(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                       const RegularizationSequence& lambda,
                       const Eigen::VectorXd& b);

struct FitOptions {
  double tol = 1e-10;
  std::size_t max_iter = 20000;
};

struct FitResult {
  Eigen::VectorXd beta;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Minimizes 0.5*||y - A*b||^2 + J_lambda(b) by accelerated proximal
/// gradient: fixed step 1/L with L = ||A||_2^2 from power iteration,
/// Nesterov momentum restarted whenever the objective increases.  Stops when
/// the proximal fixed-point residual ||b - prox(b - grad/L)||/sqrt(p) drops
/// below tol, or when the relative objective change does.  The returned
/// iterate is a proximal output, so entries meant to be zero are exact
/// zeros.
FitResult fit(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
              const RegularizationSequence& lambda,
              const FitOptions& options = {});

/// Comparison of an estimate against the generating signal.  type_i is
/// absent when there are no true zeros, power when there are no true
/// nonzeros; fdp uses max(discoveries, 1) in the denominator.
struct SampleMetrics {
  double mse = 0.0;  // ||beta_hat - beta||^2 / p
  std::optional<double> type_i;
  std::optional<double> power;
  double fdp = 0.0;
  std::size_t discoveries = 0;
};
SampleMetrics sample_metrics(const Eigen::VectorXd& beta_hat,
                             const Eigen::VectorXd& beta_true,
                             double zero_tol = 1e-8);

}  // namespace slope
