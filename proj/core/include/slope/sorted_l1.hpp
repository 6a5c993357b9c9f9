#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace slope {

/// Nondecreasing nonnegative weight sequence for the sorted-L1 penalty.
/// Weights pair with the magnitudes of the argument in matching sorted order:
/// the smallest weight multiplies the smallest magnitude.
class RegularizationSequence {
 public:
  /// Throws std::invalid_argument unless weights are >= 0 and nondecreasing.
  explicit RegularizationSequence(std::vector<double> weights);

  static RegularizationSequence constant(double value, std::size_t p);

  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }

  RegularizationSequence scaled(double c) const;

 private:
  std::vector<double> weights_;
};

/// J_lambda(x) = sum_i lambda_i * |x|_(i) with magnitudes sorted ascending.
double sorted_l1_norm(const RegularizationSequence& lambda,
                      const std::vector<double>& x);

/// Proximal mapping argmin_v 0.5*||v - y||^2 + J_lambda(v).
///
/// Works on the magnitudes in ascending order: forms g_i = |y|_(i) - lambda_i
/// and repeatedly replaces decreasing stretches by their average until the
/// sequence is nondecreasing, using a single pass with a merge stack (segment
/// means strictly increase from bottom to top at all times).  Negative
/// entries clip to zero and signs/order are restored at the end.  O(p log p)
/// from the sort; the averaging itself is O(p).
std::vector<double> prox(const RegularizationSequence& lambda,
                         const std::vector<double>& y);

/// The averaging core on an already-formed difference sequence g: returns the
/// nondecreasing sequence obtained by merging every decreasing stretch into
/// its mean (no clipping, no signs).  Exposed for reuse by the scalarization
/// routine, which feeds quantile grids rather than data vectors through it.
std::vector<double> average_decreasing_runs(const std::vector<double>& g);

/// Moreau envelope value min_v ||x - v||^2/(2*tau) + J_lambda(v), tau > 0.
/// The minimizer is prox with weights tau*lambda.
double moreau_envelope(const RegularizationSequence& lambda,
                       const std::vector<double>& x, double tau);

/// Checks the stability bound ||prox(lambda,y) - prox(lambda',y')||_2
/// <= 2*(||lambda - lambda'||_2 + ||y - y'||_2) + tol on a concrete pair.
/// Returns true when the bound holds.
bool prox_perturbation_within_bound(const RegularizationSequence& lambda1,
                                    const std::vector<double>& y1,
                                    const RegularizationSequence& lambda2,
                                    const std::vector<double>& y2,
                                    double tol = 1e-10);

}  // namespace slope
