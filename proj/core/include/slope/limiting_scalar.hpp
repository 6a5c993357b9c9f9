#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slope/distributions.hpp"
#include "slope/sorted_l1.hpp"

namespace slope {

/// Odd piecewise-linear scalar function given by knots on the nonnegative
/// axis.  knots[0] must be 0 with value 0; knots are strictly increasing.
/// Between knots the function is linear; beyond the last knot it continues
/// with slope tail_slope (1 by default, matching unit-slope growth of
/// soft-thresholding far in the tail; 0 keeps the function bounded, which is
/// what an identically-zero function needs).  Negative arguments use the odd
/// reflection f(-y) = -f(y).
///
/// The constructor checks structure only (ordering, finiteness, f(0) = 0).
/// Monotonicity and the slope range [0, 1] are semantic properties verified
/// separately by validate_membership, so ill-formed candidates can still be
/// represented and reported on.
class ScalarFunction {
 public:
  ScalarFunction(std::vector<double> knots, std::vector<double> values,
                 double tail_slope = 1.0);

  static ScalarFunction zero();
  static ScalarFunction identity();
  static ScalarFunction soft_threshold(double threshold);

  double operator()(double y) const;
  /// Right-slope of the segment containing |y| (slopes are even functions of
  /// the argument since the function is odd).
  double derivative(double y) const;

  /// Largest z such that the function vanishes on [0, z]; +infinity when the
  /// function is identically zero.
  double zero_region_end() const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }
  double tail_slope() const { return tail_slope_; }

  /// Two-column "knot value" text block, one row per knot, with a header row
  /// and the tail slope recorded in a trailing comment line.
  std::string to_table() const;
  static ScalarFunction from_table(const std::string& text);

 private:
  std::vector<double> knots_;
  std::vector<double> values_;
  double tail_slope_;
};

struct MembershipReport {
  bool ok = true;
  std::vector<std::string> violations;  // one message per offending knot
};

/// Verifies membership in the class of odd nondecreasing 1-Lipschitz
/// functions: values nondecreasing and every slope (including the tail)
/// within [-slack, 1 + slack].
MembershipReport validate_membership(const ScalarFunction& f,
                                     double slack = 1e-9);

struct LimitingEtaResult {
  ScalarFunction eta;
  /// Set when the magnitude table is degenerate (all mass at zero); eta is
  /// then identically zero.
  bool degenerate = false;
};

/// Scalar limit of the sorted-L1 proximal mapping for magnitude law abs_y
/// (the law of |Y|) and weight law lambda_table.
///
/// Both laws are represented through their quantile tables.  The
/// construction samples each at the regular grid i/(m+1), forms the
/// differences g_i = |y|_(i) - lambda_i, pushes them through the same
/// decreasing-run averaging used by the vector proximal mapping, clips at
/// zero, and returns the odd piecewise-linear interpolant through the
/// resulting (|y|_(i), g_i^+) knots.  Ties in the magnitude grid (atoms of
/// |Y|) collapse to a single knot; the averaging has already equalized their
/// values.  The result is odd, nondecreasing and 1-Lipschitz up to roundoff.
LimitingEtaResult build_limiting_eta(const QuantileTable& abs_y,
                                     const QuantileTable& lambda_table,
                                     std::size_t m = 4096);

/// Mean squared gap (1/p) * sum_i (prox(lambda, y)_i - eta(y_i))^2 between
/// the vector proximal mapping and the scalar function applied entrywise.
double separability_gap(const RegularizationSequence& lambda,
                        const std::vector<double>& y,
                        const ScalarFunction& eta);

}  // namespace slope
