#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace slope {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

double normal_pdf(double x);
double normal_cdf(double x);

/// Quantile of the standard normal law.  Rational initial guess refined by
/// two Newton steps on the erfc-based CDF; u must lie in (0, 1).
double normal_quantile(double u);

/// Deterministic random stream identified by (seed, stream_id).  Streams with
/// distinct ids are decorrelated by hashing the pair into the generator seed.
/// Normal variates use CDF inversion so draws depend only on this class and
/// the mt19937_64 engine, not on library distribution internals.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  /// Uniform draw in the open interval (0, 1).
  double uniform();
  /// Standard normal draw by quantile inversion.
  double normal();

 private:
  std::mt19937_64 gen_;
};

struct PriorAtom {
  double location = 0.0;
  double mass = 0.0;
};

struct PriorGaussian {
  double mean = 0.0;
  double sd = 1.0;  // must be > 0; use an atom for a point mass
  double mass = 0.0;
};

/// Scalar signal prior plus observation model.  Coordinates of the signal are
/// i.i.d. from the atom/Gaussian mixture, noise is N(0, sigma_w^2) per
/// observation, and n/p converges to delta.
struct PriorSpec {
  std::vector<PriorAtom> atoms;
  std::vector<PriorGaussian> gaussians;
  double sigma_w = 1.0;
  double delta = 1.0;

  /// Throws std::invalid_argument unless masses are nonnegative and sum to 1
  /// (tolerance 1e-12), Gaussian sds are positive, sigma_w > 0 and delta > 0.
  void validate() const;

  double second_moment() const;
  /// P(B != 0), i.e. 1 minus the mass of an atom exactly at zero.
  double sparsity() const;
  double draw(RngStream& rng) const;
};

enum class TableKind {
  Step,    // piecewise-constant inverse, for atomic distributions
  Linear,  // linear interpolation between grid points, for continuous laws
};

/// Tabulated quantile function.  grid holds probability levels in (0, 1],
/// strictly increasing; values holds the matching quantiles, nondecreasing.
/// Evaluation is the left-continuous generalized inverse
/// F^{-1}(u) = inf{x : F(x) >= u}; below the first grid point the first value
/// is returned, above the last the last value.
class QuantileTable {
 public:
  QuantileTable(std::vector<double> grid, std::vector<double> values,
                TableKind kind);

  /// Step table for a purely atomic law.  points are (value, mass) pairs;
  /// values must be strictly increasing and masses sum to 1.
  static QuantileTable from_atoms(
      const std::vector<std::pair<double, double>>& points);

  /// Constant law (single atom).
  static QuantileTable constant(double value);

  /// Linear table sampling a quantile function at u = i/(n+1), i = 1..n.
  template <class F>
  static QuantileTable from_function(F&& quantile, std::size_t n) {
    std::vector<double> grid(n), values(n);
    for (std::size_t i = 0; i < n; ++i) {
      grid[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
      values[i] = quantile(grid[i]);
    }
    return QuantileTable(std::move(grid), std::move(values), TableKind::Linear);
  }

  double operator()(double u) const;

  /// Quantile table of c*X for c >= 0.
  QuantileTable scaled(double c) const;

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  TableKind kind() const { return kind_; }
  double min_value() const { return values_.front(); }
  double max_value() const { return values_.back(); }

 private:
  std::vector<double> grid_;
  std::vector<double> values_;
  TableKind kind_;
};

/// Deterministic representative sample (F^{-1}(i/(p+1)))_{i=1..p}; the
/// empirical law of the output converges to the tabulated law as p grows.
std::vector<double> regular_sequence(const QuantileTable& table, std::size_t p);

/// Density, CDF and quantiles of Y = B + sigma*Z and of |Y|, with B from the
/// prior and Z standard normal, sigma > 0.
double signal_pdf(const PriorSpec& prior, double sigma, double y);
double signal_cdf(const PriorSpec& prior, double sigma, double y);
double abs_signal_cdf(const PriorSpec& prior, double sigma, double y);
/// Inverse of abs_signal_cdf by bracketed Newton; u in [0, 1).
double abs_signal_quantile(const PriorSpec& prior, double sigma, double u);
/// Batch version for an ascending list of levels; marches through the list
/// reusing each solution as the next bracket, so long sorted level lists
/// cost a few CDF evaluations per entry.
std::vector<double> abs_signal_quantiles(const PriorSpec& prior, double sigma,
                                         const std::vector<double>& levels);
/// Linear quantile table of |Y| on the grid u = i/(n+1).
QuantileTable abs_signal_table(const PriorSpec& prior, double sigma,
                               std::size_t n);

/// Posterior mean E[B | B + sigma*Z = y]; weights are combined in log space
/// so far-tail evaluation stays finite.
double posterior_mean(const PriorSpec& prior, double sigma, double y);
/// Posterior second moment E[B^2 | B + sigma*Z = y].
double posterior_second_moment(const PriorSpec& prior, double sigma, double y);

/// Conditional first moment m(u) = E[B * sign(Y) | |Y| = u] for u > 0.  This
/// is the pointwise least-squares target for odd functions of Y: among odd f,
/// E[(f(Y) - B)^2] is minimized by f(u) = m(u) on u > 0.
double folded_posterior_target(const PriorSpec& prior, double sigma, double u);

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Hermite rule in probabilist normalization: sum_i w_i f(z_i)
/// approximates E[f(Z)] for Z ~ N(0,1) and is exact for polynomials of degree
/// <= 2n-1.  Weights sum to 1.  n must lie in [1, 256].
Quadrature gauss_hermite(std::size_t n);

}  // namespace slope
