#include "slope/distributions.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace slope {

namespace {

constexpr double kSqrt2 = 1.414213562373095048801688724209698079;
constexpr double kLogSqrt2Pi = 0.918938533204672741780329736405617639;

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x - kLogSqrt2Pi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw std::invalid_argument("normal_quantile: u must lie in (0,1)");
  }
  // Rational approximation (relative error ~1e-9), then two Newton steps.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (u < p_low) {
    double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - p_low) {
    double q = u - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log1p(-u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    double err = normal_cdf(x) - u;
    double dens = normal_pdf(x);
    if (dens <= 0.0) break;
    x -= err / dens;
  }
  return x;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc909ull;
  (void)splitmix64(s);
  s ^= stream_id * 0x9e3779b97f4a7c15ull + 0x3c6ef372fe94f82bull;
  std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s))};
  gen_.seed(seq);
}

std::uint64_t RngStream::next_u64() { return gen_(); }

double RngStream::uniform() {
  // 53 random bits mapped to the open interval (0,1).
  std::uint64_t bits = gen_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1p-53;
}

double RngStream::normal() { return normal_quantile(uniform()); }

void PriorSpec::validate() const {
  double total = 0.0;
  for (const auto& atom : atoms) {
    if (!(atom.mass >= 0.0)) {
      throw std::invalid_argument("PriorSpec: atom mass must be >= 0");
    }
    if (!std::isfinite(atom.location)) {
      throw std::invalid_argument("PriorSpec: atom location must be finite");
    }
    total += atom.mass;
  }
  for (const auto& g : gaussians) {
    if (!(g.mass >= 0.0)) {
      throw std::invalid_argument("PriorSpec: component mass must be >= 0");
    }
    if (!(g.sd > 0.0)) {
      throw std::invalid_argument(
          "PriorSpec: Gaussian sd must be > 0 (use an atom for a point mass)");
    }
    total += g.mass;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("PriorSpec: component masses must sum to 1");
  }
  if (!(sigma_w > 0.0)) {
    throw std::invalid_argument("PriorSpec: sigma_w must be > 0");
  }
  if (!(delta > 0.0)) {
    throw std::invalid_argument("PriorSpec: delta must be > 0");
  }
}

double PriorSpec::second_moment() const {
  double m2 = 0.0;
  for (const auto& atom : atoms) m2 += atom.mass * atom.location * atom.location;
  for (const auto& g : gaussians) m2 += g.mass * (g.mean * g.mean + g.sd * g.sd);
  return m2;
}

double PriorSpec::sparsity() const {
  double null_mass = 0.0;
  for (const auto& atom : atoms) {
    if (atom.location == 0.0) null_mass += atom.mass;
  }
  return 1.0 - null_mass;
}

double PriorSpec::draw(RngStream& rng) const {
  double u = rng.uniform();
  double acc = 0.0;
  for (const auto& atom : atoms) {
    acc += atom.mass;
    if (u <= acc) return atom.location;
  }
  for (const auto& g : gaussians) {
    acc += g.mass;
    if (u <= acc) return g.mean + g.sd * rng.normal();
  }
  // Mass sums to 1 up to 1e-12; fall through to the last component.
  if (!gaussians.empty()) {
    const auto& g = gaussians.back();
    return g.mean + g.sd * rng.normal();
  }
  return atoms.back().location;
}

QuantileTable::QuantileTable(std::vector<double> grid,
                             std::vector<double> values, TableKind kind)
    : grid_(std::move(grid)), values_(std::move(values)), kind_(kind) {
  if (grid_.empty() || grid_.size() != values_.size()) {
    throw std::invalid_argument(
        "QuantileTable: grid and values must be nonempty and equal length");
  }
  double prev_u = 0.0;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (!(grid_[i] > prev_u && grid_[i] <= 1.0)) {
      throw std::invalid_argument(
          "QuantileTable: grid must be strictly increasing within (0,1]");
    }
    if (!std::isfinite(values_[i])) {
      throw std::invalid_argument("QuantileTable: values must be finite");
    }
    if (i > 0 && values_[i] < values_[i - 1]) {
      throw std::invalid_argument("QuantileTable: values must be nondecreasing");
    }
    prev_u = grid_[i];
  }
}

QuantileTable QuantileTable::from_atoms(
    const std::vector<std::pair<double, double>>& points) {
  if (points.empty()) {
    throw std::invalid_argument("QuantileTable::from_atoms: no atoms");
  }
  std::vector<double> grid, values;
  grid.reserve(points.size());
  values.reserve(points.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && !(points[i].first > points[i - 1].first)) {
      throw std::invalid_argument(
          "QuantileTable::from_atoms: atom values must be strictly increasing");
    }
    if (!(points[i].second > 0.0)) {
      throw std::invalid_argument(
          "QuantileTable::from_atoms: atom masses must be > 0");
    }
    acc += points[i].second;
    grid.push_back(acc);
    values.push_back(points[i].first);
  }
  if (std::abs(acc - 1.0) > 1e-12) {
    throw std::invalid_argument(
        "QuantileTable::from_atoms: masses must sum to 1");
  }
  grid.back() = 1.0;
  return QuantileTable(std::move(grid), std::move(values), TableKind::Step);
}

QuantileTable QuantileTable::constant(double value) {
  return from_atoms({{value, 1.0}});
}

double QuantileTable::operator()(double u) const {
  if (!(u > 0.0 && u < 1.0)) {
    if (u == 1.0) return values_.back();
    throw std::invalid_argument("QuantileTable: u must lie in (0,1]");
  }
  auto it = std::lower_bound(grid_.begin(), grid_.end(), u);
  if (it == grid_.end()) return values_.back();
  std::size_t j = static_cast<std::size_t>(it - grid_.begin());
  if (kind_ == TableKind::Step) return values_[j];
  if (*it == u || j == 0) return values_[j];
  double u0 = grid_[j - 1], u1 = grid_[j];
  double t = (u - u0) / (u1 - u0);
  return values_[j - 1] + t * (values_[j] - values_[j - 1]);
}

QuantileTable QuantileTable::scaled(double c) const {
  if (!(c >= 0.0)) {
    throw std::invalid_argument("QuantileTable::scaled: factor must be >= 0");
  }
  std::vector<double> values = values_;
  for (double& v : values) v *= c;
  return QuantileTable(grid_, std::move(values), kind_);
}

std::vector<double> regular_sequence(const QuantileTable& table,
                                     std::size_t p) {
  if (p == 0) {
    throw std::invalid_argument("regular_sequence: p must be positive");
  }
  std::vector<double> out(p);
  for (std::size_t i = 0; i < p; ++i) {
    out[i] = table(static_cast<double>(i + 1) / static_cast<double>(p + 1));
  }
  return out;
}

namespace {

struct ComponentView {
  double mass;
  double center;  // mean of the component's marginal in y
  double spread;  // sd of the marginal in y
  double post_mean_base;   // posterior mean = base + slope * (y - center)
  double post_mean_slope;
  double post_var;         // posterior variance (0 for atoms)
};

std::vector<ComponentView> component_views(const PriorSpec& prior,
                                           double sigma) {
  std::vector<ComponentView> views;
  views.reserve(prior.atoms.size() + prior.gaussians.size());
  for (const auto& atom : prior.atoms) {
    views.push_back({atom.mass, atom.location, sigma, atom.location, 0.0, 0.0});
  }
  for (const auto& g : prior.gaussians) {
    double v2 = g.sd * g.sd + sigma * sigma;
    double shrink = g.sd * g.sd / v2;
    views.push_back({g.mass, g.mean, std::sqrt(v2), g.mean, shrink,
                     shrink * sigma * sigma});
  }
  return views;
}

struct PosteriorEval {
  double log_density;  // log of the marginal density of Y at y
  double mean;         // E[B | Y = y]
  double second;       // E[B^2 | Y = y]
};

PosteriorEval eval_posterior(const PriorSpec& prior, double sigma, double y) {
  auto views = component_views(prior, sigma);
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& c = views[i];
    if (c.mass <= 0.0) {
      logs[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    double t = (y - c.center) / c.spread;
    logs[i] = std::log(c.mass) - 0.5 * t * t - std::log(c.spread) - kLogSqrt2Pi;
    max_log = std::max(max_log, logs[i]);
  }
  if (!std::isfinite(max_log)) {
    // All components vanished numerically; fall back to the closest center.
    std::size_t best = 0;
    double best_t = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < views.size(); ++i) {
      double t = std::abs((y - views[i].center) / views[i].spread);
      if (views[i].mass > 0.0 && t < best_t) { best_t = t; best = i; }
    }
    const auto& c = views[best];
    double m = c.post_mean_base + c.post_mean_slope * (y - c.center);
    return {-std::numeric_limits<double>::infinity(), m,
            c.post_var + m * m};
  }
  double z = 0.0, mean = 0.0, second = 0.0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!std::isfinite(logs[i])) continue;
    const auto& c = views[i];
    double w = std::exp(logs[i] - max_log);
    double m = c.post_mean_base + c.post_mean_slope * (y - c.center);
    z += w;
    mean += w * m;
    second += w * (c.post_var + m * m);
  }
  return {max_log + std::log(z), mean / z, second / z};
}

}  // namespace

double signal_pdf(const PriorSpec& prior, double sigma, double y) {
  double f = 0.0;
  for (const auto& c : component_views(prior, sigma)) {
    f += c.mass * normal_pdf((y - c.center) / c.spread) / c.spread;
  }
  return f;
}

double signal_cdf(const PriorSpec& prior, double sigma, double y) {
  double f = 0.0;
  for (const auto& c : component_views(prior, sigma)) {
    f += c.mass * normal_cdf((y - c.center) / c.spread);
  }
  return f;
}

double abs_signal_cdf(const PriorSpec& prior, double sigma, double y) {
  if (y <= 0.0) return 0.0;
  double f = 0.0;
  for (const auto& c : component_views(prior, sigma)) {
    f += c.mass * (normal_cdf((y - c.center) / c.spread) -
                   normal_cdf((-y - c.center) / c.spread));
  }
  return f;
}

namespace {

double abs_signal_pdf(const PriorSpec& prior, double sigma, double y) {
  double f = 0.0;
  for (const auto& c : component_views(prior, sigma)) {
    f += c.mass * (normal_pdf((y - c.center) / c.spread) +
                   normal_pdf((y + c.center) / c.spread)) /
         c.spread;
  }
  return f;
}

double abs_quantile_newton(const PriorSpec& prior, double sigma, double u,
                           double guess, double lo, double hi) {
  double y = std::clamp(guess, lo, hi);
  for (int it = 0; it < 100; ++it) {
    double err = abs_signal_cdf(prior, sigma, y) - u;
    if (err > 0.0) {
      hi = y;
    } else {
      lo = y;
    }
    double dens = abs_signal_pdf(prior, sigma, y);
    double step = dens > 0.0 ? err / dens : 0.0;
    double next = y - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - y) <= 1e-15 * std::max(1.0, std::abs(y))) {
      return next;
    }
    y = next;
  }
  return y;
}

}  // namespace

double abs_signal_quantile(const PriorSpec& prior, double sigma, double u) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("abs_signal_quantile: sigma must be > 0");
  }
  if (!(u >= 0.0 && u < 1.0)) {
    throw std::invalid_argument("abs_signal_quantile: u must lie in [0,1)");
  }
  if (u == 0.0) return 0.0;
  double hi = 1.0;
  for (int it = 0; it < 400 && abs_signal_cdf(prior, sigma, hi) < u; ++it) {
    hi *= 2.0;
  }
  return abs_quantile_newton(prior, sigma, u, 0.5 * hi, 0.0, hi);
}

std::vector<double> abs_signal_quantiles(const PriorSpec& prior, double sigma,
                                         const std::vector<double>& levels) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("abs_signal_quantiles: sigma must be > 0");
  }
  std::vector<double> out(levels.size());
  if (levels.empty()) return out;
  double u_top = levels.back();
  if (!(u_top >= 0.0 && u_top < 1.0)) {
    throw std::invalid_argument(
        "abs_signal_quantiles: levels must lie in [0,1)");
  }
  double hi = 1.0;
  for (int it = 0; it < 400 && abs_signal_cdf(prior, sigma, hi) < u_top; ++it) {
    hi *= 2.0;
  }
  double prev = 0.0;
  double prev_u = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    double u = levels[i];
    if (u < prev_u) {
      throw std::invalid_argument("abs_signal_quantiles: levels not ascending");
    }
    prev_u = u;
    if (u == 0.0) {
      out[i] = 0.0;
      continue;
    }
    double guess = i == 0 ? 0.5 * hi : prev;
    double y = abs_quantile_newton(prior, sigma, u, guess, prev, hi);
    out[i] = std::max(y, prev);  // monotone against roundoff
    prev = out[i];
  }
  return out;
}

QuantileTable abs_signal_table(const PriorSpec& prior, double sigma,
                               std::size_t n) {
  if (n == 0) {
    throw std::invalid_argument("abs_signal_table: n must be positive");
  }
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
  }
  std::vector<double> values = abs_signal_quantiles(prior, sigma, grid);
  return QuantileTable(std::move(grid), std::move(values), TableKind::Linear);
}

double posterior_mean(const PriorSpec& prior, double sigma, double y) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("posterior_mean: sigma must be > 0");
  }
  return eval_posterior(prior, sigma, y).mean;
}

double posterior_second_moment(const PriorSpec& prior, double sigma,
                               double y) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("posterior_second_moment: sigma must be > 0");
  }
  return eval_posterior(prior, sigma, y).second;
}

double folded_posterior_target(const PriorSpec& prior, double sigma,
                               double u) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("folded_posterior_target: sigma must be > 0");
  }
  if (!(u >= 0.0)) {
    throw std::invalid_argument("folded_posterior_target: u must be >= 0");
  }
  PosteriorEval pos = eval_posterior(prior, sigma, u);
  PosteriorEval neg = eval_posterior(prior, sigma, -u);
  double max_log = std::max(pos.log_density, neg.log_density);
  if (!std::isfinite(max_log)) return 0.0;
  double wp = std::exp(pos.log_density - max_log);
  double wn = std::exp(neg.log_density - max_log);
  return (wp * pos.mean - wn * neg.mean) / (wp + wn);
}

Quadrature gauss_hermite(std::size_t n) {
  if (n < 1 || n > 256) {
    throw std::invalid_argument("gauss_hermite: n must lie in [1,256]");
  }
  if (n == 1) return {{0.0}, {1.0}};
  // Golub-Welsch on the Jacobi matrix of the probabilist Hermite recurrence:
  // zero diagonal, off-diagonal sqrt(k).
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd sub(static_cast<Eigen::Index>(n - 1));
  for (std::size_t k = 1; k < n; ++k) {
    sub[static_cast<Eigen::Index>(k - 1)] = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub,
                                Eigen::DecompositionOptions::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("gauss_hermite: eigen decomposition failed");
  }
  Quadrature quad;
  quad.nodes.resize(n);
  quad.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index idx = static_cast<Eigen::Index>(i);
    quad.nodes[i] = solver.eigenvalues()[idx];
    double first = solver.eigenvectors()(0, idx);
    quad.weights[i] = first * first;
  }
  // Symmetrize: the rule is even, so enforce it exactly.
  for (std::size_t i = 0, j = n - 1; i < j; ++i, --j) {
    double node = 0.5 * (quad.nodes[j] - quad.nodes[i]);
    quad.nodes[i] = -node;
    quad.nodes[j] = node;
    double w = 0.5 * (quad.weights[i] + quad.weights[j]);
    quad.weights[i] = quad.weights[j] = w;
  }
  if (n % 2 == 1) quad.nodes[n / 2] = 0.0;
  double total = 0.0;
  for (double w : quad.weights) total += w;
  for (double& w : quad.weights) w /= total;
  return quad;
}

}  // namespace slope
