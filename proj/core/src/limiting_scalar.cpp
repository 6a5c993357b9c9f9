#include "slope/limiting_scalar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "detail/format.hpp"
#include "slope/sorted_l1.hpp"

namespace slope {

ScalarFunction::ScalarFunction(std::vector<double> knots,
                               std::vector<double> values, double tail_slope)
    : knots_(std::move(knots)),
      values_(std::move(values)),
      tail_slope_(tail_slope) {
  if (knots_.empty() || knots_.size() != values_.size()) {
    throw std::invalid_argument(
        "ScalarFunction: knots and values must be nonempty and equal length");
  }
  if (knots_.front() != 0.0 || values_.front() != 0.0) {
    throw std::invalid_argument(
        "ScalarFunction: first knot must be the origin with value 0");
  }
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!std::isfinite(knots_[i]) || !std::isfinite(values_[i])) {
      throw std::invalid_argument("ScalarFunction: entries must be finite");
    }
    if (i > 0 && !(knots_[i] > knots_[i - 1])) {
      throw std::invalid_argument(
          "ScalarFunction: knots must be strictly increasing");
    }
  }
  if (!std::isfinite(tail_slope_)) {
    throw std::invalid_argument("ScalarFunction: tail slope must be finite");
  }
}

ScalarFunction ScalarFunction::zero() {
  return ScalarFunction({0.0}, {0.0}, 0.0);
}

ScalarFunction ScalarFunction::identity() {
  return ScalarFunction({0.0, 1.0}, {0.0, 1.0}, 1.0);
}

ScalarFunction ScalarFunction::soft_threshold(double threshold) {
  if (!(threshold >= 0.0)) {
    throw std::invalid_argument(
        "ScalarFunction::soft_threshold: threshold must be >= 0");
  }
  if (threshold == 0.0) return identity();
  return ScalarFunction({0.0, threshold}, {0.0, 0.0}, 1.0);
}

double ScalarFunction::operator()(double y) const {
  double a = std::abs(y);
  double v;
  if (a >= knots_.back()) {
    v = values_.back() + tail_slope_ * (a - knots_.back());
  } else {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), a);
    std::size_t j = static_cast<std::size_t>(it - knots_.begin());
    // j >= 1 because a >= 0 = knots_[0], and j < size by the branch above.
    double t = (a - knots_[j - 1]) / (knots_[j] - knots_[j - 1]);
    v = values_[j - 1] + t * (values_[j] - values_[j - 1]);
  }
  return y < 0.0 ? -v : v;
}

double ScalarFunction::derivative(double y) const {
  double a = std::abs(y);
  if (a >= knots_.back()) return tail_slope_;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), a);
  std::size_t j = static_cast<std::size_t>(it - knots_.begin());
  return (values_[j] - values_[j - 1]) / (knots_[j] - knots_[j - 1]);
}

double ScalarFunction::zero_region_end() const {
  std::size_t z = 0;
  while (z + 1 < knots_.size() && values_[z + 1] <= 0.0) ++z;
  if (z + 1 == knots_.size()) {  // zero at every knot
    if (tail_slope_ <= 0.0) return std::numeric_limits<double>::infinity();
    return knots_.back();
  }
  return knots_[z];
}

std::string ScalarFunction::to_table() const {
  std::ostringstream out;
  out << "knot value\n";
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    out << detail::format_double(knots_[i]) << ' '
        << detail::format_double(values_[i]) << '\n';
  }
  out << "# tail_slope " << detail::format_double(tail_slope_) << '\n';
  return out.str();
}

ScalarFunction ScalarFunction::from_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> knots, values;
  double tail = 1.0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      if (ls >> key && key == "tail_slope") ls >> tail;
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // "knot value"
      continue;
    }
    std::istringstream ls(line);
    double k, v;
    if (!(ls >> k >> v)) {
      throw std::invalid_argument("ScalarFunction::from_table: bad row: " + line);
    }
    knots.push_back(k);
    values.push_back(v);
  }
  return ScalarFunction(std::move(knots), std::move(values), tail);
}

MembershipReport validate_membership(const ScalarFunction& f, double slack) {
  MembershipReport report;
  const auto& knots = f.knots();
  const auto& values = f.values();
  for (std::size_t i = 1; i < knots.size(); ++i) {
    double slope = (values[i] - values[i - 1]) / (knots[i] - knots[i - 1]);
    if (slope < -slack || slope > 1.0 + slack) {
      std::ostringstream msg;
      msg << "knot " << i << " (y=" << detail::format_double(knots[i])
          << "): slope " << detail::format_double(slope)
          << " outside [0,1]";
      report.violations.push_back(msg.str());
    }
  }
  if (f.tail_slope() < -slack || f.tail_slope() > 1.0 + slack) {
    std::ostringstream msg;
    msg << "tail: slope " << detail::format_double(f.tail_slope())
        << " outside [0,1]";
    report.violations.push_back(msg.str());
  }
  report.ok = report.violations.empty();
  return report;
}

LimitingEtaResult build_limiting_eta(const QuantileTable& abs_y,
                                     const QuantileTable& lambda_table,
                                     std::size_t m) {
  if (m < 2) {
    throw std::invalid_argument("build_limiting_eta: m must be >= 2");
  }
  if (abs_y.min_value() < 0.0) {
    throw std::invalid_argument(
        "build_limiting_eta: magnitude law must be nonnegative");
  }
  if (lambda_table.min_value() < 0.0) {
    throw std::invalid_argument(
        "build_limiting_eta: weight law must be nonnegative");
  }
  std::vector<double> ys = regular_sequence(abs_y, m);
  if (ys.back() <= 0.0) {
    // All sampled mass sits at zero; the limit is the zero function.
    return {ScalarFunction::zero(), true};
  }
  std::vector<double> lam = regular_sequence(lambda_table, m);
  std::vector<double> g(m);
  for (std::size_t i = 0; i < m; ++i) g[i] = ys[i] - lam[i];
  std::vector<double> averaged = average_decreasing_runs(g);

  std::vector<double> knots{0.0}, values{0.0};
  knots.reserve(m + 2);
  values.reserve(m + 2);
  std::size_t i = 0;
  while (i < m) {
    // Collapse ties in the magnitude grid (atoms of |Y|): the averaging has
    // already equalized their values, so one knot stands for the group.
    std::size_t j = i;
    double acc = 0.0;
    while (j < m && ys[j] == ys[i]) acc += averaged[j], ++j;
    double value = std::max(0.0, acc / static_cast<double>(j - i));
    if (ys[i] > knots.back()) {
      knots.push_back(ys[i]);
      values.push_back(value);
    }
    i = j;
  }
  // Past the sampled magnitudes a fresh point holds the top rank, so the rule
  // continues as max(last value, y - max weight): flat until the unit-slope
  // branch takes over.  Materialize the corner when it lies beyond the grid,
  // e.g. when a large constant weight keeps the whole grid at zero.
  const double corner = values.back() + lambda_table.max_value();
  if (corner > knots.back() + 1e-12 * (1.0 + std::abs(knots.back()))) {
    knots.push_back(corner);
    values.push_back(values.back());
  }
  return {ScalarFunction(std::move(knots), std::move(values), 1.0), false};
}

double separability_gap(const RegularizationSequence& lambda,
                        const std::vector<double>& y,
                        const ScalarFunction& eta) {
  if (y.empty()) {
    throw std::invalid_argument("separability_gap: empty input");
  }
  std::vector<double> x = prox(lambda, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double d = x[i] - eta(y[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

}  // namespace slope
