#include "slope/sorted_l1.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace slope {

RegularizationSequence::RegularizationSequence(std::vector<double> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty()) {
    throw std::invalid_argument("RegularizationSequence: empty weights");
  }
  double prev = 0.0;
  for (double w : weights_) {
    if (!(w >= prev)) {
      throw std::invalid_argument(
          "RegularizationSequence: weights must be nonnegative and "
          "nondecreasing");
    }
    prev = w;
  }
}

RegularizationSequence RegularizationSequence::constant(double value,
                                                        std::size_t p) {
  return RegularizationSequence(std::vector<double>(p, value));
}

RegularizationSequence RegularizationSequence::scaled(double c) const {
  if (!(c >= 0.0)) {
    throw std::invalid_argument(
        "RegularizationSequence::scaled: factor must be >= 0");
  }
  std::vector<double> w = weights_;
  for (double& v : w) v *= c;
  return RegularizationSequence(std::move(w));
}

double sorted_l1_norm(const RegularizationSequence& lambda,
                      const std::vector<double>& x) {
  if (lambda.size() != x.size()) {
    throw std::invalid_argument("sorted_l1_norm: size mismatch");
  }
  std::vector<double> mags(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::abs(x[i]);
  std::sort(mags.begin(), mags.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < mags.size(); ++i) acc += lambda[i] * mags[i];
  return acc;
}

std::vector<double> average_decreasing_runs(const std::vector<double>& g) {
  const std::size_t p = g.size();
  // Segment stack: starts[k] is the first index of segment k, sums[k] its
  // total.  Means are strictly increasing from bottom to top; a new value
  // whose mean does not exceed the top mean merges segments until the
  // invariant is restored, which averages every decreasing run exactly once.
  std::vector<std::size_t> starts;
  std::vector<double> sums;
  starts.reserve(p);
  sums.reserve(p);
  for (std::size_t i = 0; i < p; ++i) {
    starts.push_back(i);
    sums.push_back(g[i]);
    while (starts.size() > 1) {
      std::size_t k = starts.size() - 1;
      double len_top = static_cast<double>(i + 1 - starts[k]);
      double len_prev = static_cast<double>(starts[k] - starts[k - 1]);
      if (sums[k] * len_prev <= sums[k - 1] * len_top) {
        sums[k - 1] += sums[k];
        starts.pop_back();
        sums.pop_back();
      } else {
        break;
      }
    }
  }
  std::vector<double> out(p);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    std::size_t end = k + 1 < starts.size() ? starts[k + 1] : p;
    double mean = sums[k] / static_cast<double>(end - starts[k]);
    for (std::size_t i = starts[k]; i < end; ++i) out[i] = mean;
  }
  return out;
}

std::vector<double> prox(const RegularizationSequence& lambda,
                         const std::vector<double>& y) {
  const std::size_t p = y.size();
  if (lambda.size() != p) {
    throw std::invalid_argument("prox: size mismatch");
  }
  if (p == 0) return {};
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(y[a]) < std::abs(y[b]);
  });
  std::vector<double> g(p);
  for (std::size_t i = 0; i < p; ++i) {
    g[i] = std::abs(y[order[i]]) - lambda[i];
  }
  std::vector<double> averaged = average_decreasing_runs(g);
  std::vector<double> x(p);
  for (std::size_t i = 0; i < p; ++i) {
    double v = std::max(0.0, averaged[i]);
    x[order[i]] = y[order[i]] < 0.0 ? -v : v;
  }
  return x;
}

double moreau_envelope(const RegularizationSequence& lambda,
                       const std::vector<double>& x, double tau) {
  if (!(tau > 0.0)) {
    throw std::invalid_argument("moreau_envelope: tau must be > 0");
  }
  std::vector<double> v = prox(lambda.scaled(tau), x);
  double quad = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = x[i] - v[i];
    quad += d * d;
  }
  return quad / (2.0 * tau) + sorted_l1_norm(lambda, v);
}

bool prox_perturbation_within_bound(const RegularizationSequence& lambda1,
                                    const std::vector<double>& y1,
                                    const RegularizationSequence& lambda2,
                                    const std::vector<double>& y2,
                                    double tol) {
  if (lambda1.size() != lambda2.size() || y1.size() != y2.size() ||
      lambda1.size() != y1.size()) {
    throw std::invalid_argument("prox_perturbation_within_bound: size mismatch");
  }
  std::vector<double> x1 = prox(lambda1, y1);
  std::vector<double> x2 = prox(lambda2, y2);
  double dx = 0.0, dl = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    dx += (x1[i] - x2[i]) * (x1[i] - x2[i]);
    dl += (lambda1[i] - lambda2[i]) * (lambda1[i] - lambda2[i]);
    dy += (y1[i] - y2[i]) * (y1[i] - y2[i]);
  }
  return std::sqrt(dx) <= 2.0 * (std::sqrt(dl) + std::sqrt(dy)) + tol;
}

}  // namespace slope
