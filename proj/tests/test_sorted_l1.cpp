#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "slope/distributions.hpp"
#include "slope/sorted_l1.hpp"

using namespace slope;

namespace {

// Random nondecreasing nonnegative weights with occasional zeros and ties.
std::vector<double> random_weights(RngStream& rng, std::size_t p) {
  std::vector<double> w(p);
  const double mode = rng.uniform();
  for (std::size_t i = 0; i < p; ++i) {
    if (mode < 0.25) {
      w[i] = 0.7;  // constant
    } else if (mode < 0.5) {
      w[i] = i < p / 2 ? 0.2 : 1.2;  // two levels
    } else {
      w[i] = std::abs(rng.normal());
      if (rng.uniform() < 0.15) w[i] = 0.0;
    }
  }
  std::sort(w.begin(), w.end());
  return w;
}

std::vector<double> random_point(RngStream& rng, std::size_t p) {
  std::vector<double> y(p);
  for (double& v : y) v = 1.5 * rng.normal();
  if (p >= 2 && rng.uniform() < 0.3) {
    // Inject magnitude ties to stress the sort and merge paths.
    y[p - 1] = rng.uniform() < 0.5 ? y[0] : -y[0];
  }
  return y;
}

}  // namespace

TEST_CASE("weight sequences validate ordering and sign") {
  CHECK_NOTHROW(RegularizationSequence({0.0, 0.5, 0.5, 2.0}));
  CHECK_THROWS_AS(RegularizationSequence({1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(RegularizationSequence({-0.1, 0.5}), std::invalid_argument);

  RegularizationSequence c = RegularizationSequence::constant(1.5, 3);
  REQUIRE(c.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c[i] == 1.5);

  RegularizationSequence s = c.scaled(2.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == 3.0);
  CHECK_THROWS_AS(c.scaled(-1.0), std::invalid_argument);
}

TEST_CASE("norm pairs smallest weight with smallest magnitude") {
  RegularizationSequence lambda({1.0, 2.0});
  CHECK(sorted_l1_norm(lambda, {3.0, -1.0}) == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(sorted_l1_norm(lambda, {0.0, 0.0}) == 0.0);

  RegularizationSequence c = RegularizationSequence::constant(0.3, 4);
  const std::vector<double> x = {1.0, -2.0, 0.5, 0.0};
  CHECK(sorted_l1_norm(c, x) == doctest::Approx(0.3 * 3.5).epsilon(1e-14));

  CHECK_THROWS_AS(sorted_l1_norm(lambda, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("prox matches hand-worked cases") {
  const std::vector<double> y1 = {3.0, -1.0, 0.5};
  const std::vector<double> v1 = prox(RegularizationSequence::constant(1.0, 3), y1);
  REQUIRE(v1.size() == 3);
  CHECK(v1[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(v1[1] == 0.0);
  CHECK(v1[2] == 0.0);

  const std::vector<double> v2 =
      prox(RegularizationSequence({0.05, 1.0}), {1.0, 1.1});
  CHECK(v2[0] == doctest::Approx(0.525).epsilon(1e-12));
  CHECK(v2[1] == doctest::Approx(0.525).epsilon(1e-12));

  const std::vector<double> y3 = {0.4, -1.7, 0.0};
  const std::vector<double> v3 = prox(RegularizationSequence::constant(0.0, 3), y3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(v3[i] == y3[i]);

  CHECK_THROWS_AS(prox(RegularizationSequence::constant(1.0, 2), y3),
                  std::invalid_argument);
}

TEST_CASE("prox agrees with the enumeration oracle on small instances") {
  RngStream rng(2024, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t p = 2 + static_cast<std::size_t>(rng.next_u64() % 5);
    const std::vector<double> w = random_weights(rng, p);
    const std::vector<double> y = random_point(rng, p);
    const std::vector<double> got = prox(RegularizationSequence(w), y);
    const std::vector<double> want = oracle::prox_enumerate(w, y);
    for (std::size_t i = 0; i < p; ++i) {
      worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    CHECK(oracle::sorted_l1_objective(w, y, got) <=
          oracle::sorted_l1_objective(w, y, want) + 1e-12);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("single pass merge equals the literal repeated scan") {
  RngStream rng(77, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 1 + static_cast<std::size_t>(rng.next_u64() % 40);
    std::vector<double> g(p);
    for (double& v : g) {
      v = rng.normal();
      if (rng.uniform() < 0.2) v = std::round(v);  // plateaus and ties
    }
    const std::vector<double> fast = average_decreasing_runs(g);
    const std::vector<double> slow = oracle::average_runs_literal(g);
    double sum_in = 0.0, sum_out = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-10));
      if (i > 0) CHECK(fast[i] >= fast[i - 1] - 1e-12);
      sum_in += g[i];
      sum_out += fast[i];
    }
    CHECK(sum_out == doctest::Approx(sum_in).epsilon(1e-9));
  }
}

TEST_CASE("moreau envelope evaluates the infimum") {
  RegularizationSequence lambda({1.0, 1.0});
  CHECK(moreau_envelope(lambda, {0.0, 0.0}, 1.0) == doctest::Approx(0.0));
  CHECK(moreau_envelope(lambda, {2.0, 0.0}, 1.0) ==
        doctest::Approx(1.5).epsilon(1e-14));
  CHECK_THROWS_AS(moreau_envelope(lambda, {1.0, 1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(moreau_envelope(lambda, {1.0, 1.0}, -2.0), std::invalid_argument);

  // No perturbation of the minimizer may undercut the reported value.
  RngStream rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 4;
    const std::vector<double> w = random_weights(rng, p);
    std::vector<double> x(p);
    for (double& v : x) v = 2.0 * rng.normal();
    const double tau = 0.25 + 2.0 * rng.uniform();
    const double value = moreau_envelope(RegularizationSequence(w), x, tau);
    std::vector<double> v = prox(RegularizationSequence(w).scaled(tau), x);
    for (int probe = 0; probe < 200; ++probe) {
      std::vector<double> cand = v;
      for (double& c : cand) c += 1e-3 * rng.normal();
      double dist = 0.0;
      for (std::size_t i = 0; i < p; ++i) dist += (x[i] - cand[i]) * (x[i] - cand[i]);
      const double obj = dist / (2.0 * tau) +
                         sorted_l1_norm(RegularizationSequence(w), cand);
      CHECK(obj >= value - 1e-9);
    }
  }
}

TEST_CASE("perturbation bound holds on random pairs") {
  RngStream rng(31, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t p = 8;
    const std::vector<double> w1 = random_weights(rng, p);
    std::vector<double> w2 = w1;
    for (double& v : w2) v += 0.2 * rng.uniform();
    std::sort(w2.begin(), w2.end());
    const std::vector<double> y1 = random_point(rng, p);
    std::vector<double> y2 = y1;
    for (double& v : y2) v += 0.5 * rng.normal();
    CHECK(prox_perturbation_within_bound(RegularizationSequence(w1), y1,
                                         RegularizationSequence(w2), y2));
  }
  RegularizationSequence lambda({0.1, 0.4});
  const std::vector<double> y = {1.0, -2.0};
  CHECK(prox_perturbation_within_bound(lambda, y, lambda, y));
}

TEST_CASE("prox is nonexpansive and respects signs, order, permutations") {
  RngStream rng(47, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 2 + static_cast<std::size_t>(rng.next_u64() % 49);
    const std::vector<double> w = random_weights(rng, p);
    const RegularizationSequence lambda(w);
    const std::vector<double> y = random_point(rng, p);
    const std::vector<double> v = prox(lambda, y);

    std::vector<double> y2 = y;
    for (double& x : y2) x += 0.3 * rng.normal();
    const std::vector<double> v2 = prox(lambda, y2);
    double din = 0.0, dout = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      din += (y[i] - y2[i]) * (y[i] - y2[i]);
      dout += (v[i] - v2[i]) * (v[i] - v2[i]);
    }
    CHECK(std::sqrt(dout) <= std::sqrt(din) + 1e-12);

    std::vector<double> flipped(p);
    for (std::size_t i = 0; i < p; ++i) {
      flipped[i] = (i % 2 == 0 ? -1.0 : 1.0) * y[i];
    }
    const std::vector<double> vf = prox(lambda, flipped);
    for (std::size_t i = 0; i < p; ++i) {
      CHECK(vf[i] == doctest::Approx((i % 2 == 0 ? -1.0 : 1.0) * v[i]).epsilon(1e-12));
      CHECK(v[i] * y[i] >= 0.0);
    }

    std::vector<double> rotated(p);
    for (std::size_t i = 0; i < p; ++i) rotated[i] = y[(i + 1) % p];
    const std::vector<double> vr = prox(lambda, rotated);
    for (std::size_t i = 0; i < p; ++i) {
      CHECK(vr[i] == doctest::Approx(v[(i + 1) % p]).epsilon(1e-12));
    }

    for (int pair = 0; pair < 20; ++pair) {
      const std::size_t i = static_cast<std::size_t>(rng.next_u64() % p);
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % p);
      if (std::abs(y[i]) > std::abs(y[j])) {
        CHECK(std::abs(v[i]) >= std::abs(v[j]) - 1e-12);
      }
    }
  }
}
