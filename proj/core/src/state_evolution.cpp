#include "slope/state_evolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace slope {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Component {
  double mass;
  double center;   // mean of the marginal of Y for this component
  double spread;   // sd of that marginal
  double cm_base;  // E[B | Y=y] = cm_base + cm_slope * (y - center)
  double cm_slope;
  double cvar;     // Var(B | Y=y), constant per component
};

std::vector<Component> components(const PriorSpec& prior, double sigma) {
  std::vector<Component> out;
  out.reserve(prior.atoms.size() + prior.gaussians.size());
  for (const auto& a : prior.atoms) {
    if (a.mass <= 0.0) continue;
    out.push_back({a.mass, a.location, sigma, a.location, 0.0, 0.0});
  }
  for (const auto& g : prior.gaussians) {
    if (g.mass <= 0.0) continue;
    double v2 = g.sd * g.sd + sigma * sigma;
    double shrink = g.sd * g.sd / v2;
    out.push_back({g.mass, g.mean, std::sqrt(v2), g.mean, shrink,
                   shrink * sigma * sigma});
  }
  return out;
}

// Partial moments of N(c, s^2) over [l, u]: integrals of 1, y, y^2 against
// the density.  Infinite endpoints are allowed.
struct Moments {
  double m0, m1, m2;
};

Moments truncated_moments(double c, double s, double l, double u) {
  double tl = (l - c) / s;
  double tu = (u - c) / s;
  double Fl = std::isinf(tl) ? (tl < 0 ? 0.0 : 1.0) : normal_cdf(tl);
  double Fu = std::isinf(tu) ? (tu < 0 ? 0.0 : 1.0) : normal_cdf(tu);
  double fl = std::isinf(tl) ? 0.0 : normal_pdf(tl);
  double fu = std::isinf(tu) ? 0.0 : normal_pdf(tu);
  double d0 = Fu - Fl;
  double d1 = c * d0 - s * (fu - fl);
  double term_u = std::isfinite(u) ? (u + c) * fu : 0.0;
  double term_l = std::isfinite(l) ? (l + c) * fl : 0.0;
  double d2 = (c * c + s * s) * d0 - s * (term_u - term_l);
  return {d0, d1, d2};
}

// Enumerates the linear pieces of an odd piecewise-linear function over the
// whole real line as (l, u, intercept, slope) and feeds them to cb.
template <class Cb>
void for_each_piece(const ScalarFunction& f, Cb&& cb) {
  const auto& k = f.knots();
  const auto& v = f.values();
  for (std::size_t j = 1; j < k.size(); ++j) {
    double b = (v[j] - v[j - 1]) / (k[j] - k[j - 1]);
    double a = v[j - 1] - b * k[j - 1];
    cb(k[j - 1], k[j], a, b);
    cb(-k[j], -k[j - 1], -a, b);
  }
  double ts = f.tail_slope();
  double a_tail = v.back() - ts * k.back();
  cb(k.back(), kInf, a_tail, ts);
  cb(-kInf, -k.back(), -a_tail, ts);
}

}  // namespace

double expected_squared_error(const PriorSpec& prior, double sigma,
                              const ScalarFunction& f) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("expected_squared_error: sigma must be > 0");
  }
  double total = 0.0;
  for (const auto& c : components(prior, sigma)) {
    double comp = 0.0;
    for_each_piece(f, [&](double l, double u, double a, double b) {
      // Skip pieces whose mass under this component is below roundoff.
      double tl = (l - c.center) / c.spread;
      double tu = (u - c.center) / c.spread;
      if (tl > 10.0 || tu < -10.0) return;
      Moments mom = truncated_moments(c.center, c.spread, l, u);
      // (f(y) - E[B|y])^2 + Var(B|y) integrated over the piece; the
      // conditional mean is linear in y, so the difference is alpha + beta*y.
      double alpha = a - (c.cm_base - c.cm_slope * c.center);
      double beta = b - c.cm_slope;
      comp += alpha * alpha * mom.m0 + 2.0 * alpha * beta * mom.m1 +
              beta * beta * mom.m2 + c.cvar * mom.m0;
    });
    total += c.mass * comp;
  }
  return total;
}

double expected_squared_error_quadrature(const PriorSpec& prior, double sigma,
                                         const ScalarFunction& f,
                                         std::size_t n) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument(
        "expected_squared_error_quadrature: sigma must be > 0");
  }
  Quadrature quad = gauss_hermite(n);
  double total = 0.0;
  for (const auto& a : prior.atoms) {
    if (a.mass <= 0.0) continue;
    double comp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = f(a.location + sigma * quad.nodes[i]) - a.location;
      comp += quad.weights[i] * d * d;
    }
    total += a.mass * comp;
  }
  for (const auto& g : prior.gaussians) {
    if (g.mass <= 0.0) continue;
    double comp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double b = g.mean + g.sd * quad.nodes[i];
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double d = f(b + sigma * quad.nodes[j]) - b;
        inner += quad.weights[j] * d * d;
      }
      comp += quad.weights[i] * inner;
    }
    total += g.mass * comp;
  }
  return total;
}

double expected_derivative(const PriorSpec& prior, double sigma,
                           const ScalarFunction& f) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("expected_derivative: sigma must be > 0");
  }
  double total = 0.0;
  for (const auto& c : components(prior, sigma)) {
    double comp = 0.0;
    for_each_piece(f, [&](double l, double u, double /*a*/, double b) {
      if (b == 0.0) return;
      double tl = (l - c.center) / c.spread;
      double tu = (u - c.center) / c.spread;
      if (tl > 10.0 || tu < -10.0) return;
      double Fl = std::isinf(tl) ? (tl < 0 ? 0.0 : 1.0) : normal_cdf(tl);
      double Fu = std::isinf(tu) ? (tu < 0 ? 0.0 : 1.0) : normal_cdf(tu);
      comp += b * (Fu - Fl);
    });
    total += c.mass * comp;
  }
  return total;
}

double stein_expected_derivative(const PriorSpec& prior, double sigma,
                                 const ScalarFunction& f, std::size_t n) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument(
        "stein_expected_derivative: sigma must be > 0");
  }
  Quadrature quad = gauss_hermite(n);
  double total = 0.0;
  for (const auto& a : prior.atoms) {
    if (a.mass <= 0.0) continue;
    double comp = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      comp += quad.weights[j] * quad.nodes[j] * f(a.location + sigma * quad.nodes[j]);
    }
    total += a.mass * comp;
  }
  for (const auto& g : prior.gaussians) {
    if (g.mass <= 0.0) continue;
    double comp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double b = g.mean + g.sd * quad.nodes[i];
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        inner += quad.weights[j] * quad.nodes[j] * f(b + sigma * quad.nodes[j]);
      }
      comp += quad.weights[i] * inner;
    }
    total += g.mass * comp;
  }
  return total / sigma;
}

double sigma_upper_bound(const PriorSpec& prior) {
  return std::sqrt(prior.sigma_w * prior.sigma_w +
                   prior.second_moment() / prior.delta);
}

namespace {

struct EtaBuild {
  ScalarFunction eta = ScalarFunction::zero();
  double err = 0.0;    // E[(eta(Y) - B)^2]
  double deriv = 0.0;  // E[eta'(Y)]
};

EtaBuild build_with(const PriorSpec& prior, const QuantileTable& abs_y,
                    const QuantileTable& lambda_table, double sigma,
                    double tau, std::size_t m, std::size_t quadrature) {
  EtaBuild out;
  out.eta = build_limiting_eta(abs_y, lambda_table.scaled(tau), m).eta;
  out.err = quadrature == 0
                ? expected_squared_error(prior, sigma, out.eta)
                : expected_squared_error_quadrature(prior, sigma, out.eta,
                                                    quadrature);
  out.deriv = expected_derivative(prior, sigma, out.eta);
  return out;
}

EtaBuild build_at(const PriorSpec& prior, const QuantileTable& lambda_table,
                  double sigma, double tau, std::size_t m,
                  std::size_t quadrature) {
  QuantileTable abs_y = abs_signal_table(prior, sigma, m);
  return build_with(prior, abs_y, lambda_table, sigma, tau, m, quadrature);
}

// Solves tau*(1 - E[eta'_tau]/delta) = 1 at fixed sigma by bracketing and
// bisection; eta depends on tau through the scaled weight law, so each probe
// rebuilds it (against the one magnitude table, which depends on sigma only).
// Throws when no admissible tau exists.
double tau_for_sigma(const PriorSpec& prior, const QuantileTable& lambda_table,
                     double sigma, std::size_t m, std::size_t quadrature) {
  QuantileTable abs_y = abs_signal_table(prior, sigma, m);
  auto h = [&](double tau) {
    EtaBuild b =
        build_with(prior, abs_y, lambda_table, sigma, tau, m, quadrature);
    return tau * (1.0 - b.deriv / prior.delta) - 1.0;
  };
  double hi = 1.0;
  double h_hi = h(hi);
  int grow = 0;
  while (h_hi < 0.0 && grow < 200) {
    hi *= 2.0;
    h_hi = h(hi);
    ++grow;
  }
  if (h_hi < 0.0) {
    throw std::runtime_error(
        "se_solve: no admissible tau (slope budget saturated at every scale)");
  }
  double lo = hi > 1.0 ? hi / 2.0 : 0.0;
  if (lo > 0.0) {
    // Keep halving until the bracket's lower end is infeasible or tiny.
    while (lo > 1e-12 && h(lo) > 0.0) {
      hi = lo;
      lo /= 2.0;
    }
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (h(mid) >= 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
    if (hi - lo <= 1e-13 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

SeResiduals se_rhs(const PriorSpec& prior, const QuantileTable& lambda_table,
                   double sigma, double tau, std::size_t m) {
  if (!(sigma > 0.0) || !(tau > 0.0)) {
    throw std::invalid_argument("se_rhs: sigma and tau must be > 0");
  }
  prior.validate();
  EtaBuild b = build_at(prior, lambda_table, sigma, tau, m, 0);
  SeResiduals res;
  res.r1 = prior.sigma_w * prior.sigma_w + b.err / prior.delta - sigma * sigma;
  res.r2 = tau * (1.0 - b.deriv / prior.delta) - 1.0;
  return res;
}

SeSolution se_solve(const PriorSpec& prior, const QuantileTable& lambda_table,
                    const SeOptions& options) {
  prior.validate();
  if (lambda_table.min_value() < 0.0) {
    throw std::invalid_argument("se_solve: weight law must be nonnegative");
  }
  const double sw2 = prior.sigma_w * prior.sigma_w;
  const double delta = prior.delta;
  const double sigma_hi = sigma_upper_bound(prior);
  const double crit_scale = sw2;

  SeSolution sol;
  double sigma = options.sigma0 > 0.0 ? options.sigma0 : sigma_hi;
  double tau = options.tau0 > 0.0 ? options.tau0 : 1.0;
  double best_crit = kInf;
  std::size_t stalled = 0;
  bool need_fallback = options.method == SeMethod::Bisection;

  if (!need_fallback) {
    for (std::size_t it = 0; it < options.max_iter; ++it) {
      EtaBuild b = build_at(prior, lambda_table, sigma, tau, options.m,
                            options.quadrature);
      double r1 = sw2 + b.err / delta - sigma * sigma;
      double r2 = tau * (1.0 - b.deriv / delta) - 1.0;
      double crit = std::max(std::abs(r1), std::abs(r2) * crit_scale);
      sol.iterations = it + 1;
      if (crit < options.tol) {
        sol.sigma = sigma;
        sol.tau = tau;
        sol.eta = b.eta;
        sol.mse = b.err;
        sol.converged = true;
        return sol;
      }
      if (crit < best_crit * (1.0 - 1e-3)) {
        best_crit = crit;
        stalled = 0;
      } else if (++stalled > 50 && options.method == SeMethod::Auto) {
        need_fallback = true;
        break;
      }
      double g = options.damping;
      double sigma2_next = sw2 + b.err / delta;
      sigma = std::sqrt((1.0 - g) * sigma * sigma + g * sigma2_next);
      sigma = std::clamp(sigma, 1e-12 * prior.sigma_w + 0.0, 8.0 * sigma_hi);
      if (b.deriv < delta) {
        // Geometric damping: tau is a positive scale, and the target can sit
        // orders of magnitude away when the weight law is weak.
        double tau_next = 1.0 / (1.0 - b.deriv / delta);
        tau = std::pow(tau, 1.0 - g) * std::pow(tau_next, g);
      } else {
        tau *= 2.0;  // more shrinkage to bring the slope budget back
      }
    }
    if (!need_fallback && options.method == SeMethod::Damped) {
      sol.sigma = sigma;
      sol.tau = tau;
      EtaBuild b = build_at(prior, lambda_table, sigma, tau, options.m,
                            options.quadrature);
      sol.eta = b.eta;
      sol.mse = b.err;
      sol.converged = false;
      return sol;
    }
    if (!need_fallback) need_fallback = true;  // Auto hit max_iter
  }

  // Bisection on sigma with a nested tau solve.
  sol.used_bisection = true;
  auto value = [&](double s) {
    double t = tau_for_sigma(prior, lambda_table, s, options.m,
                             options.quadrature);
    EtaBuild b = build_at(prior, lambda_table, s, t, options.m,
                          options.quadrature);
    return std::tuple<double, double, EtaBuild>(
        sw2 + b.err / delta - s * s, t, std::move(b));
  };
  double lo = prior.sigma_w;
  double hi = sigma_hi;
  auto [f_hi, tau_hi_v, build_hi] = value(hi);
  int widen = 0;
  while (f_hi > 0.0 && widen < 8) {
    hi *= 2.0;
    std::tie(f_hi, tau_hi_v, build_hi) = value(hi);
    ++widen;
  }
  if (f_hi > 0.0) {
    throw std::runtime_error("se_solve: no sigma bracket found");
  }
  double mid = hi, f_mid = f_hi, tau_mid = tau_hi_v;
  EtaBuild build_mid = build_hi;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    mid = 0.5 * (lo + hi);
    std::tie(f_mid, tau_mid, build_mid) = value(mid);
    ++sol.iterations;
    if (std::abs(f_mid) < options.tol || hi - lo < 1e-14 * hi) break;
    if (f_mid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  sol.sigma = mid;
  sol.tau = tau_mid;
  sol.eta = build_mid.eta;
  sol.mse = build_mid.err;
  sol.converged = std::abs(f_mid) < options.tol;
  return sol;
}

PredictedMetrics predicted_metrics(const PriorSpec& prior, double sigma,
                                   const ScalarFunction& eta) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("predicted_metrics: sigma must be > 0");
  }
  PredictedMetrics out;
  out.mse = expected_squared_error(prior, sigma, eta);
  double z0 = eta.zero_region_end();
  out.type_i = std::isinf(z0) ? 0.0 : 2.0 * (1.0 - normal_cdf(z0 / sigma));
  double rho = prior.sparsity();
  if (rho > 0.0) {
    double acc = 0.0;
    auto tail_mass = [&](double mean, double sd) {
      if (std::isinf(z0)) return 0.0;
      return normal_cdf((-z0 - mean) / sd) + 1.0 - normal_cdf((z0 - mean) / sd);
    };
    for (const auto& a : prior.atoms) {
      if (a.location != 0.0) acc += a.mass * tail_mass(a.location, sigma);
    }
    for (const auto& g : prior.gaussians) {
      double sd = std::sqrt(g.sd * g.sd + sigma * sigma);
      acc += g.mass * tail_mass(g.mean, sd);
    }
    out.power = acc / rho;
  }
  return out;
}

}  // namespace slope
