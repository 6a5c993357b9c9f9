#include "slope/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace slope {

LinearInstance generate_instance(const PriorSpec& prior, std::size_t p,
                                 std::uint64_t seed, std::uint64_t stream) {
  prior.validate();
  if (p == 0) {
    throw std::invalid_argument("generate_instance: p must be positive");
  }
  auto n_signed = std::lround(prior.delta * static_cast<double>(p));
  if (n_signed < 1) {
    throw std::invalid_argument("generate_instance: delta*p rounds to zero");
  }
  const std::size_t n = static_cast<std::size_t>(n_signed);
  RngStream rng(seed, stream);

  LinearInstance inst;
  inst.seed = seed;
  inst.stream = stream;
  inst.beta.resize(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    inst.beta[static_cast<Eigen::Index>(i)] = prior.draw(rng);
  }
  Eigen::VectorXd noise(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    noise[static_cast<Eigen::Index>(i)] = prior.sigma_w * rng.normal();
  }
  // Column-major fill so the draw order is part of the instance contract.
  inst.A.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      inst.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          scale * rng.normal();
    }
  }
  inst.y = inst.A * inst.beta + noise;
  return inst;
}

double slope_objective(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                       const RegularizationSequence& lambda,
                       const Eigen::VectorXd& b) {
  Eigen::VectorXd r = y - A * b;
  std::vector<double> bv(b.data(), b.data() + b.size());
  return 0.5 * r.squaredNorm() + sorted_l1_norm(lambda, bv);
}

namespace {

Eigen::VectorXd apply_prox(const RegularizationSequence& lambda,
                           const Eigen::VectorXd& v) {
  std::vector<double> in(v.data(), v.data() + v.size());
  std::vector<double> out = prox(lambda, in);
  return Eigen::Map<const Eigen::VectorXd>(out.data(),
                                           static_cast<Eigen::Index>(out.size()));
}

double largest_squared_singular_value(const Eigen::MatrixXd& A) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols());
  v.normalize();
  double lam = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd u = A.transpose() * (A * v);
    double norm = u.norm();
    if (norm == 0.0) return 0.0;
    double lam_next = v.dot(u);
    u /= norm;
    if (it > 4 && std::abs(lam_next - lam) <= 1e-12 * std::abs(lam_next)) {
      return lam_next;
    }
    lam = lam_next;
    v = u;
  }
  return lam;
}

}  // namespace

FitResult fit(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
              const RegularizationSequence& lambda,
              const FitOptions& options) {
  const Eigen::Index p = A.cols();
  if (A.rows() != y.size()) {
    throw std::invalid_argument("fit: A and y dimensions disagree");
  }
  if (static_cast<Eigen::Index>(lambda.size()) != p) {
    throw std::invalid_argument("fit: weight sequence length must equal p");
  }
  const double L = 1.02 * std::max(largest_squared_singular_value(A), 1e-12);
  const RegularizationSequence lambda_step = lambda.scaled(1.0 / L);
  const double sqrt_p = std::sqrt(static_cast<double>(p));

  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd v = x;
  double t = 1.0;
  double obj = slope_objective(A, y, lambda, x);
  std::size_t small_change = 0;

  FitResult result;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    Eigen::VectorXd grad = A.transpose() * (A * v - y);
    Eigen::VectorXd x_next = apply_prox(lambda_step, v - grad / L);
    double obj_next = slope_objective(A, y, lambda, x_next);
    if (obj_next > obj) {
      // Momentum overshoot: restart from the last iterate.
      v = x;
      t = 1.0;
      grad = A.transpose() * (A * v - y);
      x_next = apply_prox(lambda_step, v - grad / L);
      obj_next = slope_objective(A, y, lambda, x_next);
    }
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    v = x_next + ((t - 1.0) / t_next) * (x_next - x);
    double change = std::abs(obj - obj_next);
    x = x_next;
    obj = obj_next;
    t = t_next;
    result.iterations = it + 1;

    small_change = change <= options.tol * std::max(1.0, std::abs(obj))
                       ? small_change + 1
                       : 0;
    bool check_now = small_change >= 3 || (it % 16 == 15);
    if (check_now) {
      Eigen::VectorXd g = A.transpose() * (A * x - y);
      double residual = (x - apply_prox(lambda_step, x - g / L)).norm() / sqrt_p;
      if (residual <= options.tol * std::max(1.0, x.norm() / sqrt_p)) {
        result.converged = true;
        break;
      }
      if (small_change >= 3) {
        // Objective has flatlined but the fixed point has not been reached;
        // keep iterating unless the plateau persists.
        if (small_change >= 64) {
          result.converged = true;
          break;
        }
      }
    }
  }
  result.beta = x;
  result.objective = obj;
  return result;
}

SampleMetrics sample_metrics(const Eigen::VectorXd& beta_hat,
                             const Eigen::VectorXd& beta_true,
                             double zero_tol) {
  if (beta_hat.size() != beta_true.size()) {
    throw std::invalid_argument("sample_metrics: size mismatch");
  }
  const Eigen::Index p = beta_hat.size();
  if (p == 0) {
    throw std::invalid_argument("sample_metrics: empty vectors");
  }
  SampleMetrics m;
  m.mse = (beta_hat - beta_true).squaredNorm() / static_cast<double>(p);
  std::size_t nulls = 0, signals = 0, false_disc = 0, true_disc = 0;
  for (Eigen::Index i = 0; i < p; ++i) {
    bool discovered = std::abs(beta_hat[i]) > zero_tol;
    if (beta_true[i] == 0.0) {
      ++nulls;
      if (discovered) ++false_disc;
    } else {
      ++signals;
      if (discovered) ++true_disc;
    }
  }
  m.discoveries = false_disc + true_disc;
  if (nulls > 0) {
    m.type_i = static_cast<double>(false_disc) / static_cast<double>(nulls);
  }
  if (signals > 0) {
    m.power = static_cast<double>(true_disc) / static_cast<double>(signals);
  }
  m.fdp = static_cast<double>(false_disc) /
          std::max<double>(static_cast<double>(m.discoveries), 1.0);
  return m;
}

}  // namespace slope
