#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slope/design.hpp"
#include "slope/distributions.hpp"
#include "slope/solver.hpp"
#include "slope/state_evolution.hpp"

namespace slope {

/// Configuration parse/validation failure; line/column refer to the JSON
/// source when they are positive.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0, int column = 0);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// One weight-sequence family entry from the "sequences" list.
struct SequenceSpec {
  enum class Family { Lasso, Bhq, TwoAtom };
  Family family = Family::Lasso;
  double lambda0 = 1.0;              // lasso
  double q = 0.1, scale = 1.0;       // bhq
  double low = 0.0, high = 1.0, low_mass = 0.5;  // two_atom

  RegularizationSequence realize(std::size_t p) const;
  QuantileTable table(std::size_t n) const;
  std::string label() const;
};

struct TrialsSpec {
  std::size_t p = 1024;
  std::size_t count = 20;
  std::uint64_t seed = 1;
};

struct SweepSpec {
  std::vector<double> snr;  // E[B^2]/sigma_w^2 per grid point
  std::vector<double> rho;  // sparsity levels
};

struct BaselinesSpec {
  bool lasso = true;
  bool bhq = true;
  std::size_t grid = 64;
  double bhq_q = 0.1;
  double param_lo = 0.0;  // <= 0 selects an automatic range
  double param_hi = 0.0;
};

struct DesignSpec {
  DesignMode mode = DesignMode::MinMse;
  double alpha = 0.1;
  std::size_t grid_size = 2048;
  std::size_t scan_points = 33;
};

struct ProxCheckSpec {
  std::vector<std::size_t> p = {256, 1024, 4096};
  std::size_t seeds = 10;
  double sample_fraction = 0.03;
  SequenceSpec lambda;
};

struct FitSpec {
  double tol = 1e-10;
  std::size_t max_iter = 20000;
  double zero_tol = 1e-8;
};

struct SeSpec {
  std::size_t m = 4096;
  double tol = 1e-10;
  std::size_t max_iter = 500;
  double damping = 0.5;
};

struct ExperimentConfig {
  PriorSpec prior;  // mixture may be empty when a sweep fills it in
  TrialsSpec trials;
  SeSpec se;
  FitSpec fit;
  std::vector<SequenceSpec> sequences;
  std::optional<SweepSpec> sweep;
  BaselinesSpec baselines;
  DesignSpec design;
  std::vector<double> fdr_alphas = {0.05, 0.1, 0.2};
  ProxCheckSpec prox_check;
};

/// Strict parser: unknown keys anywhere are rejected, structural errors
/// carry the source line.  The prior mixture may be omitted only when
/// "sweep" is present.
ExperimentConfig parse_config(const std::string& json_text);

/// Built-in configurations "fig2" (point-mass sweep over SNR x sparsity)
/// and "fig3" (fixed two-atom prior with a unit lasso sequence).
ExperimentConfig preset_config(const std::string& name);

/// Canonical JSON text of a fully-resolved configuration; equal configs
/// serialize identically.
std::string resolved_json(const ExperimentConfig& config);

/// FNV-1a hash of resolved_json, stamped into every CSV header.
std::uint64_t config_hash(const ExperimentConfig& config);

/// Human-readable run banner: command, resolved configuration, seed, thread
/// count.
std::string config_banner(const ExperimentConfig& config, const char* command,
                          std::uint64_t seed, int threads);

/// Shortest round-trip decimal form of x, locale independent; used for every
/// numeric field in CSV and table output so reruns are byte identical.
std::string format_double(double x);

/// Runs fn(0..n-1) on `threads` workers (<= 0 picks the hardware count).
/// Work is pulled from an atomic counter; callers index results by task id
/// so output order never depends on scheduling.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

/// Subcommand drivers.  Each returns complete CSV text: one comment line
/// with command, config hash and seed, then a header row and LF-terminated
/// data rows.  Identical (config, seed) pairs produce byte identical output
/// at any thread count, which is why the comment line carries no thread
/// count.
std::string run_prox_check(const ExperimentConfig& config, std::uint64_t seed,
                           int threads);
std::string run_se_vs_empirical(const ExperimentConfig& config,
                                std::uint64_t seed, int threads);
std::string run_design_compare(const ExperimentConfig& config,
                               std::uint64_t seed, int threads);
std::string run_fdr_curve(const ExperimentConfig& config, std::uint64_t seed,
                          int threads);

struct DesignSolveOutput {
  std::string summary_csv;   // one-row summary of the solved design
  std::string eta_table;     // knot/value text table of the optimal rule
  std::string lambda_table;  // two-column quantile table of the weight law
};
DesignSolveOutput run_design_solve(const ExperimentConfig& config,
                                   std::uint64_t seed, int threads);

}  // namespace slope
