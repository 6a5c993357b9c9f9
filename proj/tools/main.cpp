#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "slope/experiments.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::string out = "-";
  std::uint64_t seed = 0;
  int threads = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "JSON configuration file (see README for the schema)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--preset", args.preset,
                  "built-in configuration: fig2 or fig3");
  args.seed_opt = cmd->add_option(
      "--seed", args.seed,
      "RNG seed; overrides SLOPE_SEED and the configured trials.seed");
  cmd->add_option("--out", args.out, "output path, '-' for stdout");
  cmd->add_option("--threads", args.threads,
                  "worker threads, 0 selects the hardware count");
}

slope::ExperimentConfig load_config(const CommonArgs& args) {
  const bool has_config = !args.config_path.empty();
  const bool has_preset = !args.preset.empty();
  if (has_config == has_preset) {
    throw slope::ConfigError(
        "exactly one of --config and --preset is required");
  }
  if (has_preset) return slope::preset_config(args.preset);
  std::ifstream f(args.config_path, std::ios::binary);
  if (!f) {
    throw slope::ConfigError("cannot read config file: " + args.config_path);
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return slope::parse_config(ss.str());
}

struct SeedChoice {
  std::uint64_t value = 0;
  const char* source = "config";
};

SeedChoice resolve_seed(const CommonArgs& args,
                        const slope::ExperimentConfig& config) {
  if (args.seed_opt && args.seed_opt->count() > 0) {
    return {args.seed, "flag"};
  }
  if (const char* env = std::getenv("SLOPE_SEED")) {
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || env[0] == '-') {
      throw slope::ConfigError(
          "SLOPE_SEED must be a nonnegative integer, got \"" +
          std::string(env) + "\"");
    }
    return {static_cast<std::uint64_t>(v), "env:SLOPE_SEED"};
  }
  return {config.trials.seed, "config"};
}

void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

using Runner = std::string (*)(const slope::ExperimentConfig&, std::uint64_t,
                               int);

int run_csv_command(const char* name, const CommonArgs& args, Runner runner) {
  slope::ExperimentConfig config = load_config(args);
  SeedChoice seed = resolve_seed(args, config);
  std::cerr << slope::config_banner(config, name, seed.value, args.threads)
            << "seed_source: " << seed.source << "\n";
  write_output(args.out, runner(config, seed.value, args.threads));
  return 0;
}

int run_design_solve_command(const CommonArgs& args) {
  if (args.out == "-") {
    throw slope::ConfigError(
        "design-solve writes table files next to --out; a file path is "
        "required");
  }
  slope::ExperimentConfig config = load_config(args);
  SeedChoice seed = resolve_seed(args, config);
  std::cerr << slope::config_banner(config, "design-solve", seed.value,
                                    args.threads)
            << "seed_source: " << seed.source << "\n";
  slope::DesignSolveOutput out =
      slope::run_design_solve(config, seed.value, args.threads);
  std::string stem = args.out;
  if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, ".csv") == 0) {
    stem.resize(stem.size() - 4);
  }
  write_output(args.out, out.summary_csv);
  write_output(stem + "_eta.txt", out.eta_table);
  write_output(stem + "_lambda.txt", out.lambda_table);
  std::cerr << "wrote " << args.out << ", " << stem << "_eta.txt, " << stem
            << "_lambda.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Asymptotics workbench for sorted-L1 (slope) regression: proximal "
      "checks, risk prediction and weight-sequence design"};
  app.require_subcommand(1);

  CommonArgs a_prox, a_se, a_compare, a_fdr, a_solve;
  CLI::App* c_prox = app.add_subcommand(
      "prox-check", "Randomized optimality checks of the proximal mapping");
  add_common(c_prox, a_prox);
  CLI::App* c_se = app.add_subcommand(
      "se-vs-empirical",
      "Predicted risk of each weight sequence against Monte Carlo fits");
  add_common(c_se, a_se);
  CLI::App* c_compare = app.add_subcommand(
      "design-compare",
      "Designed weights against tuned lasso/bhq baselines over an snr x "
      "sparsity sweep");
  add_common(c_compare, a_compare);
  CLI::App* c_fdr = app.add_subcommand(
      "fdr-curve",
      "Power and realized error rates of max-power designs across levels");
  add_common(c_fdr, a_fdr);
  CLI::App* c_solve = app.add_subcommand(
      "design-solve",
      "Solve one design problem; writes a summary plus eta/lambda tables");
  add_common(c_solve, a_solve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_prox->parsed()) {
      return run_csv_command("prox-check", a_prox, slope::run_prox_check);
    }
    if (c_se->parsed()) {
      return run_csv_command("se-vs-empirical", a_se,
                             slope::run_se_vs_empirical);
    }
    if (c_compare->parsed()) {
      return run_csv_command("design-compare", a_compare,
                             slope::run_design_compare);
    }
    if (c_fdr->parsed()) {
      return run_csv_command("fdr-curve", a_fdr, slope::run_fdr_curve);
    }
    if (c_solve->parsed()) {
      return run_design_solve_command(a_solve);
    }
  } catch (const slope::ConfigError& e) {
    std::cerr << "config error: " << e.what();
    if (e.line() > 0) {
      std::cerr << " (line " << e.line() << ", column " << e.column() << ")";
    }
    std::cerr << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
