#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "slope/experiments.hpp"
#include "slope/limiting_scalar.hpp"
#include "slope/state_evolution.hpp"

using namespace slope;

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::string parse_error_message(const std::string& json_text) {
  try {
    parse_config(json_text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kSmallConfig = R"({
  "prior": {"atoms": [{"location": 0, "mass": 0.75},
                      {"location": 2.125, "mass": 0.25}],
            "sigma_w": 0.25, "delta": 0.64},
  "trials": {"p": 64, "count": 3, "seed": 1},
  "se": {"m": 512},
  "sequences": [{"family": "lasso", "lambda0": 1.0}]
})";

}  // namespace

TEST_CASE("strict parsing rejects malformed configurations") {
  CHECK(parse_error_message(R"({"zap": 1})") == "unknown key \"zap\" in config");
  CHECK(parse_error_message(
            R"({"prior": {"atoms": [{"location": 0, "mass": 1, "label": "x"}],
                "sigma_w": 1, "delta": 1}})") ==
        "unknown key \"label\" in prior.atoms[0]");
  CHECK(parse_error_message(R"({"trials": {"p": 1}})") ==
        "trials.p: must be >= 2");
  CHECK(parse_error_message(R"({"trials": {"seed": -3}})") ==
        "trials.seed: expected a nonnegative integer");
  CHECK(parse_error_message(
            R"({"prior": {"atoms": [{"location": 0, "mass": 1}],
                          "sigma_w": 1, "delta": 1},
                "sweep": {"snr": [1], "rho": [0.5]}})") ==
        "sweep and an explicit prior mixture are mutually exclusive");
  CHECK(parse_error_message(
            R"({"sequences": [{"family": "bhq", "q": 2.5}]})") ==
        "sequences[0].q: must lie in (0,2)");
  CHECK(parse_error_message(R"({"fdr_alphas": [0.05, 1.0]})") ==
        "fdr_alphas: entries must lie in [0,1)");
  CHECK(parse_error_message(
            R"({"prox_check": {"sample_fraction": 0}})") ==
        "prox_check.sample_fraction: must lie in (0,1]");
  CHECK(parse_error_message(R"({"design": {"alpha": 1.0}})") ==
        "design.alpha: must lie in (0,1)");
  CHECK(parse_error_message(R"({"sequences": [{"family": "ridge"}]})") ==
        "sequences[0].family: must be \"lasso\", \"bhq\" or \"two_atom\"");

  // A zero testing level is allowed: it denotes the never-select rule.
  CHECK_NOTHROW(parse_config(R"({"fdr_alphas": [0.0, 0.2]})"));
}

TEST_CASE("json syntax errors carry the source position") {
  const std::string bad = "{\n  \"trials\": {\n    \"p\": 64,,\n  }\n}";
  try {
    parse_config(bad);
    FAIL("expected a parse failure");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
    CHECK(e.column() > 1);
    CHECK(std::string(e.what()).find("invalid JSON") != std::string::npos);
  }
}

TEST_CASE("presets resolve to stable configurations") {
  const ExperimentConfig fig3 = preset_config("fig3");
  const ExperimentConfig fig2 = preset_config("fig2");
  CHECK(config_hash(fig3) != config_hash(fig2));

  // Serialization closes the loop: parsing the resolved text reproduces
  // the exact configuration (and therefore the hash).
  const ExperimentConfig reparsed = parse_config(resolved_json(fig3));
  CHECK(resolved_json(reparsed) == resolved_json(fig3));
  CHECK(config_hash(reparsed) == config_hash(fig3));

  CHECK(fig3.prior.atoms.size() == 2);
  CHECK(fig3.prior.sigma_w == 0.25);
  CHECK(fig2.sweep.has_value());
  CHECK(fig2.sweep->snr.size() == 5);
  CHECK(fig2.sweep->rho.size() == 2);

  CHECK_THROWS_AS(preset_config("nope"), ConfigError);
}

TEST_CASE("numbers print in shortest round-trip form") {
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(0.25) == "0.25");
  CHECK(format_double(-2.0) == "-2");
  CHECK(format_double(std::nan("")) == "nan");
  CHECK(format_double(HUGE_VAL) == "inf");

  RngStream rng(77, 0);
  for (int i = 0; i < 200; ++i) {
    const double x = std::exp(40.0 * (rng.uniform() - 0.5)) *
                     (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.normal();
    CHECK(to_double(format_double(x)) == x);
  }
}

TEST_CASE("parallel for visits each index exactly once and rethrows") {
  const std::size_t n = 1000;
  std::vector<std::atomic<int>> hits(n);
  for (auto& h : hits) h = 0;
  parallel_for(n, 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) CHECK(h == 1);

  parallel_for(0, 4, [&](std::size_t) { FAIL("no work expected"); });

  CHECK_THROWS_AS(parallel_for(64, 3,
                               [&](std::size_t i) {
                                 if (i == 17) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("csv output is identical across reruns and thread counts") {
  const ExperimentConfig config = parse_config(kSmallConfig);
  const std::string a = run_se_vs_empirical(config, 5, 1);
  const std::string b = run_se_vs_empirical(config, 5, 1);
  const std::string c = run_se_vs_empirical(config, 5, 3);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.find('\r') == std::string::npos);

  const std::string other_seed = run_se_vs_empirical(config, 6, 1);
  CHECK(a != other_seed);

  const std::vector<std::string> lines = split_lines(a);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].rfind("# command=se-vs-empirical config_hash=", 0) == 0);
  CHECK(lines[0].find(" seed=5") != std::string::npos);
  CHECK(lines[1] ==
        "sequence,sigma,tau,mse_pred,mse_mc,mse_mc_sem,type_i_pred,type_i_mc,"
        "power_pred,power_mc,trials,se_converged,fits_converged");

  const std::vector<std::string> row = split_fields(lines[2]);
  REQUIRE(row.size() == 13);
  CHECK(row[0] == "lasso(lambda0=1)");
  CHECK(to_double(row[1]) > 0.25);   // solved noise level
  CHECK(row[11] == "1");             // state-evolution solve converged
  CHECK(row[12] == "3");             // all fits converged
}

TEST_CASE("an infeasible weight law is reported, not fatal") {
  std::string text = kSmallConfig;
  const std::string needle = "\"lambda0\": 1.0";
  text.replace(text.find(needle), needle.size(), "\"lambda0\": 0.0");
  const ExperimentConfig config = parse_config(text);

  const std::string csv = run_se_vs_empirical(config, 2, 1);
  const std::vector<std::string> lines = split_lines(csv);
  REQUIRE(lines.size() == 3);
  const std::vector<std::string> row = split_fields(lines[2]);
  REQUIRE(row.size() == 13);
  CHECK(row[1] == "nan");   // no prediction exists at delta < 1
  CHECK(row[11] == "0");
  CHECK(!row[4].empty());   // the monte carlo side still ran
  CHECK(std::isfinite(to_double(row[4])));
}

TEST_CASE("prox check reports gaps and sample triples") {
  const std::string text = R"({
    "prox_check": {"p": [32, 64], "seeds": 2, "sample_fraction": 0.25,
                   "lambda": {"family": "lasso", "lambda0": 0.5}}
  })";
  const ExperimentConfig config = parse_config(text);
  const std::string csv = run_prox_check(config, 11, 1);
  const std::vector<std::string> lines = split_lines(csv);
  REQUIRE(lines.size() >= 2);
  CHECK(lines[1] == "kind,p,seed,gap,y,prox,eta");

  std::size_t gap_rows = 0, sample_rows = 0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const std::vector<std::string> row = split_fields(lines[i]);
    REQUIRE(row.size() == 7);
    if (row[0] == "gap") {
      ++gap_rows;
      // Constant weights decouple the coordinates, so the scalar limit is
      // exact and the reported gap vanishes identically.
      CHECK(to_double(row[3]) < 1e-20);
    } else {
      REQUIRE(row[0] == "sample");
      ++sample_rows;
      CHECK(row[5] == row[6]);  // prox and its scalar limit agree bytewise
    }
  }
  CHECK(gap_rows == 4);
  CHECK(sample_rows == (32 / 4 + 64 / 4) * 2);
}

TEST_CASE("a zero testing level reduces to the never-select rule") {
  const std::string text = R"({
    "prior": {"atoms": [{"location": 0, "mass": 0.75},
                        {"location": 2.125, "mass": 0.25}],
              "sigma_w": 0.25, "delta": 0.64},
    "trials": {"p": 64, "count": 2, "seed": 1},
    "fdr_alphas": [0.0]
  })";
  const ExperimentConfig config = parse_config(text);
  const std::string csv = run_fdr_curve(config, 3, 1);
  const std::vector<std::string> lines = split_lines(csv);
  REQUIRE(lines.size() == 3);
  const std::vector<std::string> row = split_fields(lines[2]);
  REQUIRE(row.size() == 13);
  CHECK(row[0] == "0");
  const double sigma_hi = std::sqrt(0.0625 + 0.25 * 2.125 * 2.125 / 0.64);
  CHECK(to_double(row[1]) == doctest::Approx(sigma_hi).epsilon(1e-12));
  CHECK(row[2] == "1");             // tau
  CHECK(row[3] == "0");             // predicted type I
  CHECK(row[4] == "0");             // predicted power
  CHECK(to_double(row[5]) ==
        doctest::Approx(0.25 * 2.125 * 2.125).epsilon(1e-12));
  CHECK(row[6] == "0");             // observed type I
  CHECK(row[8] == "0");             // observed power
  CHECK(row[10] == "0");            // observed false discovery proportion
}

TEST_CASE("design compare emits one row per sweep point") {
  const std::string text = R"({
    "prior": {"sigma_w": 1.0, "delta": 0.64},
    "trials": {"p": 64, "count": 0, "seed": 1},
    "se": {"m": 256},
    "sweep": {"snr": [5.0], "rho": [0.25]},
    "baselines": {"grid": 8},
    "design": {"grid_size": 64, "scan_points": 5}
  })";
  const ExperimentConfig config = parse_config(text);
  const std::string csv = run_design_compare(config, 1, 1);
  const std::vector<std::string> lines = split_lines(csv);
  REQUIRE(lines.size() == 3);
  CHECK(lines[1] ==
        "snr,rho,mu,design_sigma,design_mse,design_mse_mc,design_mse_mc_sem,"
        "design_crossings,design_boundary,lasso_param,lasso_mse,lasso_mse_mc,"
        "lasso_mse_mc_sem,bhq_param,bhq_mse,bhq_mse_mc,bhq_mse_mc_sem,trials");

  const std::vector<std::string> row = split_fields(lines[2]);
  REQUIRE(row.size() == 18);
  CHECK(row[0] == "5");
  CHECK(row[1] == "0.25");
  CHECK(to_double(row[2]) ==
        doctest::Approx(std::sqrt(5.0 / 0.25)).epsilon(1e-12));
  const double design_sigma = to_double(row[3]);
  const double design_mse = to_double(row[4]);
  CHECK(design_mse ==
        doctest::Approx(0.64 * (design_sigma * design_sigma - 1.0))
            .epsilon(1e-9));
  CHECK(row[5].empty());   // no monte carlo columns when count = 0
  CHECK(row[17] == "0");
  // The solved design cannot lose to either tuned one-parameter family.
  CHECK(design_mse <= to_double(row[10]) + 1e-6);
  CHECK(design_mse <= to_double(row[14]) + 1e-6);
}

TEST_CASE("design solve produces linked summary and table artifacts") {
  const std::string text = R"({
    "prior": {"atoms": [{"location": 0, "mass": 0.75},
                        {"location": 2.125, "mass": 0.25}],
              "sigma_w": 0.25, "delta": 0.64},
    "design": {"grid_size": 64, "scan_points": 5}
  })";
  const ExperimentConfig config = parse_config(text);
  const DesignSolveOutput out = run_design_solve(config, 9, 1);

  const std::vector<std::string> lines = split_lines(out.summary_csv);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].rfind("# command=design-solve config_hash=", 0) == 0);
  CHECK(lines[1] ==
        "mode,alpha,delta,sigma_w,sigma_min,tau_min,mse,type_i,power,"
        "budget_active,crossings,boundary");
  const std::vector<std::string> row = split_fields(lines[2]);
  REQUIRE(row.size() == 12);
  CHECK(row[0] == "min_mse");
  CHECK(row[2] == "0.64");
  CHECK(row[3] == "0.25");
  const double sigma_min = to_double(row[4]);
  CHECK(sigma_min > 0.25);
  CHECK(to_double(row[5]) >= 1.0);

  // The eta table reloads as a member of the feasible class.
  const ScalarFunction eta = ScalarFunction::from_table(out.eta_table);
  CHECK(validate_membership(eta).ok);
  CHECK(out.eta_table.rfind("# command=design-solve", 0) == 0);

  // The weight-law table is a nondecreasing quantile function.
  const std::vector<std::string> lam = split_lines(out.lambda_table);
  REQUIRE(lam.size() == 2 + 4096);
  CHECK(lam[1] == "# columns: level lambda");
  double prev_u = 0.0, prev_v = -1.0;
  for (std::size_t i = 2; i < lam.size(); ++i) {
    std::istringstream ls(lam[i]);
    double u = 0.0, v = 0.0;
    REQUIRE((ls >> u >> v));
    CHECK(u > prev_u);
    CHECK(u < 1.0);
    CHECK(v >= prev_v - 1e-12);
    CHECK(v >= 0.0);
    prev_u = u;
    prev_v = v;
  }
}
