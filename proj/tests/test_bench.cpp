#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rebalance/bench.hpp"

using namespace rebalance;

namespace {

double sample_var(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("population noise variance follows the R^2 algebra") {
  BenchConfig cfg;
  cfg.n = 100000;
  Rng rng(1);
  const Population pop = generate_population(cfg, rng);
  const Matrix& x = pop.covariates.data();
  std::vector<double> noise(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) noise[i] = pop.y0[i] - x.row(static_cast<Eigen::Index>(i)).sum();
  // sigma^2 = p (1 - R^2) / R^2 = 10; the variance estimate has SE ~ 0.045.
  CHECK(std::abs(sample_var(noise) - 10.0) < 0.2);
  std::vector<double> entries(x.data(), x.data() + x.size());
  CHECK(std::abs(sample_var(entries) - 1.0) < 0.01);
}

TEST_CASE("constant effect equals the multiplier times sd(Y(0))") {
  BenchConfig cfg;
  cfg.n = 200;
  Rng rng(2);
  const Population pop = generate_population(cfg, rng);
  const double sd = std::sqrt(sample_var(pop.y0));
  CHECK(pop.tau == doctest::Approx(0.3 * sd).epsilon(1e-14));
  for (std::size_t i = 0; i < cfg.n; ++i) CHECK(pop.y1[i] - pop.y0[i] == doctest::Approx(pop.tau).epsilon(1e-12));

  cfg.effect_multiplier = 0.0;
  Rng rng2(2);
  const Population null_pop = generate_population(cfg, rng2);
  CHECK(null_pop.tau == 0.0);
  CHECK(null_pop.y1 == null_pop.y0);
}

TEST_CASE("config validation") {
  BenchConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.r_squared = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = BenchConfig{};
  cfg.n_rep = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = BenchConfig{};
  cfg.methods = {"seqpsrr"};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.sequential = SequentialBenchConfig{};
  cfg.n = 0;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.units() == 60);
  cfg.n = 50;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = BenchConfig{};
  cfg.enumerate = true;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.methods = {"cr"};
  CHECK_NOTHROW(cfg.validate());
  cfg = BenchConfig{};
  cfg.methods = {"annealing"};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("enumerated CR bench size equals the enumeration-derived rejection rate") {
  BenchConfig cfg;
  cfg.n = 8;
  cfg.p = 2;
  cfg.methods = {"cr"};
  cfg.enumerate = true;
  cfg.alpha = 0.1;
  cfg.seed = 3;
  cfg.time_bisection = false;
  const auto rows = run_bench(cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].n_rep == 70);

  Rng rng = Rng::stream(cfg.seed, 0);
  const Population pop = generate_population(cfg, rng);
  const auto all = oracle::all_assignments(8, 4);
  std::size_t rejected = 0;
  for (const auto& w_obs : all) {
    const double t_obs = std::abs(oracle::diff_in_means(pop.y0, w_obs));
    std::size_t count = 0;
    for (const auto& w : all) count += std::abs(oracle::diff_in_means(pop.y0, w)) >= t_obs;
    rejected += static_cast<double>(count) / 70.0 <= cfg.alpha;
  }
  CHECK(rows[0].size == static_cast<double>(rejected) / 70.0);
  // Every assignment observed once: the estimator's mean is exactly tau.
  CHECK(rows[0].bias < 1e-12);
}

TEST_CASE("CR at desk scale: SD from the finite-population formula, power near 0.3") {
  BenchConfig cfg;
  cfg.methods = {"cr"};
  cfg.time_bisection = false;
  const auto rows = run_bench(cfg);
  Rng rng = Rng::stream(cfg.seed, 0);
  const Population pop = generate_population(cfg, rng);
  // Constant effect: var(tau_hat) = S^2 (1/n_t + 1/n_c) under CR.
  const double sd_exact = std::sqrt(sample_var(pop.y0) * (1.0 / 50 + 1.0 / 50));
  const BenchRow& r = rows[0];
  INFO("sd " << r.sd << " (exact " << sd_exact << "), size " << r.size << ", power " << r.power
             << ", cp " << r.cp);
  CHECK(std::abs(r.sd / sd_exact - 1.0) < 0.15);
  CHECK(r.size <= 0.1);
  CHECK(r.power >= 0.18);
  CHECK(r.power <= 0.45);
  CHECK(r.cp >= 0.9);
  CHECK(r.iters_outer == doctest::Approx(1.0));
}

TEST_CASE("bench runs are deterministic and the CSV has the fixed header") {
  BenchConfig cfg;
  cfg.n = 30;
  cfg.n_rep = 5;
  cfg.b_frt = 50;
  cfg.methods = {"cr", "rr", "gps", "psrr"};
  cfg.p_a = 0.01;
  const auto a = run_bench(cfg), b = run_bench(cfg);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].method == cfg.methods[i]);
    CHECK(a[i].bias == b[i].bias);
    CHECK(a[i].sd == b[i].sd);
    CHECK(a[i].length == b[i].length);
    CHECK(a[i].iters_total == b[i].iters_total);
  }
  std::ostringstream out;
  write_bench_csv(out, a);
  const std::string text = out.str();
  CHECK(text.rfind("method,bias,sd,size,power,cp,length,t_sample,t_exact,t_bisect,iters_inner,"
                   "iters_outer,iters_total",
                   0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
}

TEST_CASE("sequential bench rows") {
  BenchConfig cfg;
  cfg.n = 0;
  cfg.sequential = SequentialBenchConfig{};
  cfg.methods = {"seqcr", "seqpsrr"};
  cfg.n_rep = 5;
  cfg.b_frt = 40;
  cfg.time_bisection = false;
  const auto rows = run_bench(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "seqcr");
  CHECK(rows[0].forced_stops == 0);
  CHECK(rows[1].iters_total > 0);
}
