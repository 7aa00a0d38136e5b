#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rebalance/bench.hpp"
#include "rebalance/inference.hpp"

using namespace rebalance;

namespace {

Assignment bits(std::initializer_list<int> v) {
  std::vector<std::uint8_t> w;
  for (int b : v) w.push_back(static_cast<std::uint8_t>(b));
  return Assignment(std::move(w));
}

DesignSpec cr_spec(std::size_t n_t) {
  DesignSpec s;
  s.method = Method::CR;
  s.n_t = n_t;
  return s;
}

DesignSpec psrr_spec(std::size_t n_t) {
  DesignSpec s;
  s.method = Method::PSRR;
  s.n_t = n_t;
  s.threshold_mode = ThresholdMode::AcceptanceProbability;
  s.a_or_pa = 0.001;
  return s;
}

std::vector<double> random_outcomes(std::size_t n, std::uint64_t seed, bool integer = false) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<double> y(n);
  for (auto& v : y) v = integer ? std::round(dist(gen)) : dist(gen);
  return y;
}

}  // namespace

TEST_CASE("difference in means: examples and sign symmetry") {
  const std::vector<double> y{3, 1};
  CHECK(diff_in_means(y, bits({1, 0})) == 2.0);
  const std::vector<double> flat(6, 4.2);
  CHECK(diff_in_means(flat, bits({1, 0, 1, 0, 1, 0})) == 0.0);
  std::mt19937_64 gen(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto yr = random_outcomes(15, static_cast<std::uint64_t>(rep));
    const Assignment w = oracle::random_assignment(15, 6, gen);
    CHECK(diff_in_means(yr, w) == doctest::Approx(-diff_in_means(yr, w.complement())).epsilon(1e-12));
    CHECK(diff_in_means(yr, w) == doctest::Approx(oracle::diff_in_means(yr, w)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(diff_in_means(y, bits({1, 0, 0})), DimensionMismatch);
  CHECK_THROWS_AS(diff_in_means(y, bits({1, 1})), DomainError);
}

TEST_CASE("enumeration lists every assignment once in lexicographic order") {
  const auto mine = enumerate_assignments(8, 4);
  const auto ref = oracle::all_assignments(8, 4);
  REQUIRE(mine.size() == 70);
  CHECK(mine == ref);
  CHECK_THROWS_AS(enumerate_assignments(30, 15, 1000), ValidationError);
}

TEST_CASE("FRT under enumeration equals the exact randomization p-value, ties counted") {
  const Matrix x = oracle::random_normal(8, 2, 3);
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    // Integer outcomes make |tau| ties exact in floating point.
    const auto y = random_outcomes(8, seed, true);
    const Assignment w_obs = bits({1, 1, 0, 1, 0, 0, 1, 0});
    ObservedExperiment exp{CovariateMatrix(x), w_obs, y, cr_spec(4)};
    FrtOptions opts;
    opts.enumerate = true;
    const FrtResult r = frt(exp, 0, 0, opts);
    const double t_obs = std::abs(oracle::diff_in_means(y, w_obs));
    std::size_t count = 0, ties = 0;
    for (const auto& w : oracle::all_assignments(8, 4)) {
      const double t = std::abs(oracle::diff_in_means(y, w));
      count += t >= t_obs;
      ties += t == t_obs;
    }
    CHECK(ties >= 2);  // w_obs and its complement at least
    CHECK(r.b == 70);
    CHECK(r.enumerated);
    CHECK(r.p_value == static_cast<double>(count) / 70.0);
    std::size_t own = 0;
    for (double s : r.stats) own += std::abs(s) >= std::abs(r.tau_obs);
    CHECK(r.p_value == static_cast<double>(own) / static_cast<double>(r.b));
  }
}

TEST_CASE("FRT with constant outcomes has p-value one") {
  const std::vector<double> y(10, 1.5);
  ObservedExperiment exp{CovariateMatrix(oracle::random_normal(10, 2, 4)),
                         bits({1, 0, 1, 0, 1, 0, 1, 0, 1, 0}), y, cr_spec(5)};
  const FrtResult r = frt(exp, 100, 7);
  CHECK(r.p_value == 1.0);
  CHECK(r.tau_obs == 0.0);
}

TEST_CASE("FRT plus-one variant and enumeration guard") {
  const auto y = random_outcomes(12, 8);
  std::mt19937_64 gen(8);
  const Assignment w_obs = oracle::random_assignment(12, 6, gen);
  ObservedExperiment exp{CovariateMatrix(oracle::random_normal(12, 2, 8)), w_obs, y, cr_spec(6)};
  const FrtResult plain = frt(exp, 200, 3);
  FrtOptions opts;
  opts.plus_one = true;
  const FrtResult plus = frt(exp, 200, 3, opts);
  CHECK(plus.p_value == doctest::Approx((plain.p_value * 200 + 1) / 201.0).epsilon(1e-14));
  exp.design = psrr_spec(6);
  FrtOptions en;
  en.enumerate = true;
  CHECK_THROWS_AS(frt(exp, 200, 3, en), ValidationError);
}

TEST_CASE("replicates are deterministic given the seed and independent of threading") {
  const Matrix x = oracle::random_normal(40, 5, 9);
  const BalanceCache cache(CovariateMatrix(x), 20);
  const auto par = sample_replicates(cache, psrr_spec(20), 64, 11, true);
  const auto ser = sample_replicates(cache, psrr_spec(20), 64, 11, false);
  REQUIRE(par.size() == 64);
  for (std::size_t b = 0; b < 64; ++b) {
    CHECK(par[b].assignment == ser[b].assignment);
    Rng rng = Rng::stream(11, b);
    CHECK(sample(cache, psrr_spec(20), rng).assignment == par[b].assignment);
  }
}

TEST_CASE("the single-swap example gives theta = 2") {
  const std::vector<double> y{3, 1};
  const std::vector<Assignment> draws{bits({0, 1})};
  const CiResult r = ci_exact_from_draws(y, bits({1, 0}), draws, 0.5);
  REQUIRE(r.jump_points_lower.size() == 1);
  CHECK(r.jump_points_lower[0] == 2.0);
  CHECK(r.jump_points_upper[0] == 2.0);
}

TEST_CASE("the observed assignment contributes infinite jump points") {
  const auto y = random_outcomes(6, 10);
  const Assignment w_obs = bits({1, 1, 1, 0, 0, 0});
  const std::vector<Assignment> draws{w_obs, bits({1, 1, 0, 1, 0, 0}), bits({0, 1, 1, 0, 0, 1})};
  const CiResult r = ci_exact_from_draws(y, w_obs, draws, 0.5);
  CHECK(r.jump_points_lower.front() == -std::numeric_limits<double>::infinity());
  CHECK(r.jump_points_upper.back() == std::numeric_limits<double>::infinity());
  CHECK(std::is_sorted(r.jump_points_lower.begin(), r.jump_points_lower.end()));
  const std::vector<Assignment> only{w_obs, w_obs};
  CHECK_THROWS_AS(ci_exact_from_draws(y, w_obs, only, 0.5), DegenerateDesign);
}

TEST_CASE("imputed p-values match direct imputation") {
  const auto y = random_outcomes(10, 12);
  const Assignment w_obs = bits({1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  const auto draws = oracle::all_assignments(10, 5);
  for (double theta : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    CHECK(imputed_p_value(y, w_obs, draws, theta, false) ==
          doctest::Approx(oracle::p_lower(y, w_obs, draws, theta)).epsilon(1e-12));
    CHECK(imputed_p_value(y, w_obs, draws, theta, true) ==
          doctest::Approx(oracle::p_upper(y, w_obs, draws, theta)).epsilon(1e-12));
  }
}

TEST_CASE("exact interval equals grid inversion on the enumerated n = 8 instance") {
  const auto draws = oracle::all_assignments(8, 4);
  for (std::uint64_t seed : {20, 21, 22}) {
    const auto y = random_outcomes(8, seed);
    const Assignment w_obs = bits({0, 1, 1, 0, 1, 0, 0, 1});
    for (double alpha : {0.1, 0.2, 0.3}) {
      const CiResult r = ci_exact_from_draws(y, w_obs, draws, alpha);
      CHECK(r.lower <= r.upper);
      const auto m = static_cast<std::size_t>(std::floor(alpha / 2 * 70 + 1e-9));
      CHECK(r.lower == r.jump_points_lower[m]);
      CHECK(r.upper == r.jump_points_upper[70 - m - 1]);

      double lo = INFINITY, hi = -INFINITY;
      for (double v : r.jump_points_lower) if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
      for (double v : r.jump_points_upper) if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
      const double range = hi - lo, step = 1e-4 * range;
      const auto [g_lower, g_upper] =
          oracle::grid_interval(y, w_obs, draws, alpha, lo - 0.1 * range, hi + 0.1 * range, step);
      INFO("alpha " << alpha << " exact [" << r.lower << ", " << r.upper << "] grid [" << g_lower
                    << ", " << g_upper << "]");
      CHECK(std::abs(r.lower - g_lower) <= step * 1.0001);
      CHECK(std::abs(r.upper - g_upper) <= step * 1.0001);

      // The bound is the supremum of the rejected set.
      CHECK(oracle::p_lower(y, w_obs, draws, r.lower - 1e-9) <= alpha / 2);
      CHECK(oracle::p_lower(y, w_obs, draws, r.lower + 1e-9) > alpha / 2);
      CHECK(oracle::p_upper(y, w_obs, draws, r.upper + 1e-9) <= alpha / 2);
      CHECK(oracle::p_upper(y, w_obs, draws, r.upper - 1e-9) > alpha / 2);
    }
  }
}

TEST_CASE("bisection is within tolerance of the exact interval and never narrower") {
  const auto draws = oracle::all_assignments(8, 4);
  for (std::uint64_t seed : {30, 31, 32, 33}) {
    const auto y = random_outcomes(8, seed);
    const Assignment w_obs = bits({1, 0, 0, 1, 1, 0, 1, 0});
    const CiResult ex = ci_exact_from_draws(y, w_obs, draws, 0.2);
    const CiResult bi = ci_bisection_from_draws(y, w_obs, draws, 0.2, 1e-8);
    CHECK(bi.method == CiMethod::Bisection);
    CHECK(bi.evaluations > 0);
    CHECK(bi.lower <= ex.lower);
    CHECK(bi.upper >= ex.upper);
    CHECK(ex.lower - bi.lower <= 1e-8);
    CHECK(bi.upper - ex.upper <= 1e-8);
  }
}

TEST_CASE("bisection reports a bracket failure on constant outcomes") {
  const std::vector<double> y(8, 2.0);
  const auto draws = oracle::all_assignments(8, 4);
  CHECK_THROWS_AS(ci_bisection_from_draws(y, bits({1, 1, 1, 1, 0, 0, 0, 0}), draws, 0.1),
                  BracketFailure);
}

TEST_CASE("exact and bisection intervals share their draws under a common seed") {
  const auto y = random_outcomes(30, 40);
  std::mt19937_64 gen(40);
  const Assignment w_obs = oracle::random_assignment(30, 15, gen);
  ObservedExperiment exp{CovariateMatrix(oracle::random_normal(30, 4, 40)), w_obs, y, psrr_spec(15)};
  const auto draws = draw_replicates(exp, 300, 5);
  const CiResult ex = ci_exact(exp, 300, 0.05, 5);
  const CiResult ex_ref = ci_exact_from_draws(y, w_obs, draws, 0.05);
  CHECK(ex.lower == ex_ref.lower);
  CHECK(ex.upper == ex_ref.upper);
  CHECK(ex.seed == 5);
  const CiResult bi = ci_bisection(exp, 300, 0.05, 5);
  const CiResult bi_ref = ci_bisection_from_draws(y, w_obs, draws, 0.05);
  CHECK(bi.lower == bi_ref.lower);
  CHECK(bi.upper == bi_ref.upper);
  CHECK(bi.lower <= ex.lower);
  CHECK(bi.upper >= ex.upper);
}

TEST_CASE("alpha outside (0, 1) is rejected") {
  const auto y = random_outcomes(8, 1);
  const auto draws = oracle::all_assignments(8, 4);
  CHECK_THROWS_AS(ci_exact_from_draws(y, draws[3], draws, 0.0), DomainError);
  CHECK_THROWS_AS(ci_exact_from_draws(y, draws[3], draws, 1.0), DomainError);
}

TEST_CASE("size and coverage on the simulation population with PSRR") {
  BenchConfig cfg;
  cfg.n = 100;
  Rng pop_rng(50);
  const Population pop = generate_population(cfg, pop_rng);
  const BalanceCache cache(pop.covariates, 50);
  constexpr std::size_t reps = 600, b = 200;
  std::size_t rejections = 0, covered = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng = Rng::stream(51, r);
    const Assignment w = sample(cache, psrr_spec(50), rng).assignment;
    std::vector<double> y_null(100), y_eff(100);
    for (std::size_t i = 0; i < 100; ++i) {
      y_null[i] = pop.y0[i];
      y_eff[i] = w.treated(i) ? pop.y1[i] : pop.y0[i];
    }
    const auto traces = sample_replicates(cache, psrr_spec(50), b, derive_seed(52, r));
    std::vector<Assignment> draws;
    for (const auto& t : traces) draws.push_back(t.assignment);
    rejections += frt_from_draws(y_null, w, draws).p_value <= 0.05;
    const CiResult ci = ci_exact_from_draws(y_eff, w, draws, 0.05);
    covered += ci.lower <= pop.tau && pop.tau <= ci.upper;
  }
  const double size = static_cast<double>(rejections) / reps;
  const double coverage = static_cast<double>(covered) / reps;
  INFO("size " << size << ", coverage " << coverage);
  CHECK(size >= 0.03);
  CHECK(size <= 0.07);
  CHECK(coverage >= 0.93);
  CHECK(coverage <= 0.97);
}
