#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rebalance/balance.hpp"
#include "rebalance/rng.hpp"
#include "rebalance/sequential.hpp"

namespace rebalance {

struct SequentialBenchConfig {
  std::size_t k = 3;
  std::size_t n_k = 20;
  std::vector<std::uint64_t> draws{30, 136, 834};
  std::uint64_t cap_multiplier = 10;

  Schedule schedule() const;
};

struct BenchConfig {
  std::size_t n = 100;
  std::size_t p = 10;
  double r_squared = 0.5;
  /// Effect in units of sd(Y(0)) used for power, coverage and length.
  double effect_multiplier = 0.3;
  std::size_t n_rep = 200;
  std::size_t b_frt = 200;
  /// cr, rr, gps, psrr, seqcr, seqrr, seqpsrr.
  std::vector<std::string> methods{"cr", "psrr"};
  std::uint64_t seed = 1;
  std::optional<SequentialBenchConfig> sequential;
  double alpha = 0.05;
  double p_a = 0.001;
  double gamma = 10.0;
  /// Run the bisection interval as well (only needed for t_bisect).
  bool time_bisection = true;
  /// CR only: every assignment is analysed once as the observed one, with all
  /// assignments as resamples. n_rep and b_frt are then ignored.
  bool enumerate = false;
  std::uint64_t enumeration_cap = 100'000;

  /// Throws ValidationError.
  void validate() const;
  /// Units in the trial: n, or K n_k for sequential configs.
  std::size_t units() const;
};

/// A fixed finite population: covariates and both potential outcomes.
struct Population {
  CovariateMatrix covariates;
  std::vector<double> y0;
  std::vector<double> y1;
  /// Average treatment effect, effect_multiplier * sd(Y(0)).
  double tau = 0.0;
};

/// X iid N(0, 1); Y(0) = row sum + N(0, p (1 - R^2) / R^2);
/// Y(1) = Y(0) + effect_multiplier * sd(Y(0)) with the (n - 1) sd.
Population generate_population(const BenchConfig& cfg, Rng& rng);

struct BenchRow {
  std::string method;
  double bias = 0.0;
  double sd = 0.0;
  double size = 0.0;
  double power = 0.0;
  double cp = 0.0;
  double length = 0.0;
  /// Seconds per 10^3 sampled assignments.
  double t_sample = 0.0;
  /// Mean seconds per interval (endpoint determination only).
  double t_exact = 0.0;
  double t_bisect = 0.0;
  double iters_inner = 0.0;
  double iters_outer = 0.0;
  double iters_total = 0.0;
  std::uint64_t forced_stops = 0;
  std::size_t n_rep = 0;
};

/// One row per configured method. The population comes from stream 0 of the
/// seed; every method sees the same population and replicate seeds.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

/// Header plus one line per row in the fixed column order
/// method,bias,sd,size,power,cp,length,t_sample,t_exact,t_bisect,
/// iters_inner,iters_outer,iters_total.
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace rebalance
