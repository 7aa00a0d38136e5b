#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "rebalance/balance.hpp"
#include "rebalance/designs.hpp"
#include "rebalance/sequential.hpp"

namespace rebalance {

/// Mean outcome of treated units minus mean outcome of controls.
/// Throws DimensionMismatch on length mismatch, DomainError unless 0 < n_t < n.
double diff_in_means(std::span<const double> y, const Assignment& w);

using DesignDescriptor = std::variant<DesignSpec, SeqDesign>;

/// Observed data plus the design that produced w_obs, replayed for resampling.
struct ObservedExperiment {
  CovariateMatrix covariates;
  Assignment w_obs;
  std::vector<double> outcomes;
  DesignDescriptor design;

  /// Throws DimensionMismatch or ValidationError.
  void validate() const;
};

/// Replicate b of a non-sequential design uses Rng::stream(seed, b); replicate
/// b of a sequential design runs SequentialPlan::run(derive_seed(seed, b)).
/// Results do not depend on the thread count.
std::vector<SampleTrace> sample_replicates(const BalanceCache& cache, const DesignSpec& spec,
                                           std::size_t b, std::uint64_t seed,
                                           bool parallel = true);
std::vector<SequentialPlan::Run> sequential_replicates(const SequentialPlan& plan, std::size_t b,
                                                       std::uint64_t seed, bool parallel = true);
std::vector<Assignment> draw_replicates(const ObservedExperiment& exp, std::size_t b,
                                        std::uint64_t seed, bool parallel = true);

/// Every assignment of n_t ones among n units, in lexicographic order of the
/// treated index sets. Throws ValidationError if there are more than `cap`.
std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n_t,
                                              std::uint64_t cap = 100'000);

struct FrtOptions {
  /// Use (1 + count) / (1 + B) instead of count / B.
  bool plus_one = false;
  /// Replace sampling by full enumeration (complete randomisation only).
  bool enumerate = false;
  std::uint64_t enumeration_cap = 100'000;
};

struct FrtResult {
  double p_value = 1.0;
  std::size_t b = 0;
  double tau_obs = 0.0;
  /// |tau_hat(W^b)| per replicate.
  std::vector<double> stats;
  std::uint64_t seed = 0;
  bool plus_one = false;
  bool enumerated = false;
};

/// Two-sided randomisation test of the sharp null of no effect.
FrtResult frt(const ObservedExperiment& exp, std::size_t b, std::uint64_t seed,
              const FrtOptions& options = {});
FrtResult frt_from_draws(std::span<const double> y, const Assignment& w_obs,
                         std::span<const Assignment> draws, bool plus_one = false);

enum class CiMethod { Exact, Bisection };
std::string_view to_string(CiMethod m) noexcept;

struct CiResult {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  /// Sorted jump points; W^b = W^obs contributes -inf (lower) or +inf (upper).
  /// Empty for the bisection method.
  std::vector<double> jump_points_lower;
  std::vector<double> jump_points_upper;
  CiMethod method = CiMethod::Exact;
  std::size_t b = 0;
  std::uint64_t seed = 0;
  /// Imputed-statistic sweeps (bisection only).
  std::uint64_t evaluations = 0;
};

/// Order-statistic interval: lower is the (floor(alpha/2 B) + 1)-th smallest
/// lower jump point, upper the (B - floor(alpha/2 B))-th smallest upper one.
/// Throws DegenerateDesign if every draw equals w_obs.
CiResult ci_exact(const ObservedExperiment& exp, std::size_t b, double alpha, std::uint64_t seed);
CiResult ci_exact_from_draws(std::span<const double> y, const Assignment& w_obs,
                             std::span<const Assignment> draws, double alpha);

/// Inverts the imputed one-sided p-values by bisection on
/// [tau_obs - 20 s, tau_obs + 20 s], s the SD of the replicate statistics.
/// Returns the outer end of the final bracket on each side. `tol <= 0` selects
/// 1e-6 times the bracket width. Throws BracketFailure when an end does not
/// straddle alpha/2.
CiResult ci_bisection(const ObservedExperiment& exp, std::size_t b, double alpha,
                      std::uint64_t seed, double tol = 0.0);
CiResult ci_bisection_from_draws(std::span<const double> y, const Assignment& w_obs,
                                 std::span<const Assignment> draws, double alpha,
                                 double tol = 0.0);

/// Imputed one-sided p-values at theta: the share of draws whose statistic is
/// >= tau_obs (upper = false) or <= tau_obs (upper = true) after shifting the
/// treated outcomes by theta.
double imputed_p_value(std::span<const double> y, const Assignment& w_obs,
                       std::span<const Assignment> draws, double theta, bool upper);

}  // namespace rebalance
