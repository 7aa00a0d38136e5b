#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>

#include "rebalance/balance.hpp"
#include "rebalance/rng.hpp"

namespace rebalance {

enum class Method { CR, RR, GPS, PSRR };
enum class ThresholdMode { Direct, AcceptanceProbability };

std::string_view to_string(Method m) noexcept;
/// Accepts "cr", "rr", "gps", "psrr" (any case). Throws ValidationError.
Method parse_method(std::string_view name);

/// Which sampler to run and with what parameters.
struct DesignSpec {
  Method method = Method::CR;
  std::size_t n_t = 0;
  ThresholdMode threshold_mode = ThresholdMode::Direct;
  /// Threshold a (Direct) or acceptance probability p_a.
  double a_or_pa = std::numeric_limits<double>::infinity();
  double gamma = 10.0;
  std::uint64_t max_total_iters = 10'000'000;
  std::uint64_t seed = 0;

  /// Throws ValidationError on out-of-range parameters.
  void validate() const;
  /// The threshold a for p covariates (quantile lookup when given p_a).
  double threshold(std::size_t p) const;
};

/// Result of one sampler run.
///
/// inner_iters counts candidate evaluations (PSRR proposals, GPS pair
/// evaluations, RR draws); outer_iters counts accepted moves (PSRR, GPS) or
/// draws (RR, CR). Total iterations are therefore inner_iters.
struct SampleTrace {
  Assignment assignment;
  double final_m = 0.0;
  std::uint64_t inner_iters = 0;
  std::uint64_t outer_iters = 0;
  std::uint64_t rejections = 0;
  double threshold = std::numeric_limits<double>::infinity();
  bool meets_threshold = true;
  /// Only set by the sequential samplers: the draw budget ran out and the
  /// best assignment seen was returned instead of an acceptable one.
  bool forced_stop = false;
  std::chrono::nanoseconds wall_clock{0};
};

/// A sampler exhausted its iteration budget. Carries the best assignment seen.
class IterationCapExceeded : public Error {
 public:
  IterationCapExceeded(const std::string& message, Assignment best, double best_m)
      : Error(ErrorKind::IterationCapExceeded, message),
        best_(std::move(best)),
        best_m_(best_m) {}
  const Assignment& best() const noexcept { return best_; }
  double best_m() const noexcept { return best_m_; }

 private:
  Assignment best_;
  double best_m_;
};

/// a such that P(chi2_p < a) = p_a.
double threshold_from_pa(std::size_t p, double p_a);

/// Uniformly random assignment of n_t ones among n units (0 <= n_t <= n).
Assignment draw_complete(std::size_t n, std::size_t n_t, Rng& rng);

SampleTrace sample_cr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng);
SampleTrace sample_rr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng);
SampleTrace sample_gps(const BalanceCache& cache, const DesignSpec& spec, Rng& rng);
SampleTrace sample_psrr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng);
/// Dispatches on spec.method.
SampleTrace sample(const BalanceCache& cache, const DesignSpec& spec, Rng& rng);

/// Accepted moves between full recomputations of M inside a switching chain.
inline constexpr std::uint64_t kRefreshInterval = 10'000;

/// Building blocks shared with the sequential designs. Units [offset, n) form
/// the block that may be redrawn or switched; units before offset are fixed.
namespace chains {

/// Redraws the block (keeping its treated count) until M <= a. After
/// `max_draws` draws either throws IterationCapExceeded or, with
/// `best_on_cap`, returns the smallest-M draw flagged forced_stop.
SampleTrace rerandomize(const BalanceCache& cache, const Assignment& start,
                        std::size_t offset, double a, std::uint64_t max_draws,
                        bool best_on_cap, Rng& rng);

/// Pair-switching walk inside the block, started at `start`: propose a uniform
/// (treated, control) pair, accept with probability min{(M/M*)^gamma, 1},
/// stop once M <= a. `max_proposals` bounds the proposals as above; the best
/// state visited is returned on a capped stop.
SampleTrace pair_switch(const BalanceCache& cache, Assignment start, std::size_t offset,
                        double a, double gamma, std::uint64_t max_proposals,
                        bool best_on_cap, Rng& rng);

/// Uniform redraw of the block's positions keeping its treated count.
Assignment redraw_block(const Assignment& base, std::size_t offset, Rng& rng);

/// Probability of moving from M to M* in the switching walk.
double switch_acceptance(double m_current, double m_star, double gamma) noexcept;

}  // namespace chains

}  // namespace rebalance
