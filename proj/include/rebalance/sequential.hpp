#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "rebalance/balance.hpp"
#include "rebalance/designs.hpp"
#include "rebalance/rng.hpp"

namespace rebalance {

enum class SeqMethod { SeqCR, SeqRR, SeqPSRR };

std::string_view to_string(SeqMethod m) noexcept;
/// Accepts "seqcr", "seqrr", "seqpsrr" (any case).
SeqMethod parse_seq_method(std::string_view name);

/// Group sizes, treated counts and expected draw budgets s_k of a group
/// sequential trial.
struct Schedule {
  std::vector<std::size_t> group_sizes;
  std::vector<std::size_t> treated_sizes;
  std::vector<std::uint64_t> draws;
  std::uint64_t cap_multiplier = 10;

  std::size_t k_total() const noexcept { return group_sizes.size(); }
  /// n_{1:k}; units_through(0) = 0.
  std::size_t units_through(std::size_t k) const noexcept;
  std::size_t treated_through(std::size_t k) const noexcept;
  /// Throws ValidationError.
  void validate() const;

  /// K groups of n_k units, half treated, with the given budgets.
  static Schedule equal_groups(std::size_t n_k, std::vector<std::uint64_t> draws);
};

/// Budgets used in the K = 3, 5, 10 simulation settings with S = 1000.
Schedule preset_schedule(std::size_t k, std::size_t n_k);

struct SeqDesign {
  Schedule schedule;
  SeqMethod method = SeqMethod::SeqPSRR;
  double gamma = 10.0;
};

/// State of a group sequential trial between group arrivals.
///
/// Group k (1-based) always samples from Rng::stream(base_seed, k), so a
/// session restored from disk continues exactly as an uninterrupted one.
class SeqSession {
 public:
  SeqSession(SeqDesign design, std::uint64_t base_seed);

  const SeqDesign& design() const noexcept { return design_; }
  const Schedule& schedule() const noexcept { return design_.schedule; }
  SeqMethod method() const noexcept { return design_.method; }
  double gamma() const noexcept { return design_.gamma; }
  std::uint64_t base_seed() const noexcept { return base_seed_; }

  std::size_t k_done() const noexcept { return m_history_.size(); }
  bool complete() const noexcept { return k_done() == schedule().k_total(); }
  /// Covariate count; 0 before the first group arrives.
  std::size_t p() const noexcept { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const noexcept { return covariates_; }
  const Assignment& assignment() const noexcept { return assignment_; }
  const std::vector<double>& m_history() const noexcept { return m_history_; }
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }
  const std::vector<std::uint64_t>& draw_counters() const noexcept { return draw_counters_; }
  const std::vector<bool>& forced_stops() const noexcept { return forced_stops_; }

  /// Rebuilds a session from persisted fields and checks every invariant,
  /// including m_history against a recomputation (1e-8). Thresholds and
  /// forced-stop flags are recomputed.
  static SeqSession restore(SeqDesign design, std::uint64_t base_seed, Matrix covariates,
                            Assignment assignment, std::vector<double> m_history,
                            std::vector<std::uint64_t> draw_counters);

 private:
  friend SampleTrace seq_next_group(SeqSession&, const Matrix&, Rng&);

  SeqDesign design_;
  std::uint64_t base_seed_;
  Matrix covariates_;
  Assignment assignment_;
  std::vector<double> m_history_;
  std::vector<double> thresholds_;
  std::vector<std::uint64_t> draw_counters_;
  std::vector<bool> forced_stops_;
};

/// M_k of the stacked data when the next group (covariates `group_x`) gets
/// `candidate`, with earlier groups fixed at their session assignment.
double seq_mahalanobis(const SeqSession& session, const Matrix& group_x,
                       const Assignment& candidate);

/// a_k = (n_k / n_{1:k}) * q_k, q_k the lower 1/s_k quantile of a noncentral
/// chi-square with p dof and noncentrality n_{1:(k-1)} M_[k-1] / n_k. The
/// probability 1/s_k is clamped to [1e-12, 1 - 1e-12]. `k` is 1-based and must
/// equal k_done + 1.
double seq_threshold(const SeqSession& session, std::size_t k, std::size_t p);

/// Same computation from raw inputs.
double sequential_threshold(const Schedule& schedule, std::size_t k, std::size_t p,
                            double m_previous);

/// Assigns the next group and appends it to the session. Uses the session's
/// stream for group k unless `rng` is given. The returned trace holds the
/// group's own assignment; final_m is M_k of the stacked data.
SampleTrace seq_next_group(SeqSession& session, const Matrix& group_x);
SampleTrace seq_next_group(SeqSession& session, const Matrix& group_x, Rng& rng);

/// All covariates of a trial known up front (simulation and randomisation
/// tests): the per-group balance caches are built once and reused by every run.
class SequentialPlan {
 public:
  SequentialPlan(SeqDesign design, const Matrix& all_covariates);

  const SeqDesign& design() const noexcept { return design_; }
  const Matrix& covariates() const noexcept { return covariates_; }
  std::size_t n() const noexcept { return static_cast<std::size_t>(covariates_.rows()); }

  struct Run {
    Assignment assignment;
    std::vector<SampleTrace> groups;
  };

  /// Equivalent to SeqSession(design, seed) followed by seq_next_group for
  /// every group.
  Run run(std::uint64_t seed) const;

 private:
  SeqDesign design_;
  Matrix covariates_;
  std::vector<BalanceCache> caches_;
};

}  // namespace rebalance
