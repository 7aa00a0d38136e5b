#include "rebalance/sequential.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "rebalance/distributions.hpp"

namespace rebalance {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kHistoryTol = 1e-8;

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

// Runs the within-group sampler of group k (1-based) on the stacked cache.
// `prefix` holds the fixed assignment of groups 1..k-1. The returned trace
// holds the full stacked assignment and a freshly recomputed M_k.
SampleTrace group_step(const BalanceCache& cache, const Assignment& prefix, const SeqDesign& design,
                       std::size_t k, double a, Rng& rng) {
  const Schedule& sched = design.schedule;
  const std::size_t n_k = sched.group_sizes[k - 1];
  const std::size_t n_tk = sched.treated_sizes[k - 1];
  const std::uint64_t s_k = sched.draws[k - 1];
  const std::size_t offset = prefix.n();

  SampleTrace trace;
  switch (design.method) {
    case SeqMethod::SeqCR: {
      const auto t0 = std::chrono::steady_clock::now();
      trace.assignment = prefix.concat(draw_complete(n_k, n_tk, rng));
      trace.inner_iters = trace.outer_iters = 1;
      trace.threshold = std::numeric_limits<double>::infinity();
      trace.wall_clock = std::chrono::steady_clock::now() - t0;
      break;
    }
    case SeqMethod::SeqRR: {
      std::vector<std::uint8_t> first(n_k, 0);
      std::fill_n(first.begin(), n_tk, std::uint8_t{1});
      trace = chains::rerandomize(cache, prefix.concat(Assignment(std::move(first))), offset, a,
                                  sched.cap_multiplier * s_k, true, rng);
      break;
    }
    case SeqMethod::SeqPSRR: {
      const auto t0 = std::chrono::steady_clock::now();
      const std::uint64_t cap = sched.cap_multiplier * s_k * n_tk * (n_k - n_tk);
      trace = chains::pair_switch(cache, prefix.concat(draw_complete(n_k, n_tk, rng)), offset, a,
                                  design.gamma, cap, true, rng);
      trace.wall_clock = std::chrono::steady_clock::now() - t0;
      break;
    }
  }
  trace.final_m = mahalanobis(cache, trace.assignment);
  if (design.method == SeqMethod::SeqCR) trace.meets_threshold = true;
  return trace;
}

bool forced(SeqMethod method, double m, double a) {
  return method != SeqMethod::SeqCR && m > a;
}

}  // namespace

std::string_view to_string(SeqMethod m) noexcept {
  switch (m) {
    case SeqMethod::SeqCR: return "seqcr";
    case SeqMethod::SeqRR: return "seqrr";
    case SeqMethod::SeqPSRR: return "seqpsrr";
  }
  return "?";
}

SeqMethod parse_seq_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "seqcr") return SeqMethod::SeqCR;
  if (s == "seqrr") return SeqMethod::SeqRR;
  if (s == "seqpsrr") return SeqMethod::SeqPSRR;
  throw ValidationError("unknown sequential method '" + std::string(name) + "'");
}

std::size_t Schedule::units_through(std::size_t k) const noexcept {
  std::size_t total = 0;
  for (std::size_t l = 0; l < k && l < group_sizes.size(); ++l) total += group_sizes[l];
  return total;
}

std::size_t Schedule::treated_through(std::size_t k) const noexcept {
  std::size_t total = 0;
  for (std::size_t l = 0; l < k && l < treated_sizes.size(); ++l) total += treated_sizes[l];
  return total;
}

void Schedule::validate() const {
  if (group_sizes.empty()) throw ValidationError("schedule has no groups");
  if (treated_sizes.size() != group_sizes.size() || draws.size() != group_sizes.size()) {
    throw ValidationError("schedule.group_sizes, treated_sizes and draws differ in length");
  }
  for (std::size_t k = 0; k < group_sizes.size(); ++k) {
    if (!(treated_sizes[k] > 0 && treated_sizes[k] < group_sizes[k])) {
      throw ValidationError("schedule.treated_sizes[" + std::to_string(k) +
                            "] must lie strictly between 0 and the group size");
    }
    if (draws[k] < 1) {
      throw ValidationError("schedule.draws[" + std::to_string(k) + "] must be >= 1");
    }
  }
  if (cap_multiplier < 1) throw ValidationError("schedule.cap_multiplier must be >= 1");
}

Schedule Schedule::equal_groups(std::size_t n_k, std::vector<std::uint64_t> draws) {
  Schedule s;
  s.group_sizes.assign(draws.size(), n_k);
  s.treated_sizes.assign(draws.size(), n_k / 2);
  s.draws = std::move(draws);
  return s;
}

Schedule preset_schedule(std::size_t k, std::size_t n_k) {
  switch (k) {
    case 3: return Schedule::equal_groups(n_k, {30, 136, 834});
    case 5: return Schedule::equal_groups(n_k, {10, 10, 29, 133, 818});
    case 10: return Schedule::equal_groups(n_k, {10, 10, 10, 10, 10, 10, 10, 28, 128, 774});
    default: break;
  }
  throw ValidationError("no preset schedule for K = " + std::to_string(k) +
                        " (available: 3, 5, 10)");
}

SeqSession::SeqSession(SeqDesign design, std::uint64_t base_seed)
    : design_(std::move(design)), base_seed_(base_seed) {
  design_.schedule.validate();
  if (!(design_.gamma >= 0.0) || std::isinf(design_.gamma)) {
    throw ValidationError("gamma must be finite and >= 0");
  }
}

SeqSession SeqSession::restore(SeqDesign design, std::uint64_t base_seed, Matrix covariates,
                               Assignment assignment, std::vector<double> m_history,
                               std::vector<std::uint64_t> draw_counters) {
  SeqSession s(std::move(design), base_seed);
  const Schedule& sched = s.schedule();
  const std::size_t k_done = m_history.size();
  if (k_done > sched.k_total()) throw ValidationError("m_history is longer than the schedule");
  if (draw_counters.size() != k_done) {
    throw ValidationError("draw_counters length differs from m_history length");
  }
  const std::size_t units = sched.units_through(k_done);
  if (static_cast<std::size_t>(covariates.rows()) != units) {
    throw ValidationError("covariates row count differs from the completed groups' sizes");
  }
  if (assignment.n() != units) {
    throw ValidationError("assignment length differs from the completed groups' sizes");
  }
  std::size_t first = 0;
  for (std::size_t k = 0; k < k_done; ++k) {
    if (assignment.slice(first, sched.group_sizes[k]).n_treated() != sched.treated_sizes[k]) {
      throw ValidationError("assignment of group " + std::to_string(k + 1) +
                            " has the wrong treated count");
    }
    first += sched.group_sizes[k];
  }

  const std::size_t p = static_cast<std::size_t>(covariates.cols());
  double m_prev = 0.0;
  for (std::size_t k = 1; k <= k_done; ++k) {
    const std::size_t rows = sched.units_through(k);
    const BalanceCache cache(CovariateMatrix(covariates.topRows(static_cast<Eigen::Index>(rows))),
                             sched.treated_through(k));
    const double m = mahalanobis(cache, assignment.slice(0, rows));
    if (!(std::abs(m - m_history[k - 1]) <= kHistoryTol)) {
      throw ValidationError("m_history[" + std::to_string(k - 1) +
                            "] does not match the recomputed M_k");
    }
    const double a = s.method() == SeqMethod::SeqCR
                         ? std::numeric_limits<double>::infinity()
                         : sequential_threshold(sched, k, p, m_prev);
    s.thresholds_.push_back(a);
    s.forced_stops_.push_back(forced(s.method(), m_history[k - 1], a));
    m_prev = m_history[k - 1];
  }
  s.covariates_ = std::move(covariates);
  s.assignment_ = std::move(assignment);
  s.m_history_ = std::move(m_history);
  s.draw_counters_ = std::move(draw_counters);
  return s;
}

double seq_mahalanobis(const SeqSession& session, const Matrix& group_x,
                       const Assignment& candidate) {
  if (session.complete()) throw ValidationError("session already has every group assigned");
  const std::size_t k = session.k_done() + 1;
  const Schedule& sched = session.schedule();
  if (static_cast<std::size_t>(group_x.rows()) != sched.group_sizes[k - 1] ||
      candidate.n() != sched.group_sizes[k - 1]) {
    throw DimensionMismatch("group size differs from the schedule");
  }
  if (session.k_done() > 0 && static_cast<std::size_t>(group_x.cols()) != session.p()) {
    throw DimensionMismatch("group covariate count differs from earlier groups");
  }
  if (candidate.n_treated() != sched.treated_sizes[k - 1]) {
    throw DimensionMismatch("candidate treated count differs from the schedule");
  }
  const BalanceCache cache(CovariateMatrix(stack_rows(session.covariates(), group_x)),
                           sched.treated_through(k));
  return mahalanobis(cache, session.assignment().concat(candidate));
}

double sequential_threshold(const Schedule& schedule, std::size_t k, std::size_t p,
                            double m_previous) {
  if (k < 1 || k > schedule.k_total()) throw DomainError("group index out of range");
  if (p < 1) throw DomainError("covariate count must be >= 1");
  const double n_k = static_cast<double>(schedule.group_sizes[k - 1]);
  const double n_prev = static_cast<double>(schedule.units_through(k - 1));
  const double n_through = static_cast<double>(schedule.units_through(k));
  const double prob =
      std::clamp(1.0 / static_cast<double>(schedule.draws[k - 1]), kProbFloor, 1.0 - kProbFloor);
  const double lambda = k == 1 ? 0.0 : n_prev * m_previous / n_k;
  return n_k / n_through * chi2_quantile(prob, static_cast<int>(p), lambda);
}

double seq_threshold(const SeqSession& session, std::size_t k, std::size_t p) {
  if (k != session.k_done() + 1) throw DomainError("threshold requested for a group out of order");
  const double m_prev = session.k_done() == 0 ? 0.0 : session.m_history().back();
  return sequential_threshold(session.schedule(), k, p, m_prev);
}

SampleTrace seq_next_group(SeqSession& session, const Matrix& group_x) {
  Rng rng = Rng::stream(session.base_seed(), session.k_done() + 1);
  return seq_next_group(session, group_x, rng);
}

SampleTrace seq_next_group(SeqSession& session, const Matrix& group_x, Rng& rng) {
  if (session.complete()) throw ValidationError("session already has every group assigned");
  const std::size_t k = session.k_done() + 1;
  const Schedule& sched = session.schedule();
  const std::size_t n_k = sched.group_sizes[k - 1];
  if (static_cast<std::size_t>(group_x.rows()) != n_k) {
    throw DimensionMismatch("group has " + std::to_string(group_x.rows()) +
                            " rows but the schedule expects " + std::to_string(n_k));
  }
  if (session.k_done() > 0 && static_cast<std::size_t>(group_x.cols()) != session.p()) {
    throw DimensionMismatch("group covariate count differs from earlier groups");
  }
  Matrix stacked = stack_rows(session.covariates_, group_x);
  const BalanceCache cache(CovariateMatrix(stacked), sched.treated_through(k));
  const std::size_t p = static_cast<std::size_t>(group_x.cols());
  const double a = session.method() == SeqMethod::SeqCR ? std::numeric_limits<double>::infinity()
                                                        : seq_threshold(session, k, p);
  const std::uint64_t draws_before = rng.draws();
  SampleTrace trace = group_step(cache, session.assignment_, session.design_, k, a, rng);
  trace.threshold = a;

  session.covariates_ = std::move(stacked);
  session.assignment_ = trace.assignment;
  session.m_history_.push_back(trace.final_m);
  session.thresholds_.push_back(a);
  session.draw_counters_.push_back(rng.draws() - draws_before);
  session.forced_stops_.push_back(trace.forced_stop);

  trace.assignment = trace.assignment.slice(trace.assignment.n() - n_k, n_k);
  return trace;
}

SequentialPlan::SequentialPlan(SeqDesign design, const Matrix& all_covariates)
    : design_(std::move(design)), covariates_(all_covariates) {
  design_.schedule.validate();
  const Schedule& sched = design_.schedule;
  if (static_cast<std::size_t>(covariates_.rows()) != sched.units_through(sched.k_total())) {
    throw DimensionMismatch("covariate rows differ from the schedule's total size");
  }
  caches_.reserve(sched.k_total());
  for (std::size_t k = 1; k <= sched.k_total(); ++k) {
    const auto rows = static_cast<Eigen::Index>(sched.units_through(k));
    caches_.emplace_back(CovariateMatrix(covariates_.topRows(rows)), sched.treated_through(k));
  }
}

SequentialPlan::Run SequentialPlan::run(std::uint64_t seed) const {
  const Schedule& sched = design_.schedule;
  const std::size_t p = static_cast<std::size_t>(covariates_.cols());
  Run out;
  double m_prev = 0.0;
  for (std::size_t k = 1; k <= sched.k_total(); ++k) {
    Rng rng = Rng::stream(seed, k);
    const double a = design_.method == SeqMethod::SeqCR
                         ? std::numeric_limits<double>::infinity()
                         : sequential_threshold(sched, k, p, m_prev);
    SampleTrace trace = group_step(caches_[k - 1], out.assignment, design_, k, a, rng);
    trace.threshold = a;
    m_prev = trace.final_m;
    out.assignment = trace.assignment;
    const std::size_t n_k = sched.group_sizes[k - 1];
    trace.assignment = trace.assignment.slice(trace.assignment.n() - n_k, n_k);
    out.groups.push_back(std::move(trace));
  }
  return out;
}

}  // namespace rebalance
