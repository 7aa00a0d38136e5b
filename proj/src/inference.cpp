#include "rebalance/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rebalance/kernels.hpp"

namespace rebalance {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
}

void check_inputs(std::span<const double> y, const Assignment& w_obs,
                  std::span<const Assignment> draws) {
  if (y.size() != w_obs.n()) throw DimensionMismatch("outcomes and assignment lengths differ");
  if (draws.empty()) throw EmptyInput("no resampled assignments");
  for (double v : y) {
    if (!std::isfinite(v)) throw ValidationError("outcomes must be finite");
  }
}

std::size_t order_index(double alpha, std::size_t b) {
  return static_cast<std::size_t>(std::floor(alpha / 2.0 * static_cast<double>(b) + 1e-9));
}

// Statistic of draw w after imputing both potential outcomes under an
// additive effect theta: Y(0) = y - theta w_obs, observed Y(0) + theta w.
double shifted_statistic(std::span<const double> y, const Assignment& w_obs, const Assignment& w,
                         double theta) {
  double sum_t = 0.0, sum_c = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double y0 = y[i] - theta * static_cast<double>(w_obs[i]);
    if (w.treated(i)) {
      sum_t += y0 + theta;
    } else {
      sum_c += y0;
    }
  }
  return sum_t / static_cast<double>(w.n_treated()) -
         sum_c / static_cast<double>(w.n_control());
}

// The observed statistic is recomputed from the same imputed outcomes so that
// W^b = W^obs compares equal to it regardless of rounding in the shift.
std::size_t exceed_count(std::span<const double> y, const Assignment& w_obs,
                         std::span<const Assignment> draws, double theta, bool upper) {
  const double tau_obs = shifted_statistic(y, w_obs, w_obs, theta);
  const auto total = static_cast<std::int64_t>(draws.size());
  std::int64_t count = 0;
#pragma omp parallel for reduction(+ : count) schedule(static)
  for (std::int64_t b = 0; b < total; ++b) {
    const double t = shifted_statistic(y, w_obs, draws[static_cast<std::size_t>(b)], theta);
    count += upper ? (t <= tau_obs) : (t >= tau_obs);
  }
  return static_cast<std::size_t>(count);
}

}  // namespace

double diff_in_means(std::span<const double> y, const Assignment& w) {
  if (y.size() != w.n()) throw DimensionMismatch("outcomes and assignment lengths differ");
  if (w.n_treated() == 0 || w.n_control() == 0) {
    throw DomainError("difference in means needs both groups non-empty");
  }
  double sum_t = 0.0, sum_c = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) (w.treated(i) ? sum_t : sum_c) += y[i];
  return sum_t / static_cast<double>(w.n_treated()) -
         sum_c / static_cast<double>(w.n_control());
}

void ObservedExperiment::validate() const {
  if (w_obs.n() != covariates.n()) {
    throw DimensionMismatch("assignment length differs from covariate rows");
  }
  if (outcomes.size() != covariates.n()) {
    throw DimensionMismatch("outcome length differs from covariate rows");
  }
  for (double v : outcomes) {
    if (!std::isfinite(v)) throw ValidationError("outcomes must be finite");
  }
  if (const auto* spec = std::get_if<DesignSpec>(&design)) {
    spec->validate();
    if (spec->n_t != w_obs.n_treated()) {
      throw DimensionMismatch("design n_t differs from the observed treated count");
    }
  } else {
    const auto& seq = std::get<SeqDesign>(design);
    seq.schedule.validate();
    const std::size_t k = seq.schedule.k_total();
    if (seq.schedule.units_through(k) != w_obs.n() ||
        seq.schedule.treated_through(k) != w_obs.n_treated()) {
      throw DimensionMismatch("sequential schedule does not match the observed assignment");
    }
  }
}

std::vector<SampleTrace> sample_replicates(const BalanceCache& cache, const DesignSpec& spec,
                                           std::size_t b, std::uint64_t seed, bool parallel) {
  auto one = [&](std::size_t r) {
    Rng rng = Rng::stream(seed, r);
    return sample(cache, spec, rng);
  };
  return parallel ? kernels::generate_parallel(b, one) : kernels::generate_serial(b, one);
}

std::vector<SequentialPlan::Run> sequential_replicates(const SequentialPlan& plan, std::size_t b,
                                                       std::uint64_t seed, bool parallel) {
  auto one = [&](std::size_t r) { return plan.run(derive_seed(seed, r)); };
  return parallel ? kernels::generate_parallel(b, one) : kernels::generate_serial(b, one);
}

std::vector<Assignment> draw_replicates(const ObservedExperiment& exp, std::size_t b,
                                        std::uint64_t seed, bool parallel) {
  exp.validate();
  std::vector<Assignment> out;
  out.reserve(b);
  if (const auto* spec = std::get_if<DesignSpec>(&exp.design)) {
    const BalanceCache cache(exp.covariates, exp.w_obs.n_treated());
    for (auto& t : sample_replicates(cache, *spec, b, seed, parallel)) {
      out.push_back(std::move(t.assignment));
    }
  } else {
    const SequentialPlan plan(std::get<SeqDesign>(exp.design), exp.covariates.data());
    for (auto& r : sequential_replicates(plan, b, seed, parallel)) {
      out.push_back(std::move(r.assignment));
    }
  }
  return out;
}

std::vector<Assignment> enumerate_assignments(std::size_t n, std::size_t n_t, std::uint64_t cap) {
  if (n_t > n) throw DomainError("treated count exceeds unit count");
  // C(n, n_t) with early exit once the cap is passed.
  double count = 1.0;
  for (std::size_t i = 0; i < n_t; ++i) {
    count = count * static_cast<double>(n - i) / static_cast<double>(i + 1);
    if (count > static_cast<double>(cap) + 0.5) {
      throw ValidationError("enumeration would produce more than " + std::to_string(cap) +
                            " assignments");
    }
  }
  std::vector<Assignment> out;
  out.reserve(static_cast<std::size_t>(std::llround(count)));
  std::vector<std::size_t> idx(n_t);
  for (std::size_t i = 0; i < n_t; ++i) idx[i] = i;
  for (;;) {
    std::vector<std::uint8_t> w(n, 0);
    for (auto i : idx) w[i] = 1;
    out.emplace_back(std::move(w));
    std::size_t pos = n_t;
    while (pos > 0 && idx[pos - 1] == n - n_t + pos - 1) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t i = pos; i < n_t; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

FrtResult frt_from_draws(std::span<const double> y, const Assignment& w_obs,
                         std::span<const Assignment> draws, bool plus_one) {
  check_inputs(y, w_obs, draws);
  FrtResult r;
  r.tau_obs = diff_in_means(y, w_obs);
  r.b = draws.size();
  r.plus_one = plus_one;
  r.stats = kernels::generate_parallel(draws.size(), [&](std::size_t b) {
    if (draws[b].n() != y.size()) throw DimensionMismatch("resampled assignment has the wrong length");
    return std::abs(diff_in_means(y, draws[b]));
  });
  const double threshold = std::abs(r.tau_obs);
  const auto count = static_cast<double>(
      std::count_if(r.stats.begin(), r.stats.end(), [&](double s) { return s >= threshold; }));
  const auto b = static_cast<double>(r.b);
  r.p_value = plus_one ? (1.0 + count) / (1.0 + b) : count / b;
  return r;
}

FrtResult frt(const ObservedExperiment& exp, std::size_t b, std::uint64_t seed,
              const FrtOptions& options) {
  exp.validate();
  std::vector<Assignment> draws;
  if (options.enumerate) {
    const auto* spec = std::get_if<DesignSpec>(&exp.design);
    if (spec == nullptr || spec->method != Method::CR) {
      throw ValidationError("enumeration mode requires a complete randomisation design");
    }
    draws = enumerate_assignments(exp.w_obs.n(), exp.w_obs.n_treated(), options.enumeration_cap);
  } else {
    if (b < 1) throw ValidationError("replicate count b must be >= 1");
    draws = draw_replicates(exp, b, seed);
  }
  FrtResult r = frt_from_draws(exp.outcomes, exp.w_obs, draws, options.plus_one);
  r.seed = seed;
  r.enumerated = options.enumerate;
  return r;
}

std::string_view to_string(CiMethod m) noexcept {
  return m == CiMethod::Exact ? "exact" : "bisection";
}

CiResult ci_exact_from_draws(std::span<const double> y, const Assignment& w_obs,
                             std::span<const Assignment> draws, double alpha) {
  check_alpha(alpha);
  check_inputs(y, w_obs, draws);
  CiResult r;
  r.alpha = alpha;
  r.method = CiMethod::Exact;
  r.b = draws.size();
  r.jump_points_lower = kernels::jump_points(y, w_obs, draws, -kInf);
  if (std::all_of(r.jump_points_lower.begin(), r.jump_points_lower.end(),
                  [](double t) { return t == -kInf; })) {
    throw DegenerateDesign("every resampled assignment equals the observed one");
  }
  r.jump_points_upper = r.jump_points_lower;
  for (double& t : r.jump_points_upper) {
    if (t == -kInf) t = kInf;
  }
  std::sort(r.jump_points_lower.begin(), r.jump_points_lower.end());
  std::sort(r.jump_points_upper.begin(), r.jump_points_upper.end());
  const std::size_t m = order_index(alpha, r.b);
  r.lower = r.jump_points_lower[m];
  r.upper = r.jump_points_upper[r.b - m - 1];
  return r;
}

CiResult ci_exact(const ObservedExperiment& exp, std::size_t b, double alpha, std::uint64_t seed) {
  check_alpha(alpha);
  if (b < 1) throw ValidationError("replicate count b must be >= 1");
  const auto draws = draw_replicates(exp, b, seed);
  CiResult r = ci_exact_from_draws(exp.outcomes, exp.w_obs, draws, alpha);
  r.seed = seed;
  return r;
}

double imputed_p_value(std::span<const double> y, const Assignment& w_obs,
                       std::span<const Assignment> draws, double theta, bool upper) {
  check_inputs(y, w_obs, draws);
  return static_cast<double>(exceed_count(y, w_obs, draws, theta, upper)) /
         static_cast<double>(draws.size());
}

CiResult ci_bisection_from_draws(std::span<const double> y, const Assignment& w_obs,
                                 std::span<const Assignment> draws, double alpha, double tol) {
  check_alpha(alpha);
  check_inputs(y, w_obs, draws);
  for (const auto& d : draws) {
    if (d.n() != y.size()) throw DimensionMismatch("resampled assignment has the wrong length");
  }
  CiResult r;
  r.alpha = alpha;
  r.method = CiMethod::Bisection;
  r.b = draws.size();
  const double tau_obs = diff_in_means(y, w_obs);

  // Bracket half-width from the spread of the null replicate statistics.
  double mean = 0.0, sq = 0.0;
  for (std::size_t b = 0; b < draws.size(); ++b) {
    const double t = diff_in_means(y, draws[b]);
    const double delta = t - mean;
    mean += delta / static_cast<double>(b + 1);
    sq += delta * (t - mean);
  }
  const double sd =
      draws.size() > 1 ? std::sqrt(sq / static_cast<double>(draws.size() - 1)) : 0.0;
  const double left = tau_obs - 20.0 * sd;
  const double right = tau_obs + 20.0 * sd;
  const double width = right - left;
  if (tol <= 0.0) tol = 1e-6 * width;
  const std::size_t m = order_index(alpha, r.b);

  // Lower side: count(theta) = #{stat >= tau_obs} rises with theta; find the
  // boundary between count <= m (left) and count > m (right).
  auto lower_ok = [&](double theta) {
    ++r.evaluations;
    return exceed_count(y, w_obs, draws, theta, false) <= m;
  };
  // Upper side: count(theta) = #{stat <= tau_obs} falls with theta.
  auto upper_ok = [&](double theta) {
    ++r.evaluations;
    return exceed_count(y, w_obs, draws, theta, true) <= m;
  };

  if (!(width > 0.0) || !lower_ok(left) || lower_ok(right)) {
    throw BracketFailure("lower-bound bracket [" + std::to_string(left) + ", " +
                         std::to_string(right) + "] does not straddle alpha/2");
  }
  double lo = left, hi = right;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (lower_ok(mid) ? lo : hi) = mid;
  }
  r.lower = lo;

  if (upper_ok(left) || !upper_ok(right)) {
    throw BracketFailure("upper-bound bracket [" + std::to_string(left) + ", " +
                         std::to_string(right) + "] does not straddle alpha/2");
  }
  lo = left;
  hi = right;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (upper_ok(mid) ? hi : lo) = mid;
  }
  r.upper = hi;
  return r;
}

CiResult ci_bisection(const ObservedExperiment& exp, std::size_t b, double alpha,
                      std::uint64_t seed, double tol) {
  check_alpha(alpha);
  if (b < 1) throw ValidationError("replicate count b must be >= 1");
  const auto draws = draw_replicates(exp, b, seed);
  CiResult r = ci_bisection_from_draws(exp.outcomes, exp.w_obs, draws, alpha, tol);
  r.seed = seed;
  return r;
}

}  // namespace rebalance
