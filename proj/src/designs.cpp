#include "rebalance/designs.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "rebalance/distributions.hpp"

namespace rebalance {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::uint8_t> copy_values(const Assignment& w) {
  return {w.values().begin(), w.values().end()};
}

// Partial Fisher-Yates: the first `k` entries of `perm` become a uniform
// k-subset. Any starting order of `perm` is fine.
void choose_subset(std::vector<std::size_t>& perm, std::size_t k, Rng& rng) {
  const std::size_t m = perm.size();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t r = i + static_cast<std::size_t>(rng.below(m - i));
    std::swap(perm[i], perm[r]);
  }
}

void fill_block(std::vector<std::uint8_t>& w, std::size_t offset,
                const std::vector<std::size_t>& perm, std::size_t k) {
  std::fill(w.begin() + static_cast<std::ptrdiff_t>(offset), w.end(), std::uint8_t{0});
  for (std::size_t i = 0; i < k; ++i) w[offset + perm[i]] = 1;
}

std::size_t block_treated(const Assignment& w, std::size_t offset) {
  std::size_t t = 0;
  for (std::size_t i = offset; i < w.n(); ++i) t += w[i];
  return t;
}

std::string cap_message(std::string_view what, std::uint64_t cap, double best_m, double a) {
  std::ostringstream os;
  os << what << " exceeded its iteration cap of " << cap << " (best M = " << best_m
     << ", threshold a = " << a << ")";
  return os.str();
}

}  // namespace

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::CR: return "cr";
    case Method::RR: return "rr";
    case Method::GPS: return "gps";
    case Method::PSRR: return "psrr";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "cr") return Method::CR;
  if (s == "rr") return Method::RR;
  if (s == "gps") return Method::GPS;
  if (s == "psrr") return Method::PSRR;
  throw ValidationError("unknown design method '" + std::string(name) + "'");
}

void DesignSpec::validate() const {
  if (threshold_mode == ThresholdMode::AcceptanceProbability) {
    if (!(a_or_pa > 0.0 && a_or_pa < 1.0)) {
      throw ValidationError("acceptance probability p_a must lie in (0, 1)");
    }
  } else if (!(a_or_pa > 0.0)) {
    throw ValidationError("threshold a must be > 0");
  }
  if (!(gamma >= 0.0) || std::isinf(gamma)) throw ValidationError("gamma must be finite and >= 0");
  if (max_total_iters == 0) throw ValidationError("max_total_iters must be >= 1");
}

double DesignSpec::threshold(std::size_t p) const {
  validate();
  if (threshold_mode == ThresholdMode::AcceptanceProbability) {
    return threshold_from_pa(p, a_or_pa);
  }
  return a_or_pa;
}

double threshold_from_pa(std::size_t p, double p_a) {
  return chi2_quantile(p_a, static_cast<int>(p), 0.0);
}

Assignment draw_complete(std::size_t n, std::size_t n_t, Rng& rng) {
  if (n_t > n) throw DomainError("treated count exceeds unit count");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  choose_subset(perm, n_t, rng);
  std::vector<std::uint8_t> w(n, 0);
  fill_block(w, 0, perm, n_t);
  return Assignment(std::move(w));
}

namespace chains {

Assignment redraw_block(const Assignment& base, std::size_t offset, Rng& rng) {
  if (offset > base.n()) throw DimensionMismatch("block offset beyond assignment");
  const std::size_t k = block_treated(base, offset);
  std::vector<std::size_t> perm(base.n() - offset);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  choose_subset(perm, k, rng);
  auto w = copy_values(base);
  fill_block(w, offset, perm, k);
  return Assignment(std::move(w));
}

double switch_acceptance(double m_current, double m_star, double gamma) noexcept {
  if (m_star <= m_current) return 1.0;  // includes M* = 0
  if (gamma == 0.0) return 1.0;
  if (m_current <= 0.0) return 0.0;
  return std::pow(m_current / m_star, gamma);
}

SampleTrace rerandomize(const BalanceCache& cache, const Assignment& start, std::size_t offset,
                        double a, std::uint64_t max_draws, bool best_on_cap, Rng& rng) {
  if (start.n() != cache.n()) throw DimensionMismatch("start assignment length differs from cache");
  const auto t0 = Clock::now();
  const std::size_t k = block_treated(start, offset);
  std::vector<std::size_t> perm(start.n() - offset);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto w = copy_values(start);

  SampleTrace trace;
  trace.threshold = a;
  double best_m = std::numeric_limits<double>::infinity();
  Assignment best;
  for (std::uint64_t draw = 1;; ++draw) {
    choose_subset(perm, k, rng);
    fill_block(w, offset, perm, k);
    Assignment candidate(w);
    const double m = mahalanobis(cache, candidate);
    if (m <= a) {
      trace.assignment = std::move(candidate);
      trace.final_m = m;
      trace.inner_iters = trace.outer_iters = draw;
      trace.rejections = draw - 1;
      break;
    }
    if (m < best_m) {
      best_m = m;
      best = std::move(candidate);
    }
    if (draw >= max_draws) {
      if (!best_on_cap) {
        throw IterationCapExceeded(cap_message("rerandomization", max_draws, best_m, a),
                                   std::move(best), best_m);
      }
      trace.assignment = std::move(best);
      trace.final_m = best_m;
      trace.inner_iters = trace.outer_iters = draw;
      trace.rejections = draw;
      trace.forced_stop = true;
      break;
    }
  }
  trace.meets_threshold = trace.final_m <= a;
  trace.wall_clock = Clock::now() - t0;
  return trace;
}

SampleTrace pair_switch(const BalanceCache& cache, Assignment start, std::size_t offset,
                        double a, double gamma, std::uint64_t max_proposals, bool best_on_cap,
                        Rng& rng) {
  if (start.n() != cache.n()) throw DimensionMismatch("start assignment length differs from cache");
  const auto t0 = Clock::now();
  SwitchState state(cache, std::move(start));

  std::vector<std::size_t> treated, control;
  for (std::size_t i = offset; i < cache.n(); ++i) {
    (state.assignment().treated(i) ? treated : control).push_back(i);
  }

  SampleTrace trace;
  trace.threshold = a;
  double best_m = state.m();
  Assignment best = state.assignment();
  std::uint64_t proposals = 0, moves = 0;
  bool capped = false;

  if (state.m() > a && (treated.empty() || control.empty())) {
    capped = true;  // nothing can move
  }
  while (!capped && state.m() > a) {
    if (proposals >= max_proposals) {
      capped = true;
      break;
    }
    const std::size_t ti = static_cast<std::size_t>(rng.below(treated.size()));
    const std::size_t cj = static_cast<std::size_t>(rng.below(control.size()));
    const std::size_t i = treated[ti];
    const std::size_t j = control[cj];
    ++proposals;
    const double m_star = state.propose(i, j);
    const double q = switch_acceptance(state.m(), m_star, gamma);
    const bool accept = q >= 1.0 || rng.uniform() < q;
    if (!accept) continue;
    state.apply(i, j, m_star);
    std::swap(treated[ti], control[cj]);
    ++moves;
    if (moves % kRefreshInterval == 0) state.refresh();
    if (state.m() < best_m) {
      best_m = state.m();
      best = state.assignment();
    }
  }

  trace.inner_iters = proposals;
  trace.outer_iters = moves;
  trace.rejections = proposals - moves;
  if (capped) {
    if (!best_on_cap) {
      throw IterationCapExceeded(cap_message("pair-switching", max_proposals, best_m, a),
                                 std::move(best), best_m);
    }
    trace.assignment = std::move(best);
    trace.final_m = best_m;
    trace.forced_stop = true;
  } else {
    trace.assignment = state.assignment();
    trace.final_m = state.m();
  }
  trace.meets_threshold = trace.final_m <= a;
  trace.wall_clock = Clock::now() - t0;
  return trace;
}

}  // namespace chains

SampleTrace sample_cr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng) {
  if (spec.n_t != cache.n_t()) throw DimensionMismatch("design n_t differs from the cache's n_t");
  const auto t0 = Clock::now();
  SampleTrace trace;
  trace.assignment = draw_complete(cache.n(), spec.n_t, rng);
  trace.final_m = mahalanobis(cache, trace.assignment);
  trace.inner_iters = trace.outer_iters = 1;
  trace.threshold = std::numeric_limits<double>::infinity();
  trace.meets_threshold = true;
  trace.wall_clock = Clock::now() - t0;
  return trace;
}

SampleTrace sample_rr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng) {
  if (spec.n_t != cache.n_t()) throw DimensionMismatch("design n_t differs from the cache's n_t");
  const double a = spec.threshold(cache.p());
  std::vector<std::uint8_t> zeros(cache.n(), 0);
  std::fill(zeros.begin(), zeros.begin() + static_cast<std::ptrdiff_t>(spec.n_t), std::uint8_t{1});
  return chains::rerandomize(cache, Assignment(std::move(zeros)), 0, a, spec.max_total_iters,
                             false, rng);
}

SampleTrace sample_psrr(const BalanceCache& cache, const DesignSpec& spec, Rng& rng) {
  if (spec.n_t != cache.n_t()) throw DimensionMismatch("design n_t differs from the cache's n_t");
  const double a = spec.threshold(cache.p());
  const auto t0 = Clock::now();
  Assignment start = draw_complete(cache.n(), spec.n_t, rng);
  SampleTrace trace = chains::pair_switch(cache, std::move(start), 0, a, spec.gamma,
                                          spec.max_total_iters, false, rng);
  trace.wall_clock = Clock::now() - t0;
  return trace;
}

SampleTrace sample_gps(const BalanceCache& cache, const DesignSpec& spec, Rng& rng) {
  if (spec.n_t != cache.n_t()) throw DimensionMismatch("design n_t differs from the cache's n_t");
  const double a = spec.threshold(cache.p());
  const auto t0 = Clock::now();
  SwitchState state(cache, draw_complete(cache.n(), spec.n_t, rng));
  const std::size_t n = cache.n();
  const std::uint64_t pairs =
      static_cast<std::uint64_t>(spec.n_t) * static_cast<std::uint64_t>(n - spec.n_t);

  SampleTrace trace;
  trace.threshold = a;
  std::vector<std::size_t> treated, control;
  treated.reserve(spec.n_t);
  control.reserve(n - spec.n_t);
  for (;;) {
    if (trace.inner_iters + pairs > spec.max_total_iters) {
      throw IterationCapExceeded(cap_message("greedy pair switching", spec.max_total_iters,
                                             state.m(), a),
                                 state.assignment(), state.m());
    }
    ++trace.outer_iters;
    trace.inner_iters += pairs;
    treated.clear();
    control.clear();
    for (std::size_t i = 0; i < n; ++i) {
      (state.assignment().treated(i) ? treated : control).push_back(i);
    }
    // Strict '<' keeps the first minimum in (treated, control) row-major order.
    double best_m = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0, best_j = 0;
    for (std::size_t i : treated) {
      for (std::size_t j : control) {
        const double m = state.propose(i, j);
        if (m < best_m) {
          best_m = m;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (!(best_m < state.m())) break;
    state.apply(best_i, best_j, best_m);
    if (state.applied() % kRefreshInterval == 0) state.refresh();
  }
  trace.assignment = state.assignment();
  trace.final_m = state.m();
  trace.meets_threshold = trace.final_m <= a;
  trace.wall_clock = Clock::now() - t0;
  return trace;
}

SampleTrace sample(const BalanceCache& cache, const DesignSpec& spec, Rng& rng) {
  switch (spec.method) {
    case Method::CR: return sample_cr(cache, spec, rng);
    case Method::RR: return sample_rr(cache, spec, rng);
    case Method::GPS: return sample_gps(cache, spec, rng);
    case Method::PSRR: return sample_psrr(cache, spec, rng);
  }
  throw ValidationError("unknown design method");
}

}  // namespace rebalance
