#include "rebalance/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>

#include "rebalance/designs.hpp"
#include "rebalance/inference.hpp"

namespace rebalance {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool is_sequential(const std::string& method) { return method.rfind("seq", 0) == 0; }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<double> observed_outcomes(const Population& pop, const Assignment& w) {
  std::vector<double> y(w.n());
  for (std::size_t i = 0; i < w.n(); ++i) y[i] = w.treated(i) ? pop.y1[i] : pop.y0[i];
  return y;
}

struct Tally {
  std::vector<double> tau_hat;
  std::size_t rejections_null = 0, rejections_alt = 0, covered = 0;
  double length = 0.0, t_sample = 0.0, t_exact = 0.0, t_bisect = 0.0;
  double inner = 0.0, outer = 0.0;
  std::uint64_t sampled = 0, forced = 0;
};

// Analyses one replicate: observed assignment w, resamples `draws`.
void analyse(const BenchConfig& cfg, const Population& pop, const Assignment& w,
             const std::vector<Assignment>& draws, Tally& tally) {
  const auto y = observed_outcomes(pop, w);
  tally.tau_hat.push_back(diff_in_means(y, w));
  if (frt_from_draws(pop.y0, w, draws).p_value <= cfg.alpha) ++tally.rejections_null;
  if (frt_from_draws(y, w, draws).p_value <= cfg.alpha) ++tally.rejections_alt;

  auto t0 = Clock::now();
  const CiResult ci = ci_exact_from_draws(y, w, draws, cfg.alpha);
  tally.t_exact += seconds_since(t0);
  if (ci.lower <= pop.tau && pop.tau <= ci.upper) ++tally.covered;
  tally.length += ci.upper - ci.lower;

  if (cfg.time_bisection) {
    t0 = Clock::now();
    ci_bisection_from_draws(y, w, draws, cfg.alpha);
    tally.t_bisect += seconds_since(t0);
  }
}

BenchRow finish(const std::string& method, const BenchConfig& cfg, const Population& pop,
                const Tally& t) {
  const auto reps = static_cast<double>(t.tau_hat.size());
  BenchRow row;
  row.method = method;
  row.n_rep = t.tau_hat.size();
  row.bias = std::abs(mean_of(t.tau_hat) - pop.tau);
  row.sd = sd_of(t.tau_hat);
  row.size = static_cast<double>(t.rejections_null) / reps;
  row.power = static_cast<double>(t.rejections_alt) / reps;
  row.cp = static_cast<double>(t.covered) / reps;
  row.length = t.length / reps;
  row.t_sample = t.sampled > 0 ? t.t_sample * 1000.0 / static_cast<double>(t.sampled) : 0.0;
  row.t_exact = t.t_exact / reps;
  row.t_bisect = cfg.time_bisection ? t.t_bisect / reps : 0.0;
  const double draws = t.sampled > 0 ? static_cast<double>(t.sampled) : 1.0;
  row.iters_inner = t.inner / draws;
  row.iters_outer = t.outer / draws;
  row.iters_total = row.iters_inner;
  row.forced_stops = t.forced;
  return row;
}

BenchRow bench_design(const BenchConfig& cfg, const Population& pop, Method method) {
  const std::size_t n = pop.covariates.n();
  const BalanceCache cache(pop.covariates, n / 2);
  DesignSpec spec;
  spec.method = method;
  spec.n_t = n / 2;
  spec.threshold_mode = ThresholdMode::AcceptanceProbability;
  spec.a_or_pa = cfg.p_a;
  spec.gamma = cfg.gamma;

  Tally tally;
  if (cfg.enumerate) {
    // Every assignment is observed once and analysed against all of them.
    const auto all = enumerate_assignments(n, n / 2, cfg.enumeration_cap);
    for (const auto& w : all) analyse(cfg, pop, w, all, tally);
    tally.sampled = 0;
    return finish(std::string(to_string(method)), cfg, pop, tally);
  }

  const auto observed = sample_replicates(cache, spec, cfg.n_rep, derive_seed(cfg.seed, 1));
  const std::uint64_t analysis_base = derive_seed(cfg.seed, 2);
  for (std::size_t r = 0; r < cfg.n_rep; ++r) {
    const auto t0 = Clock::now();
    auto traces = sample_replicates(cache, spec, cfg.b_frt, derive_seed(analysis_base, r));
    tally.t_sample += seconds_since(t0);
    tally.sampled += traces.size();
    std::vector<Assignment> draws;
    draws.reserve(traces.size());
    for (auto& tr : traces) {
      tally.inner += static_cast<double>(tr.inner_iters);
      tally.outer += static_cast<double>(tr.outer_iters);
      draws.push_back(std::move(tr.assignment));
    }
    analyse(cfg, pop, observed[r].assignment, draws, tally);
  }
  return finish(std::string(to_string(method)), cfg, pop, tally);
}

BenchRow bench_sequential(const BenchConfig& cfg, const Population& pop, SeqMethod method) {
  SeqDesign design{cfg.sequential->schedule(), method, cfg.gamma};
  const SequentialPlan plan(design, pop.covariates.data());
  auto count_forced = [](const SequentialPlan::Run& run) {
    std::uint64_t f = 0;
    for (const auto& g : run.groups) f += g.forced_stop;
    return f;
  };

  const auto observed = sequential_replicates(plan, cfg.n_rep, derive_seed(cfg.seed, 1));
  const std::uint64_t analysis_base = derive_seed(cfg.seed, 2);
  Tally tally;
  for (const auto& run : observed) tally.forced += count_forced(run);
  for (std::size_t r = 0; r < cfg.n_rep; ++r) {
    const auto t0 = Clock::now();
    auto runs = sequential_replicates(plan, cfg.b_frt, derive_seed(analysis_base, r));
    tally.t_sample += seconds_since(t0);
    tally.sampled += runs.size();
    std::vector<Assignment> draws;
    draws.reserve(runs.size());
    for (auto& run : runs) {
      for (const auto& g : run.groups) {
        tally.inner += static_cast<double>(g.inner_iters);
        tally.outer += static_cast<double>(g.outer_iters);
      }
      tally.forced += count_forced(run);
      draws.push_back(std::move(run.assignment));
    }
    analyse(cfg, pop, observed[r].assignment, draws, tally);
  }
  return finish(std::string(to_string(method)), cfg, pop, tally);
}

}  // namespace

Schedule SequentialBenchConfig::schedule() const {
  if (draws.size() != k) throw ValidationError("sequential.draws must have K entries");
  Schedule s = Schedule::equal_groups(n_k, draws);
  s.cap_multiplier = cap_multiplier;
  s.validate();
  return s;
}

std::size_t BenchConfig::units() const {
  return sequential ? sequential->k * sequential->n_k : n;
}

void BenchConfig::validate() const {
  if (!(r_squared > 0.0 && r_squared < 1.0)) throw ValidationError("r_squared must lie in (0, 1)");
  if (n_rep < 1) throw ValidationError("n_rep must be >= 1");
  if (b_frt < 1) throw ValidationError("b_frt must be >= 1");
  if (p < 1) throw ValidationError("p must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (!(p_a > 0.0 && p_a < 1.0)) throw ValidationError("p_a must lie in (0, 1)");
  if (!(effect_multiplier >= 0.0) || std::isinf(effect_multiplier)) {
    throw ValidationError("effect_multiplier must be finite and >= 0");
  }
  if (methods.empty()) throw ValidationError("methods must not be empty");
  for (const auto& m : methods) {
    if (is_sequential(m)) {
      parse_seq_method(m);
      if (!sequential) throw ValidationError("method '" + m + "' needs a [sequential] section");
    } else {
      parse_method(m);
    }
  }
  if (enumerate) {
    for (const auto& m : methods) {
      if (m != "cr") throw ValidationError("enumerate is only valid when methods = [\"cr\"]");
    }
  }
  if (sequential) {
    sequential->schedule();
    if (n != 0 && n != units()) {
      throw ValidationError("n must equal K * n_k (or be 0) for sequential configs");
    }
  }
  if (units() <= p + 1) throw ValidationError("need more units than covariates");
}

Population generate_population(const BenchConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.units();
  const std::size_t p = cfg.p;
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  const double noise_sd =
      std::sqrt(static_cast<double>(p) * (1.0 - cfg.r_squared) / cfg.r_squared);
  std::vector<double> y0(n);
  for (std::size_t i = 0; i < n; ++i) {
    y0[i] = x.row(static_cast<Eigen::Index>(i)).sum() + noise_sd * rng.normal();
  }
  const double shift = cfg.effect_multiplier * sd_of(y0);
  std::vector<double> y1(n);
  for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + shift;
  return Population{CovariateMatrix(std::move(x)), std::move(y0), std::move(y1), shift};
}

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  Rng population_rng = Rng::stream(cfg.seed, 0);
  const Population pop = generate_population(cfg, population_rng);
  std::vector<BenchRow> rows;
  for (const auto& m : cfg.methods) {
    if (is_sequential(m)) {
      rows.push_back(bench_sequential(cfg, pop, parse_seq_method(m)));
    } else {
      rows.push_back(bench_design(cfg, pop, parse_method(m)));
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "method,bias,sd,size,power,cp,length,t_sample,t_exact,t_bisect,iters_inner,iters_outer,"
         "iters_total\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(8);
  for (const auto& r : rows) {
    out << r.method << ',' << r.bias << ',' << r.sd << ',' << r.size << ',' << r.power << ','
        << r.cp << ',' << r.length << ',' << r.t_sample << ',' << r.t_exact << ',' << r.t_bisect
        << ',' << r.iters_inner << ',' << r.iters_outer << ',' << r.iters_total << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace rebalance
