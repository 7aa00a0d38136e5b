#include "rebalance/cli.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rebalance/bench.hpp"
#include "rebalance/designs.hpp"
#include "rebalance/diagnostics.hpp"
#include "rebalance/inference.hpp"
#include "rebalance/io.hpp"
#include "rebalance/kernels.hpp"
#include "rebalance/sequential.hpp"

namespace rebalance {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct DesignOptions {
  std::string covariates;
  std::string method = "cr";
  std::size_t n_t = 0;
  double a = std::numeric_limits<double>::quiet_NaN();
  double p_a = std::numeric_limits<double>::quiet_NaN();
  double gamma = 10.0;
  std::uint64_t max_iters = 10'000'000;
  std::uint64_t seed = 0;
  std::string schedule;
};

struct Globals {
  int threads = 0;
  std::string format = "json";
};

void add_design_options(CLI::App* cmd, DesignOptions& o, bool need_nt) {
  cmd->add_option("--covariates", o.covariates, "Covariate CSV (n rows, p columns)")->required();
  cmd->add_option("--method", o.method, "cr | rr | gps | psrr (frt/ci also: seqcr | seqrr | seqpsrr)");
  auto* nt = cmd->add_option("--nt", o.n_t, "Treated count");
  if (need_nt) nt->required();
  auto* a = cmd->add_option("--a", o.a, "Balance threshold a");
  auto* pa = cmd->add_option("--pa", o.p_a, "Acceptance probability p_a (sets a by quantile)");
  a->excludes(pa);
  pa->excludes(a);
  cmd->add_option("--gamma", o.gamma, "Pair-switching temperature exponent");
  cmd->add_option("--max-iters", o.max_iters, "Iteration cap");
  cmd->add_option("--seed", o.seed, "Random seed")->required();
}

DesignSpec make_spec(const DesignOptions& o, std::size_t n_t) {
  DesignSpec spec;
  spec.method = parse_method(o.method);
  spec.n_t = n_t;
  if (!std::isnan(o.p_a)) {
    spec.threshold_mode = ThresholdMode::AcceptanceProbability;
    spec.a_or_pa = o.p_a;
  } else if (!std::isnan(o.a)) {
    spec.a_or_pa = o.a;
  }
  spec.gamma = o.gamma;
  spec.max_total_iters = o.max_iters;
  spec.seed = o.seed;
  spec.validate();
  return spec;
}

bool is_sequential(const std::string& method) {
  std::string m = method;
  for (auto& c : m) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return m.rfind("seq", 0) == 0;
}

ordered_json trace_json(const SampleTrace& t) {
  return ordered_json{{"final_m", t.final_m},
                      {"threshold", t.threshold},
                      {"meets_threshold", t.meets_threshold},
                      {"inner_iters", t.inner_iters},
                      {"outer_iters", t.outer_iters},
                      {"rejections", t.rejections},
                      {"forced_stop", t.forced_stop}};
}

ordered_json design_echo(const DesignDescriptor& d, std::size_t p) {
  if (const auto* spec = std::get_if<DesignSpec>(&d)) {
    ordered_json j{{"method", std::string(to_string(spec->method))}, {"n_t", spec->n_t}};
    if (spec->method != Method::CR) {
      j["a"] = spec->threshold(p);
      if (spec->threshold_mode == ThresholdMode::AcceptanceProbability) j["p_a"] = spec->a_or_pa;
      j["gamma"] = spec->gamma;
    }
    return j;
  }
  const auto& seq = std::get<SeqDesign>(d);
  return ordered_json{{"method", std::string(to_string(seq.method))},
                      {"gamma", seq.gamma},
                      {"group_sizes", seq.schedule.group_sizes},
                      {"treated_sizes", seq.schedule.treated_sizes},
                      {"draws", seq.schedule.draws},
                      {"cap_multiplier", seq.schedule.cap_multiplier}};
}

std::string json_or_csv(const ordered_json& doc, const std::string& format) {
  if (format == "json") return doc.dump(2) + "\n";
  std::ostringstream header, row;
  bool first = true;
  for (const auto& [key, value] : doc.items()) {
    if (value.is_structured()) continue;
    header << (first ? "" : ",") << key;
    row << (first ? "" : ",") << (value.is_string() ? value.get<std::string>() : value.dump());
    first = false;
  }
  return header.str() + "\n" + row.str() + "\n";
}

void emit(std::ostream& out, const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    io::atomic_write(path, text);
  }
}

ObservedExperiment load_experiment(const DesignOptions& o, const std::string& outcomes,
                                   const std::string& assignment) {
  CovariateMatrix x = io::read_covariates(o.covariates);
  Assignment w = io::read_assignment(assignment);
  std::vector<double> y = io::read_column(outcomes);
  DesignDescriptor design;
  if (is_sequential(o.method)) {
    if (o.schedule.empty()) throw ValidationError("--schedule is required for sequential methods");
    SeqDesign seq{io::schedule_from_json(io::read_file(o.schedule)), parse_seq_method(o.method),
                  o.gamma};
    design = seq;
  } else {
    if (o.n_t != 0 && o.n_t != w.n_treated()) {
      throw ValidationError("--nt differs from the observed treated count");
    }
    design = make_spec(o, w.n_treated());
  }
  ObservedExperiment exp{std::move(x), std::move(w), std::move(y), std::move(design)};
  exp.validate();
  return exp;
}

int fail(std::ostream& err, std::string_view kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Covariate-balanced treatment assignment and randomisation inference"};
  app.name("rebalance");
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (default: $REBALANCE_THREADS or all)");
  app.add_option("--format", g.format, "Result format")->check(CLI::IsMember({"json", "csv"}));

  // design / sample
  DesignOptions design_opts;
  std::string design_out, design_trace;
  auto* design = app.add_subcommand("design", "Draw one assignment");
  add_design_options(design, design_opts, true);
  design->add_option("--out", design_out, "Assignment CSV")->required();
  design->add_option("--trace", design_trace, "Trace JSON");

  DesignOptions sample_opts;
  std::size_t sample_b = 1;
  std::string sample_out, sample_summary;
  auto* sample_cmd = app.add_subcommand("sample", "Draw B assignments");
  add_design_options(sample_cmd, sample_opts, true);
  sample_cmd->add_option("--b", sample_b, "Number of assignments")->required();
  sample_cmd->add_option("--out", sample_out, "n x B assignment CSV")->required();
  sample_cmd->add_option("--summary", sample_summary, "Summary JSON (default: stdout)");

  // check
  std::string check_cov, check_w;
  double check_a = std::numeric_limits<double>::quiet_NaN();
  double check_pa = std::numeric_limits<double>::quiet_NaN();
  auto* check = app.add_subcommand("check", "Report the balance of an assignment");
  check->add_option("--covariates", check_cov, "Covariate CSV")->required();
  check->add_option("--assignment", check_w, "Assignment CSV")->required();
  auto* ca = check->add_option("--a", check_a, "Threshold a");
  auto* cpa = check->add_option("--pa", check_pa, "Acceptance probability p_a");
  ca->excludes(cpa);
  cpa->excludes(ca);

  // frt / ci
  DesignOptions frt_opts;
  std::string frt_y, frt_w, frt_out;
  std::size_t frt_b = 1000;
  bool frt_plus_one = false, frt_enumerate = false;
  auto* frt_cmd = app.add_subcommand("frt", "Fisher randomisation test");
  add_design_options(frt_cmd, frt_opts, false);
  frt_cmd->add_option("--outcomes", frt_y, "Outcome CSV")->required();
  frt_cmd->add_option("--assignment", frt_w, "Observed assignment CSV")->required();
  frt_cmd->add_option("--schedule", frt_opts.schedule, "Schedule JSON (sequential methods)");
  frt_cmd->add_option("--b", frt_b, "Resamples");
  frt_cmd->add_flag("--plus-one", frt_plus_one, "Use (1 + count) / (1 + B)");
  frt_cmd->add_flag("--enumerate", frt_enumerate, "Enumerate all assignments (cr only)");
  frt_cmd->add_option("--out", frt_out, "Result file (default: stdout)");

  DesignOptions ci_opts;
  std::string ci_y, ci_w, ci_out, ci_method = "exact";
  std::size_t ci_b = 1000;
  double ci_alpha = 0.05, ci_tol = 0.0;
  auto* ci_cmd = app.add_subcommand("ci", "Randomisation confidence interval");
  add_design_options(ci_cmd, ci_opts, false);
  ci_cmd->add_option("--outcomes", ci_y, "Outcome CSV")->required();
  ci_cmd->add_option("--assignment", ci_w, "Observed assignment CSV")->required();
  ci_cmd->add_option("--schedule", ci_opts.schedule, "Schedule JSON (sequential methods)");
  ci_cmd->add_option("--b", ci_b, "Resamples");
  ci_cmd->add_option("--alpha", ci_alpha, "Two-sided level");
  ci_cmd->add_option("--ci-method", ci_method, "exact | bisection")
      ->check(CLI::IsMember({"exact", "bisection"}));
  ci_cmd->add_option("--tol", ci_tol, "Bisection tolerance (default 1e-6 of the bracket)");
  ci_cmd->add_option("--out", ci_out, "Result file (default: stdout)");

  // seq
  auto* seq = app.add_subcommand("seq", "Group-sequential sessions");
  seq->require_subcommand(1);
  std::string init_schedule, init_method = "seqpsrr", init_session;
  double init_gamma = 10.0;
  std::uint64_t init_seed = 0;
  auto* seq_init = seq->add_subcommand("init", "Start a session");
  seq_init->add_option("--schedule", init_schedule, "Schedule JSON")->required();
  seq_init->add_option("--method", init_method, "seqcr | seqrr | seqpsrr");
  seq_init->add_option("--gamma", init_gamma, "Pair-switching temperature exponent");
  seq_init->add_option("--seed", init_seed, "Random seed")->required();
  seq_init->add_option("--session", init_session, "Session file to create")->required();

  std::string next_session, next_cov, next_out, next_trace;
  auto* seq_next = seq->add_subcommand("next", "Assign the next group");
  seq_next->add_option("--session", next_session, "Session file")->required();
  seq_next->add_option("--covariates", next_cov, "Covariates of the arriving group")->required();
  seq_next->add_option("--out", next_out, "Group assignment CSV")->required();
  seq_next->add_option("--trace", next_trace, "Trace JSON (default: stdout)");

  // metrics / bench
  std::string metrics_samples, metrics_out, metrics_pairs;
  auto* metrics = app.add_subcommand("metrics", "Randomness metrics of sampled assignments");
  metrics->add_option("--samples", metrics_samples, "n x B assignment CSV")->required();
  metrics->add_option("--out", metrics_out, "Report file (default: stdout)");
  metrics->add_option("--pairs", metrics_pairs, "CSV of pair proportions");

  std::string bench_config, bench_out;
  auto* bench = app.add_subcommand("bench", "Simulation benchmark");
  bench->add_option("--config", bench_config, "TOML-style config")->required();
  bench->add_option("--out", bench_out, "Result CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), kExitValidation);
  }

  try {
    kernels::set_threads(g.threads > 0 ? g.threads : kernels::threads_from_env());

    if (*design) {
      const CovariateMatrix x = io::read_covariates(design_opts.covariates);
      const DesignSpec spec = make_spec(design_opts, design_opts.n_t);
      const BalanceCache cache(x, spec.n_t);
      Rng rng = Rng::stream(spec.seed, 0);
      const SampleTrace t = sample(cache, spec, rng);
      io::atomic_write(design_out, io::format_column(t.assignment));
      if (!design_trace.empty()) {
        ordered_json doc{{"method", std::string(to_string(spec.method))}, {"seed", spec.seed}};
        doc.update(trace_json(t));
        io::atomic_write(design_trace, doc.dump(2) + "\n");
      }
      return kExitOk;
    }

    if (*sample_cmd) {
      if (sample_b < 1) throw ValidationError("--b must be >= 1");
      const CovariateMatrix x = io::read_covariates(sample_opts.covariates);
      const DesignSpec spec = make_spec(sample_opts, sample_opts.n_t);
      const BalanceCache cache(x, spec.n_t);
      const auto traces = sample_replicates(cache, spec, sample_b, spec.seed);
      std::vector<Assignment> draws;
      ordered_json per_draw = ordered_json::array();
      for (const auto& t : traces) {
        draws.push_back(t.assignment);
        per_draw.push_back(trace_json(t));
      }
      io::atomic_write(sample_out, io::format_assignment_matrix(draws));
      ordered_json doc{{"method", std::string(to_string(spec.method))},
                       {"seed", spec.seed},
                       {"b", sample_b},
                       {"threshold", spec.method == Method::CR
                                         ? std::numeric_limits<double>::infinity()
                                         : spec.threshold(x.p())},
                       {"draws", per_draw}};
      emit(out, sample_summary, doc.dump(2) + "\n");
      return kExitOk;
    }

    if (*check) {
      const CovariateMatrix x = io::read_covariates(check_cov);
      const Assignment w = io::read_assignment(check_w);
      if (w.n() != x.n()) throw DimensionMismatch("assignment length differs from covariate rows");
      const BalanceCache cache(x, w.n_treated());
      const BalanceReport report = balance_report(cache, w);
      ordered_json doc{{"n", w.n()}, {"n_t", w.n_treated()}, {"m", report.mahalanobis}};
      double a = std::numeric_limits<double>::quiet_NaN();
      if (!std::isnan(check_pa)) a = threshold_from_pa(x.p(), check_pa);
      if (!std::isnan(check_a)) a = check_a;
      if (!std::isnan(a)) {
        doc["threshold"] = a;
        doc["meets_threshold"] = report.mahalanobis <= a;
      }
      ordered_json diffs = ordered_json::array();
      for (const auto& d : report.std_diffs) diffs.push_back(d ? ordered_json(*d) : ordered_json());
      doc["std_diffs"] = diffs;
      out << json_or_csv(doc, g.format);
      return kExitOk;
    }

    if (*frt_cmd) {
      const ObservedExperiment exp = load_experiment(frt_opts, frt_y, frt_w);
      FrtOptions options;
      options.plus_one = frt_plus_one;
      options.enumerate = frt_enumerate;
      const FrtResult r = frt(exp, frt_b, frt_opts.seed, options);
      ordered_json doc{{"p_value", r.p_value},
                       {"b", r.b},
                       {"tau_obs", r.tau_obs},
                       {"seed", r.seed},
                       {"plus_one", r.plus_one},
                       {"enumerated", r.enumerated},
                       {"design_echo", design_echo(exp.design, exp.covariates.p())}};
      emit(out, frt_out, json_or_csv(doc, g.format));
      return kExitOk;
    }

    if (*ci_cmd) {
      if (!(ci_alpha > 0.0 && ci_alpha < 1.0)) throw ValidationError("--alpha must lie in (0, 1)");
      const ObservedExperiment exp = load_experiment(ci_opts, ci_y, ci_w);
      const CiResult r = ci_method == "exact"
                             ? ci_exact(exp, ci_b, ci_alpha, ci_opts.seed)
                             : ci_bisection(exp, ci_b, ci_alpha, ci_opts.seed, ci_tol);
      ordered_json doc{{"lower", r.lower},
                       {"upper", r.upper},
                       {"alpha", r.alpha},
                       {"method", std::string(to_string(r.method))},
                       {"b", r.b},
                       {"seed", r.seed},
                       {"design_echo", design_echo(exp.design, exp.covariates.p())}};
      emit(out, ci_out, json_or_csv(doc, g.format));
      return kExitOk;
    }

    if (*seq_init) {
      SeqDesign d{io::schedule_from_json(io::read_file(init_schedule)),
                  parse_seq_method(init_method), init_gamma};
      const SeqSession session(std::move(d), init_seed);
      io::atomic_write(init_session, io::session_to_json(session));
      return kExitOk;
    }

    if (*seq_next) {
      SeqSession session = io::session_from_json(io::read_file(next_session));
      if (session.complete()) {
        throw ValidationError("session already has all " +
                              std::to_string(session.schedule().k_total()) + " groups assigned");
      }
      const Matrix group = io::read_csv(next_cov).to_matrix();
      const SampleTrace t = seq_next_group(session, group);
      io::atomic_write(next_out, io::format_column(t.assignment));
      io::atomic_write(next_session, io::session_to_json(session));
      ordered_json doc{{"k", session.k_done()}, {"k_total", session.schedule().k_total()}};
      doc.update(trace_json(t));
      emit(out, next_trace, doc.dump(2) + "\n");
      return t.forced_stop ? kExitForcedStop : kExitOk;
    }

    if (*metrics) {
      const auto samples = io::read_assignment_matrix(metrics_samples);
      const RandomnessReport r = randomness_report(samples);
      ordered_json doc{{"e_n", r.e_n}, {"d_n", r.d_n}, {"l_n", r.l_n}, {"b_used", r.b_used},
                       {"n", samples.front().n()}, {"n_t", samples.front().n_treated()}};
      emit(out, metrics_out, json_or_csv(doc, g.format));
      if (!metrics_pairs.empty()) {
        std::ostringstream pairs;
        pairs << "i,j,p\n";
        pairs.precision(17);
        const std::size_t n = samples.front().n();
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j, ++k) {
            pairs << i << ',' << j << ',' << r.pair_props[k] << '\n';
          }
        }
        io::atomic_write(metrics_pairs, pairs.str());
      }
      return kExitOk;
    }

    if (*bench) {
      const BenchConfig cfg = io::bench_config_from_toml(io::read_file(bench_config));
      const auto rows = run_bench(cfg);
      std::ostringstream csv;
      write_bench_csv(csv, rows);
      emit(out, bench_out, csv.str());
      return kExitOk;
    }
  } catch (const IterationCapExceeded& e) {
    return fail(err, to_string(e.kind()), e.what(), kExitIterationCap);
  } catch (const Error& e) {
    return fail(err, to_string(e.kind()), e.what(), kExitValidation);
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what(), kExitValidation);
  }
  return kExitValidation;
}

}  // namespace rebalance
