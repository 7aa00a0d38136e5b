#include "rebalance/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "rebalance/kernels.hpp"

namespace rebalance {

namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

double binary_entropy(double p) { return xlogx(p) + xlogx(1.0 - p); }

double pair_count(std::size_t n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); }

void check_props(std::span<const double> props, std::size_t n_t, std::size_t n) {
  if (n < 2 || n_t > n) throw DomainError("need n >= 2 and n_t <= n");
  if (props.size() != n * (n - 1) / 2) {
    throw DimensionMismatch("pair proportion count differs from n (n - 1) / 2");
  }
  for (double p : props) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("pair proportions must lie in [0, 1]");
  }
}

double sample_variance(std::span<const double> v) {
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - mean;
    mean += d / static_cast<double>(i + 1);
    sq += d * (v[i] - mean);
  }
  return sq / static_cast<double>(v.size() - 1);
}

}  // namespace

std::vector<double> pair_same_group_proportions(std::span<const Assignment> samples) {
  if (samples.empty()) throw EmptyInput("no assignments supplied");
  for (const auto& s : samples) {
    if (s.n_treated() != samples.front().n_treated() || s.n() != samples.front().n()) {
      throw DimensionMismatch("assignments differ in length or treated count");
    }
  }
  const auto counts = kernels::same_group_counts(samples);
  std::vector<double> props(counts.size());
  const auto b = static_cast<double>(samples.size());
  std::transform(counts.begin(), counts.end(), props.begin(),
                 [b](std::uint64_t c) { return static_cast<double>(c) / b; });
  return props;
}

double p_cre(std::size_t n_t, std::size_t n) {
  if (n < 2 || n_t > n) throw DomainError("need n >= 2 and n_t <= n");
  return (pair_count(n_t) + pair_count(n - n_t)) / pair_count(n);
}

double entropy_metric(std::span<const double> pair_props, std::size_t n_t, std::size_t n) {
  check_props(pair_props, n_t, n);
  const double reference = binary_entropy(p_cre(n_t, n));
  if (reference == 0.0) throw DomainError("entropy metric undefined when p_cre is 0 or 1");
  double total = 0.0;
  for (double p : pair_props) total += binary_entropy(p);
  const double e = total / static_cast<double>(pair_props.size()) / reference;
  return std::clamp(e, 0.0, 1.0);
}

double sd_metric(std::span<const double> pair_props, std::size_t n_t, std::size_t n) {
  check_props(pair_props, n_t, n);
  const double pc = p_cre(n_t, n);
  const double pairs = static_cast<double>(pair_props.size());
  const double cross = static_cast<double>(n_t) * static_cast<double>(n - n_t);
  const double normalizer = (cross * pc * pc + (pairs - cross) * (1.0 - pc) * (1.0 - pc)) / pairs;
  if (normalizer == 0.0) throw DomainError("sd metric undefined for this (n, n_t)");
  double total = 0.0;
  for (double p : pair_props) total += (p - pc) * (p - pc);
  return std::clamp(std::sqrt(total / pairs / normalizer), 0.0, 1.0);
}

double largest_eigenvalue(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("matrix is not square");
  const Eigen::Index n = a.rows();
  if (n == 0) throw EmptyInput("empty matrix");
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;

  constexpr int kMaxIter = 10'000;
  constexpr double kTol = 1e-8;
  Vector v = Vector::Ones(n).normalized();
  bool restarted = false;
  double lambda = 0.0;
  for (int iter = 0; iter < kMaxIter; ++iter) {
    Vector u = a * v;
    const double norm = u.norm();
    if (norm <= 1e-10 * scale) {
      // v sits in the null space (the all-ones start under fixed margins).
      if (restarted) return 0.0;
      restarted = true;
      v = Vector::LinSpaced(n, 1.0, 2.0).normalized();
      lambda = 0.0;
      continue;
    }
    const double next = v.dot(u);
    v = u / norm;
    if (iter > 0 && std::abs(next - lambda) < kTol) return next;
    lambda = next;
  }
  throw EigFailure("power iteration did not converge in 10000 iterations");
}

Matrix signed_covariance(std::span<const Assignment> samples) {
  if (samples.size() < 2) throw EmptyInput("need at least two assignments");
  const std::size_t n = samples.front().n();
  Matrix v(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(n));
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (samples[b].n() != n) throw DimensionMismatch("assignments differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      v(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) = samples[b].treated(i) ? 1.0 : -1.0;
    }
  }
  const Vector mean = v.colwise().mean();
  v.rowwise() -= mean.transpose();
  Matrix cov = v.transpose() * v / static_cast<double>(samples.size() - 1);
  return 0.5 * (cov + cov.transpose());
}

double max_eig_metric(std::span<const Assignment> samples) {
  return largest_eigenvalue(signed_covariance(samples));
}

std::map<std::string, double> priv(const std::map<std::string, std::vector<double>>& by_method,
                                   const std::string& baseline) {
  const auto base = by_method.find(baseline);
  if (base == by_method.end()) throw MissingBaseline("baseline '" + baseline + "' not supplied");
  for (const auto& [name, values] : by_method) {
    if (values.size() < 2) throw ValidationError("method '" + name + "' needs >= 2 values");
  }
  const double var_base = sample_variance(base->second);
  if (var_base == 0.0) throw DomainError("baseline variance is zero");
  std::map<std::string, double> out;
  for (const auto& [name, values] : by_method) {
    out[name] = 100.0 * (1.0 - sample_variance(values) / var_base);
  }
  return out;
}

std::map<std::string, std::vector<double>> priv_columns(
    const std::map<std::string, Matrix>& by_method, const std::string& baseline) {
  const auto base = by_method.find(baseline);
  if (base == by_method.end()) throw MissingBaseline("baseline '" + baseline + "' not supplied");
  const Eigen::Index cols = base->second.cols();
  std::map<std::string, std::vector<double>> out;
  for (Eigen::Index c = 0; c < cols; ++c) {
    std::map<std::string, std::vector<double>> column;
    for (const auto& [name, m] : by_method) {
      if (m.cols() != cols) throw DimensionMismatch("methods differ in column count");
      column[name].assign(m.col(c).data(), m.col(c).data() + m.rows());
    }
    for (const auto& [name, value] : priv(column, baseline)) out[name].push_back(value);
  }
  return out;
}

std::vector<std::optional<double>> standardized_differences(const Matrix& x, const Assignment& w) {
  if (static_cast<std::size_t>(x.rows()) != w.n()) {
    throw DimensionMismatch("assignment length differs from covariate rows");
  }
  const auto n_t = static_cast<double>(w.n_treated());
  const auto n_c = static_cast<double>(w.n_control());
  std::vector<std::optional<double>> out;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    double sum_t = 0.0, sum_c = 0.0;
    bool binary = true;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, c);
      binary = binary && (v == 0.0 || v == 1.0);
      (w.treated(static_cast<std::size_t>(i)) ? sum_t : sum_c) += v;
    }
    if (n_t == 0.0 || n_c == 0.0) {
      out.emplace_back();
      continue;
    }
    const double mean_t = sum_t / n_t, mean_c = sum_c / n_c;
    double denom_sq = 0.0;
    if (binary) {
      denom_sq = (mean_t * (1.0 - mean_t) + mean_c * (1.0 - mean_c)) / 2.0;
    } else if (n_t >= 2.0 && n_c >= 2.0) {
      double ss_t = 0.0, ss_c = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const bool t = w.treated(static_cast<std::size_t>(i));
        const double d = x(i, c) - (t ? mean_t : mean_c);
        (t ? ss_t : ss_c) += d * d;
      }
      denom_sq = (ss_t / (n_t - 1.0) + ss_c / (n_c - 1.0)) / 2.0;
    }
    if (denom_sq > 0.0) {
      out.emplace_back((mean_t - mean_c) / std::sqrt(denom_sq));
    } else {
      out.emplace_back();
    }
  }
  return out;
}

RandomnessReport randomness_report(std::span<const Assignment> samples) {
  RandomnessReport r;
  r.pair_props = pair_same_group_proportions(samples);
  const std::size_t n = samples.front().n();
  const std::size_t n_t = samples.front().n_treated();
  r.b_used = samples.size();
  r.e_n = entropy_metric(r.pair_props, n_t, n);
  r.d_n = sd_metric(r.pair_props, n_t, n);
  r.l_n = samples.size() >= 2 ? max_eig_metric(samples) : 0.0;
  return r;
}

BalanceReport balance_report(const BalanceCache& cache, const Assignment& w) {
  BalanceReport r;
  r.std_diffs = standardized_differences(cache.covariates(), w);
  r.mahalanobis = mahalanobis(cache, w);
  return r;
}

}  // namespace rebalance
