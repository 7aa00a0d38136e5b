#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rebalance/balance.hpp"

namespace rebalance {

/// For every unit pair i < j (row-major over the upper triangle), the share of
/// samples with w_i == w_j. Throws EmptyInput, DimensionMismatch.
std::vector<double> pair_same_group_proportions(std::span<const Assignment> samples);

/// Same-group probability of a pair under complete randomisation:
/// [C(n_t, 2) + C(n_c, 2)] / C(n, 2).
double p_cre(std::size_t n_t, std::size_t n);

/// Normalised entropy of the pair proportions (natural log, 0 log 0 = 0).
/// 1 under complete randomisation, 0 for a deterministic design.
double entropy_metric(std::span<const double> pair_props, std::size_t n_t, std::size_t n);

/// Normalised standard deviation of the pair proportions around p_cre.
/// 0 under complete randomisation, 1 for a deterministic design.
double sd_metric(std::span<const double> pair_props, std::size_t n_t, std::size_t n);

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from the all-ones vector (eigenvalue change below 1e-8, at most
/// 10^4 iterations). When the iterate collapses onto the null space it
/// restarts from a fixed non-uniform vector. Returns 0 for the zero matrix and
/// throws EigFailure when the cap is reached.
double largest_eigenvalue(const Matrix& symmetric);

/// Sample covariance (B - 1 denominator) of the +-1 coded samples 2w - 1.
Matrix signed_covariance(std::span<const Assignment> samples);

/// Largest eigenvalue of signed_covariance(samples). Needs >= 2 samples.
double max_eig_metric(std::span<const Assignment> samples);

/// 100 (1 - var_method / var_baseline) for every method, using the (n - 1)
/// variance. Throws MissingBaseline when the baseline key is absent and
/// ValidationError when a method has fewer than two values.
std::map<std::string, double> priv(const std::map<std::string, std::vector<double>>& by_method,
                                   const std::string& baseline = "cr");

/// Column-wise priv: rows are replicates, columns are quantities.
std::map<std::string, std::vector<double>> priv_columns(
    const std::map<std::string, Matrix>& by_method, const std::string& baseline = "cr");

/// Per-column standardised difference. Columns with values in {0, 1} use the
/// proportion form; a zero denominator yields nullopt.
std::vector<std::optional<double>> standardized_differences(const Matrix& x, const Assignment& w);

struct RandomnessReport {
  double e_n = 0.0;
  double d_n = 0.0;
  double l_n = 0.0;
  std::size_t b_used = 0;
  std::vector<double> pair_props;
};

RandomnessReport randomness_report(std::span<const Assignment> samples);

struct BalanceReport {
  std::vector<std::optional<double>> std_diffs;
  double mahalanobis = 0.0;
  /// Filled only when replicate data is supplied.
  std::vector<double> priv_per_covariate;
  std::optional<double> priv_tau;
};

BalanceReport balance_report(const BalanceCache& cache, const Assignment& w);

}  // namespace rebalance
