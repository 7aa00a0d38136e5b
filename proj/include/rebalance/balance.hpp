#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rebalance/errors.hpp"

namespace rebalance {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Covariates of n units (rows) on p baseline variables (columns).
///
/// Requires n >= 2, p >= 1, n > p and finite entries. Columns are used as
/// given; no standardisation is applied.
class CovariateMatrix {
 public:
  explicit CovariateMatrix(Matrix data);

  const Matrix& data() const noexcept { return data_; }
  std::size_t n() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t p() const noexcept { return static_cast<std::size_t>(data_.cols()); }

 private:
  Matrix data_;
};

/// Binary treatment vector with its treated count cached.
class Assignment {
 public:
  Assignment() = default;
  /// Throws ValidationError if any entry is not 0 or 1.
  explicit Assignment(std::vector<std::uint8_t> w);

  std::size_t n() const noexcept { return w_.size(); }
  std::size_t n_treated() const noexcept { return n_t_; }
  std::size_t n_control() const noexcept { return w_.size() - n_t_; }
  bool treated(std::size_t i) const noexcept { return w_[i] != 0; }
  std::uint8_t operator[](std::size_t i) const noexcept { return w_[i]; }
  std::span<const std::uint8_t> values() const noexcept { return w_; }

  Assignment complement() const;
  /// Moves unit i (treated) to control and unit j (control) to treatment.
  void switch_pair(std::size_t i, std::size_t j);
  /// Units [first, first + count) as a new assignment.
  Assignment slice(std::size_t first, std::size_t count) const;
  /// This assignment followed by `tail`.
  Assignment concat(const Assignment& tail) const;

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::vector<std::uint8_t> w_;
  std::size_t n_t_ = 0;
};

/// Everything about the covariates that the balance criterion needs, computed
/// once per (covariates, n_t) and immutable afterwards.
///
/// s_xx is the (n-1)-denominator covariance (plus ridge * I when requested).
/// H = Xc S_xx^-1 Xc^T / (n_t (1 - n_t/n)) with Xc the column-centred
/// covariates, and h = (2 n_t / n) H 1. Centring leaves every Mahalanobis value
/// unchanged because W - (n_t/n) 1 sums to zero.
class BalanceCache {
 public:
  /// Throws SingularCovariance when a Cholesky pivot of s_xx falls below
  /// 1e-12 times its largest diagonal entry; DomainError unless 0 < n_t < n.
  BalanceCache(const CovariateMatrix& x, std::size_t n_t, double ridge = 0.0);

  std::size_t n() const noexcept { return n_; }
  std::size_t p() const noexcept { return p_; }
  std::size_t n_t() const noexcept { return n_t_; }
  double ridge() const noexcept { return ridge_; }
  /// n_t (1 - n_t / n).
  double scale() const noexcept { return scale_; }

  const Matrix& covariates() const noexcept { return x_; }
  const Matrix& s_xx() const noexcept { return s_xx_; }
  const Matrix& s_xx_inv() const noexcept { return s_xx_inv_; }
  /// Lower-triangular L with L L^T = s_xx.
  const Matrix& cholesky_factor() const noexcept { return chol_; }
  const Matrix& h_mat() const noexcept { return h_mat_; }
  const Vector& h_vec() const noexcept { return h_vec_; }

 private:
  std::size_t n_ = 0, p_ = 0, n_t_ = 0;
  double ridge_ = 0.0;
  double scale_ = 0.0;
  Matrix x_;
  Matrix s_xx_, s_xx_inv_, chol_, h_mat_;
  Vector h_vec_;
};

inline BalanceCache build_cache(const CovariateMatrix& x, std::size_t n_t,
                                double ridge = 0.0) {
  return BalanceCache(x, n_t, ridge);
}

/// M(w) = n_t (1 - n_t/n) (xbar_t - xbar_c)^T S_xx^-1 (xbar_t - xbar_c).
double mahalanobis(const BalanceCache& cache, const Assignment& w);

/// M after switching treated unit i with control unit j, from the current value
/// `m_current` = M(w). O(n).
double mahalanobis_delta(const BalanceCache& cache, const Assignment& w,
                         double m_current, std::size_t i, std::size_t j);

/// State of a pair-switching chain. Keeps g = H w so that a proposal costs O(1)
/// and an accepted switch O(n).
class SwitchState {
 public:
  SwitchState(const BalanceCache& cache, Assignment start);

  double m() const noexcept { return m_; }
  const Assignment& assignment() const noexcept { return w_; }

  /// M after switching treated i with control j. Does not check the statuses.
  double propose(std::size_t i, std::size_t j) const noexcept {
    const auto& h = cache_->h_mat();
    const auto& hv = cache_->h_vec();
    return m_ - (2.0 * g_[i] - h(i, i)) + (2.0 * g_[j] - 2.0 * h(i, j) + h(j, j)) +
           hv[i] - hv[j];
  }

  /// Commits the switch (i, j) whose proposed value is `m_new`.
  void apply(std::size_t i, std::size_t j, double m_new);

  /// Recomputes g and M from scratch, dropping accumulated rounding drift.
  void refresh();

  /// Accepted switches since construction.
  std::uint64_t applied() const noexcept { return applied_; }

 private:
  const BalanceCache* cache_;
  Assignment w_;
  Vector g_;
  double m_ = 0.0;
  std::uint64_t applied_ = 0;
};

}  // namespace rebalance
