#pragma once

// Independent reference computations used as test oracles. None of these call
// the library's numerical kernels.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rebalance/balance.hpp"

namespace oracle {

using rebalance::Assignment;
using rebalance::Matrix;
using rebalance::Vector;

inline Matrix random_normal(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = dist(gen);
  }
  return x;
}

inline Assignment random_assignment(std::size_t n, std::size_t n_t, std::mt19937_64& gen) {
  std::vector<std::uint8_t> w(n, 0);
  std::fill_n(w.begin(), n_t, std::uint8_t{1});
  std::shuffle(w.begin(), w.end(), gen);
  return Assignment(std::move(w));
}

/// Mean-difference definition with a textbook covariance and an LU inverse.
inline double mahalanobis(const Matrix& x, const Assignment& w) {
  const auto n = static_cast<double>(x.rows());
  const auto p = x.cols();
  Vector mean_t = Vector::Zero(p), mean_c = Vector::Zero(p), mean = Vector::Zero(p);
  double n_t = 0, n_c = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    mean += x.row(i).transpose();
    if (w.treated(static_cast<std::size_t>(i))) {
      mean_t += x.row(i).transpose();
      n_t += 1;
    } else {
      mean_c += x.row(i).transpose();
      n_c += 1;
    }
  }
  mean /= n;
  mean_t /= n_t;
  mean_c /= n_c;
  Matrix s = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector d = x.row(i).transpose() - mean;
    s += d * d.transpose();
  }
  s /= (n - 1.0);
  const Vector diff = mean_t - mean_c;
  const Vector solved = s.fullPivLu().solve(diff);
  return n_t * (1.0 - n_t / n) * diff.dot(solved);
}

/// W^T H W - W^T h + p_w^2 1^T H 1 with H and h built from raw X.
inline double quadratic_form(const Matrix& x, const Assignment& w) {
  const auto n = static_cast<double>(x.rows());
  const double n_t = static_cast<double>(w.n_treated());
  const Vector mean = x.colwise().mean();
  const Matrix centred = x.rowwise() - mean.transpose();
  const Matrix s = centred.transpose() * centred / (n - 1.0);
  const Matrix h_mat = x * s.fullPivLu().inverse() * x.transpose() / (n_t * (1.0 - n_t / n));
  const Vector ones = Vector::Ones(x.rows());
  const Vector h_vec = (2.0 * n_t / n) * h_mat * ones;
  Vector wv(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) wv(i) = w[static_cast<std::size_t>(i)];
  const double pw = n_t / n;
  return wv.dot(h_mat * wv) - wv.dot(h_vec) + pw * pw * ones.dot(h_mat * ones);
}

/// Plain loops over the definition of the difference in means.
inline double diff_in_means(const std::vector<double>& y, const Assignment& w) {
  double st = 0, sc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) (w.treated(i) ? st : sc) += y[i];
  return st / static_cast<double>(w.n_treated()) - sc / static_cast<double>(w.n_control());
}

/// All subsets of size k of {0..n-1} as assignments (recursive, independent
/// of the library's enumerator).
inline void subsets(std::size_t n, std::size_t k, std::size_t start, std::vector<std::uint8_t>& cur,
                    std::vector<Assignment>& out) {
  if (k == 0) {
    out.emplace_back(cur);
    return;
  }
  for (std::size_t i = start; i + k <= n; ++i) {
    cur[i] = 1;
    subsets(n, k - 1, i + 1, cur, out);
    cur[i] = 0;
  }
}

inline std::vector<Assignment> all_assignments(std::size_t n, std::size_t k) {
  std::vector<Assignment> out;
  std::vector<std::uint8_t> cur(n, 0);
  subsets(n, k, 0, cur, out);
  return out;
}

/// One-sided imputed p-values by direct imputation of both potential
/// outcomes under Y(1) - Y(0) = theta.
inline double p_lower(const std::vector<double>& y, const Assignment& w_obs,
                      const std::vector<Assignment>& draws, double theta) {
  std::vector<double> y0(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y0[i] = w_obs.treated(i) ? y[i] - theta : y[i];
  std::vector<double> y_obs(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y_obs[i] = w_obs.treated(i) ? y0[i] + theta : y0[i];
  const double t_obs = diff_in_means(y_obs, w_obs);
  std::size_t count = 0;
  for (const auto& d : draws) {
    std::vector<double> yb(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) yb[i] = d.treated(i) ? y0[i] + theta : y0[i];
    count += diff_in_means(yb, d) >= t_obs;
  }
  return static_cast<double>(count) / static_cast<double>(draws.size());
}

inline double p_upper(const std::vector<double>& y, const Assignment& w_obs,
                      const std::vector<Assignment>& draws, double theta) {
  std::vector<double> y0(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y0[i] = w_obs.treated(i) ? y[i] - theta : y[i];
  std::vector<double> y_obs(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y_obs[i] = w_obs.treated(i) ? y0[i] + theta : y0[i];
  const double t_obs = diff_in_means(y_obs, w_obs);
  std::size_t count = 0;
  for (const auto& d : draws) {
    std::vector<double> yb(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) yb[i] = d.treated(i) ? y0[i] + theta : y0[i];
    count += diff_in_means(yb, d) <= t_obs;
  }
  return static_cast<double>(count) / static_cast<double>(draws.size());
}

/// Grid inversion of the one-sided p-values: the lower bound is the largest
/// grid point with p_lower <= alpha/2, the upper bound the smallest grid point
/// with p_upper <= alpha/2. Returns {lower, upper}.
inline std::pair<double, double> grid_interval(const std::vector<double>& y, const Assignment& w_obs,
                                               const std::vector<Assignment>& draws, double alpha,
                                               double from, double to, double step) {
  double lower = NAN, upper = NAN;
  const auto steps = static_cast<long>(std::floor((to - from) / step));
  for (long k = 0; k <= steps; ++k) {
    const double theta = from + static_cast<double>(k) * step;
    if (p_lower(y, w_obs, draws, theta) <= alpha / 2) lower = theta;
  }
  for (long k = steps; k >= 0; --k) {
    const double theta = from + static_cast<double>(k) * step;
    if (p_upper(y, w_obs, draws, theta) <= alpha / 2) upper = theta;
  }
  return {lower, upper};
}

}  // namespace oracle
