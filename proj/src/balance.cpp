#include "rebalance/balance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rebalance {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::SingularCovariance: return "singular_covariance";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::InvalidSwitch: return "invalid_switch";
    case ErrorKind::IterationCapExceeded: return "iteration_cap_exceeded";
    case ErrorKind::DomainError: return "domain_error";
    case ErrorKind::DegenerateDesign: return "degenerate_design";
    case ErrorKind::BracketFailure: return "bracket_failure";
    case ErrorKind::EigFailure: return "eig_failure";
    case ErrorKind::EmptyInput: return "empty_input";
    case ErrorKind::MissingBaseline: return "missing_baseline";
    case ErrorKind::Validation: return "validation";
  }
  return "unknown";
}

CovariateMatrix::CovariateMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 2) throw ValidationError("covariate matrix needs at least 2 rows");
  if (data_.cols() < 1) throw ValidationError("covariate matrix needs at least 1 column");
  if (data_.rows() <= data_.cols()) {
    std::ostringstream os;
    os << "covariate matrix needs more rows than columns (got " << data_.rows() << "x"
       << data_.cols() << ")";
    throw ValidationError(os.str());
  }
  if (!data_.allFinite()) throw ValidationError("covariate matrix has non-finite entries");
}

Assignment::Assignment(std::vector<std::uint8_t> w) : w_(std::move(w)) {
  for (auto v : w_) {
    if (v > 1) throw ValidationError("assignment entries must be 0 or 1");
    n_t_ += v;
  }
}

Assignment Assignment::complement() const {
  std::vector<std::uint8_t> c(w_.size());
  std::transform(w_.begin(), w_.end(), c.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(1 - v); });
  return Assignment(std::move(c));
}

void Assignment::switch_pair(std::size_t i, std::size_t j) {
  if (i >= w_.size() || j >= w_.size()) throw DimensionMismatch("switch index out of range");
  if (w_[i] != 1 || w_[j] != 0) {
    throw InvalidSwitch("switch needs a treated unit i and a control unit j");
  }
  w_[i] = 0;
  w_[j] = 1;
}

Assignment Assignment::slice(std::size_t first, std::size_t count) const {
  if (first + count > w_.size()) throw DimensionMismatch("assignment slice out of range");
  return Assignment(std::vector<std::uint8_t>(w_.begin() + first, w_.begin() + first + count));
}

Assignment Assignment::concat(const Assignment& tail) const {
  std::vector<std::uint8_t> out;
  out.reserve(w_.size() + tail.w_.size());
  out.insert(out.end(), w_.begin(), w_.end());
  out.insert(out.end(), tail.w_.begin(), tail.w_.end());
  return Assignment(std::move(out));
}

namespace {

// Cholesky with an explicit relative pivot threshold; Eigen's LLT only reports
// failure on non-positive pivots.
Matrix cholesky_checked(const Matrix& s) {
  const Eigen::Index p = s.rows();
  const double max_diag = s.diagonal().maxCoeff();
  const double floor = 1e-12 * max_diag;
  Matrix l = Matrix::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double d = s(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(max_diag > 0.0) || !(d > floor)) {
      std::ostringstream os;
      os << "covariance of the covariates is singular (pivot " << j << " = " << d
         << "); remove collinear or constant columns, or pass a ridge term";
      throw SingularCovariance(os.str());
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < p; ++i) {
      double v = s(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

}  // namespace

BalanceCache::BalanceCache(const CovariateMatrix& x, std::size_t n_t, double ridge)
    : n_(x.n()), p_(x.p()), n_t_(n_t), ridge_(ridge), x_(x.data()) {
  if (n_t == 0 || n_t >= n_) {
    throw DomainError("treated count must satisfy 0 < n_t < n");
  }
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw DomainError("ridge must be >= 0");
  const double n = static_cast<double>(n_);
  scale_ = static_cast<double>(n_t) * (1.0 - static_cast<double>(n_t) / n);

  const Eigen::RowVectorXd mean = x_.colwise().mean();
  const Matrix centred = x_.rowwise() - mean;
  s_xx_ = (centred.transpose() * centred) / (n - 1.0);
  s_xx_ = (0.5 * (s_xx_ + s_xx_.transpose())).eval();
  if (ridge > 0.0) s_xx_.diagonal().array() += ridge;

  chol_ = cholesky_checked(s_xx_);
  const Matrix l_inv =
      chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(p_, p_));
  s_xx_inv_ = l_inv.transpose() * l_inv;
  s_xx_inv_ = (0.5 * (s_xx_inv_ + s_xx_inv_.transpose())).eval();

  // Whitened rows: Z Z^T = Xc S^-1 Xc^T.
  const Matrix z = centred * l_inv.transpose();
  h_mat_ = (z * z.transpose()) / scale_;
  h_mat_ = (0.5 * (h_mat_ + h_mat_.transpose())).eval();
  h_vec_ = (2.0 * static_cast<double>(n_t) / n) * (h_mat_ * Vector::Ones(n_));
}

double mahalanobis(const BalanceCache& cache, const Assignment& w) {
  if (w.n() != cache.n()) throw DimensionMismatch("assignment length differs from covariate rows");
  if (w.n_treated() != cache.n_t()) {
    throw DimensionMismatch("assignment treated count differs from the cache's n_t");
  }
  const std::size_t n = cache.n();
  const double inv_t = 1.0 / static_cast<double>(cache.n_t());
  const double inv_c = 1.0 / static_cast<double>(n - cache.n_t());
  Vector contrast(n);
  for (std::size_t i = 0; i < n; ++i) contrast[i] = w.treated(i) ? inv_t : -inv_c;
  Vector diff = cache.covariates().transpose() * contrast;
  cache.cholesky_factor().triangularView<Eigen::Lower>().solveInPlace(diff);
  return cache.scale() * diff.squaredNorm();
}

double mahalanobis_delta(const BalanceCache& cache, const Assignment& w, double m_current,
                         std::size_t i, std::size_t j) {
  if (w.n() != cache.n()) throw DimensionMismatch("assignment length differs from covariate rows");
  if (i >= w.n() || j >= w.n()) throw DimensionMismatch("switch index out of range");
  if (!w.treated(i) || w.treated(j)) {
    throw InvalidSwitch("switch needs w_i = 1 and w_j = 0");
  }
  const auto& h = cache.h_mat();
  double row_i = 0.0, row_j = 0.0;
  for (std::size_t l = 0; l < w.n(); ++l) {
    if (w.treated(l)) {
      row_i += h(i, l);
      row_j += h(j, l);
    }
  }
  // W* = W - e_i + e_j
  const double row_j_star = row_j - h(j, i) + h(j, j);
  return m_current - (2.0 * row_i - h(i, i)) + (2.0 * row_j_star - h(j, j)) +
         cache.h_vec()[i] - cache.h_vec()[j];
}

SwitchState::SwitchState(const BalanceCache& cache, Assignment start)
    : cache_(&cache), w_(std::move(start)) {
  refresh();
}

void SwitchState::refresh() {
  m_ = mahalanobis(*cache_, w_);
  const std::size_t n = w_.n();
  g_ = Vector::Zero(n);
  const auto& h = cache_->h_mat();
  for (std::size_t l = 0; l < n; ++l) {
    if (w_.treated(l)) g_ += h.col(l);
  }
}

void SwitchState::apply(std::size_t i, std::size_t j, double m_new) {
  w_.switch_pair(i, j);
  const auto& h = cache_->h_mat();
  g_ += h.col(j) - h.col(i);
  m_ = m_new;
  ++applied_;
}

}  // namespace rebalance
