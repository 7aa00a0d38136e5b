#include "rebalance/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rebalance/errors.hpp"

namespace rebalance {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxTerms = 100000;

double gamma_series(double a, double x) {
  double ap = a;
  double del = 1.0 / a;
  double sum = del;
  for (int n = 0; n < kMaxTerms; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper tail Q(a, x) by the modified Lentz continued fraction.
double gamma_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double central_cdf(double x, double dof) {
  return regularized_gamma_p(0.5 * dof, 0.5 * x);
}

}  // namespace

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0)) throw DomainError("incomplete gamma needs a > 0");
  if (!(x >= 0.0)) throw DomainError("incomplete gamma needs x >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return std::clamp(gamma_series(a, x), 0.0, 1.0);
  return std::clamp(1.0 - gamma_continued_fraction(a, x), 0.0, 1.0);
}

double chi2_cdf(double x, int dof, double lambda, double tail_tol) {
  if (dof < 1) throw DomainError("chi-square needs dof >= 1");
  if (!(x >= 0.0)) throw DomainError("chi-square CDF needs x >= 0");
  if (!(lambda >= 0.0) || std::isinf(lambda)) throw DomainError("noncentrality must be finite and >= 0");
  if (x == 0.0) return 0.0;
  if (lambda == 0.0) return central_cdf(x, dof);

  const double mu = 0.5 * lambda;
  const auto mode = static_cast<long>(std::floor(mu));
  const double log_w_mode = -mu + mode * std::log(mu) - std::lgamma(mode + 1.0);
  const double w_mode = std::exp(log_w_mode);

  double mass = w_mode;
  double sum = w_mode * central_cdf(x, dof + 2.0 * mode);

  // Downward from the mode: w_{j-1} = w_j * j / mu.
  double w = w_mode;
  for (long j = mode; j > 0 && 1.0 - mass > tail_tol; --j) {
    w *= static_cast<double>(j) / mu;
    if (w == 0.0) break;
    mass += w;
    sum += w * central_cdf(x, dof + 2.0 * (j - 1));
  }
  // Upward: w_{j+1} = w_j * mu / (j + 1).
  w = w_mode;
  for (long j = mode; 1.0 - mass > tail_tol && j < mode + kMaxTerms; ++j) {
    w *= mu / static_cast<double>(j + 1);
    mass += w;
    sum += w * central_cdf(x, dof + 2.0 * (j + 1));
    if (w == 0.0) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double chi2_quantile(double prob, int dof, double lambda) {
  if (!(prob > 0.0 && prob < 1.0)) throw DomainError("quantile probability must lie in (0, 1)");
  if (dof < 1) throw DomainError("chi-square needs dof >= 1");
  if (!(lambda >= 0.0) || std::isinf(lambda)) throw DomainError("noncentrality must be finite and >= 0");
  double lo = 0.0;
  double hi = dof + lambda + 40.0 * std::sqrt(2.0 * dof + 4.0 * lambda) + 40.0;
  // Extremely high probabilities can sit beyond the nominal bracket.
  while (chi2_cdf(hi, dof, lambda) < prob && hi < 1e12) hi *= 2.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (chi2_cdf(mid, dof, lambda) < prob) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace rebalance
