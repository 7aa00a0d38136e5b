#pragma once

namespace rebalance {

/// Regularised lower incomplete gamma P(a, x) for a > 0, x >= 0.
double regularized_gamma_p(double a, double x);

/// P(chi2_dof(lambda) <= x): Poisson mixture of central chi-square CDFs with
/// weights e^{-lambda/2} (lambda/2)^j / j!, summed outward from the modal term
/// until the unsummed Poisson mass is below `tail_tol`.
///
/// Throws DomainError for x < 0, lambda < 0 or dof < 1.
double chi2_cdf(double x, int dof, double lambda = 0.0, double tail_tol = 1e-12);

/// x with chi2_cdf(x, dof, lambda) = prob, found by bisection to a bracket
/// width of 1e-10 on [0, dof + lambda + 40 sqrt(2 dof + 4 lambda) + 40].
///
/// Throws DomainError unless 0 < prob < 1.
double chi2_quantile(double prob, int dof, double lambda = 0.0);

}  // namespace rebalance
