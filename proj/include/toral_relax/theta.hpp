#pragma once

// Periodized Gaussian theta_sigma(xi) = sum_nu exp(-sigma^2 (xi + nu)^2) and the
// log-ratio ln(theta_sigma(xi) / theta_sigma(0)).
//
// Two series are used: the direct sum for sigma >= sqrt(pi) and the Poisson-dual
// series (sqrt(pi)/sigma) * [1 + 2 sum_m exp(-pi^2 m^2 / sigma^2) cos(2 pi m xi)]
// for sigma < sqrt(pi); the switch point equalizes the worst-case term decay.
// The log-ratio is computed without cancellation so that values like
// 1 - gamma ~ 1e-26 in the deep quantum regime keep full relative accuracy.

#include <cmath>

#include "toral_relax/common.hpp"

namespace toral_relax {

namespace detail {

inline double reduce_half(double xi) {
  double r = xi - std::round(xi);  // theta is 1-periodic and even
  return r;
}

/// Direct-branch correction w(xi) = sum_{nu != 0} exp(-sigma^2 (nu^2 + 2 nu xi)),
/// so that theta(xi) = e^{-sigma^2 xi^2} (1 + w(xi)).
inline double direct_correction(double sigma2, double xi) {
  double w = 0.0;
  for (int nu = 1;; ++nu) {
    double nud = nu;
    double tp = std::exp(-sigma2 * (nud * nud + 2.0 * nud * xi));
    double tm = std::exp(-sigma2 * (nud * nud - 2.0 * nud * xi));
    w += tp + tm;
    if (tp + tm < 1e-22 * (1.0 + w) && nud >= 1.0 + 2.0 * std::abs(xi)) break;
    if (nu > 64) break;
  }
  return w;
}

/// Dual-branch correction u(xi) = 2 sum_{m >= 1} q^{m^2} cos(2 pi m xi),
/// q = exp(-pi^2 / sigma^2), so that theta(xi) = (sqrt(pi)/sigma) (1 + u(xi)).
inline double dual_correction(double sigma, double xi) {
  const double a = kPi * kPi / (sigma * sigma);
  double u = 0.0;
  for (int m = 1;; ++m) {
    double md = m;
    double term = 2.0 * std::exp(-a * md * md) * std::cos(kTwoPi * md * xi);
    u += term;
    if (std::exp(-a * md * md) < 1e-22 * (1.0 + std::abs(u))) break;
    if (m > 64) break;
  }
  return u;
}

/// Dual-branch difference u(xi) - u(0) = -4 sum_m q^{m^2} sin^2(pi m xi), stable
/// when both corrections are tiny.
inline double dual_difference(double sigma, double xi) {
  const double a = kPi * kPi / (sigma * sigma);
  double delta = 0.0;
  for (int m = 1;; ++m) {
    double md = m;
    double s = std::sin(kPi * md * xi);
    double term = -4.0 * std::exp(-a * md * md) * s * s;
    delta += term;
    if (std::exp(-a * md * md) < 1e-24) break;
    if (m > 64) break;
  }
  return delta;
}

inline double direct_difference(double sigma2, double xi) {
  // w(xi) - w(0) summed termwise
  double delta = 0.0;
  for (int nu = 1;; ++nu) {
    double nud = nu;
    double base = std::exp(-sigma2 * nud * nud);
    double term = base * (std::exp(-2.0 * sigma2 * nud * xi) + std::exp(2.0 * sigma2 * nud * xi) -
                          2.0);
    delta += term;
    if (base < 1e-24 && nud >= 1.0 + 2.0 * std::abs(xi)) break;
    if (nu > 64) break;
  }
  return delta;
}

}  // namespace detail

/// theta_sigma(xi) to absolute accuracy ~1e-15 * theta_sigma(0).
inline double theta(double sigma, double xi) {
  require(sigma > 0.0, "theta: sigma > 0 required");
  double x = detail::reduce_half(xi);
  if (sigma >= kSqrtPi) {
    double s2 = sigma * sigma;
    return std::exp(-s2 * x * x) * (1.0 + detail::direct_correction(s2, x));
  }
  return (kSqrtPi / sigma) * (1.0 + detail::dual_correction(sigma, x));
}

/// ln(theta_sigma(xi) / theta_sigma(0)), cancellation-free. Exactly 0 at xi = 0.
inline double log_theta_ratio(double sigma, double xi) {
  require(sigma > 0.0, "log_theta_ratio: sigma > 0 required");
  double x = detail::reduce_half(xi);
  if (x == 0.0) return 0.0;
  if (sigma >= kSqrtPi) {
    double s2 = sigma * sigma;
    double w0 = detail::direct_correction(s2, 0.0);
    double delta = detail::direct_difference(s2, x);
    return -s2 * x * x + std::log1p(delta / (1.0 + w0));
  }
  double u0 = detail::dual_correction(sigma, 0.0);
  double delta = detail::dual_difference(sigma, x);
  return std::log1p(delta / (1.0 + u0));
}

/// theta_sigma(0), used for normalization sums.
inline double theta_zero(double sigma) { return theta(sigma, 0.0); }

}  // namespace toral_relax
