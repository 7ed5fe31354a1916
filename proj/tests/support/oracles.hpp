#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical routines, so these can serve as independent checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                           double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

// Adaptive Simpson quadrature of f on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int max_depth = 40) {
  if (b <= a) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// Integral of g(y) over y in [0, length] for a smooth, decaying g, split into
// geometrically growing pieces starting at `first`.
inline double integrate_decaying(const std::function<double(double)>& g, double length, double first,
                                 double tol = 1e-12) {
  double total = 0.0;
  double lo = 0.0;
  double hi = std::min(first, length);
  while (lo < length) {
    total += integrate(g, lo, hi, tol);
    lo = hi;
    hi = std::min(2.0 * hi, length);
  }
  return total;
}

// Reference GPD density, written out directly.
inline double gpd_density(double xi, double beta, double y) {
  if (y < 0) return 0.0;
  if (xi == 0.0) return std::exp(-y / beta) / beta;
  const double base = 1.0 + xi * y / beta;
  if (base <= 0.0) return 0.0;
  return std::pow(base, -1.0 / xi - 1.0) / beta;
}

// Two-sided Kolmogorov-Smirnov statistic of samples against a CDF.
template <typename Cdf>
double ks_distance(std::vector<double> samples, Cdf&& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    worst = std::max(worst, std::max(f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f));
  }
  return worst;
}

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace oracle
