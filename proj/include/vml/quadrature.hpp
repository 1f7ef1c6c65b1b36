#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace vml {

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(n), w(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/**
 * Epstein zeta function of the simple cubic lattice, Z(s) = sum'_{o in Z^3} |o|^{-s},
 * analytically continued to 0 < s < 3 through the theta-function splitting
 *
 *   pi^{-s/2} Gamma(s/2) Z(s) = sum' G(s/2, pi|o|^2) + sum' G((3-s)/2, pi|o|^2)
 *                              + 2/(s-3) - 2/s,    G(a, x) = Gamma(a, x) x^{-a}.
 *
 * Both lattice sums converge like exp(-pi |o|^2).
 */
inline double cubic_lattice_zeta(double s) {
  constexpr int M = 5;
  const double pi = std::numbers::pi;
  auto G = [](double a, double x) { return boost::math::tgamma(a, x) * std::pow(x, -a); };
  double acc = 0.0;
  for (int a = -M; a <= M; ++a) {
    for (int b = -M; b <= M; ++b) {
      for (int c = -M; c <= M; ++c) {
        const int r2 = a * a + b * b + c * c;
        if (r2 == 0) continue;
        const double x = pi * r2;
        acc += G(0.5 * s, x) + G(0.5 * (3.0 - s), x);
      }
    }
  }
  acc += 2.0 / (s - 3.0) - 2.0 / s;
  return std::pow(pi, 0.5 * s) / std::tgamma(0.5 * s) * acc;
}

}  // namespace vml
