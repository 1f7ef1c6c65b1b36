#pragma once
/**
 * @file gmres.hpp
 * @brief Restarted right-preconditioned GMRES for complex linear systems given
 *        only through their action. Modified Gram-Schmidt, Givens rotations,
 *        fixed operation order (deterministic).
 */

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace vml {

using LinearMap = std::function<void(std::span<const std::complex<double>>,
                                     std::span<std::complex<double>>)>;

struct GmresOptions {
  double rel_tol = 1e-11;
  int restart = 40;
  int max_iterations = 2000;
};

struct GmresResult {
  bool converged = false;
  int iterations = 0;
  double rel_residual = 0.0;
};

/// Solves A x = b; `x` holds the initial guess on entry. `precond` may be empty.
inline GmresResult gmres(const LinearMap& A, const LinearMap& precond,
                         std::span<const std::complex<double>> b,
                         std::span<std::complex<double>> x, const GmresOptions& opt = {}) {
  using C = std::complex<double>;
  using Vec = Eigen::VectorXcd;
  const Eigen::Index n = static_cast<Eigen::Index>(b.size());
  auto view = [](Vec& v) { return std::span<C>(v.data(), static_cast<std::size_t>(v.size())); };
  auto cview = [](const Vec& v) {
    return std::span<const C>(v.data(), static_cast<std::size_t>(v.size()));
  };

  const Vec bv = Eigen::Map<const Vec>(b.data(), n);
  Eigen::Map<Vec> xv(x.data(), n);
  const double bnorm = bv.norm();
  GmresResult res;
  if (bnorm == 0.0) {
    xv.setZero();
    res.converged = true;
    return res;
  }

  const int m = opt.restart;
  std::vector<Vec> V(m + 1, Vec(n)), Z(m, Vec(n));
  Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(m + 1, m);
  std::vector<C> cs(m), sn(m);
  Vec g(m + 1), r(n), w(n);

  while (res.iterations < opt.max_iterations) {
    A(cview(xv), view(r));
    r = bv - r;
    double beta = r.norm();
    res.rel_residual = beta / bnorm;
    if (res.rel_residual <= opt.rel_tol) {
      res.converged = true;
      return res;
    }
    V[0] = r / beta;
    g.setZero();
    g[0] = beta;
    H.setZero();
    int j = 0;
    for (; j < m && res.iterations < opt.max_iterations; ++j) {
      ++res.iterations;
      if (precond) {
        precond(cview(V[j]), view(Z[j]));
      } else {
        Z[j] = V[j];
      }
      A(cview(Z[j]), view(w));
      for (int i = 0; i <= j; ++i) {
        H(i, j) = V[i].dot(w);
        w -= H(i, j) * V[i];
      }
      H(j + 1, j) = w.norm();
      if (std::abs(H(j + 1, j)) > 0.0) V[j + 1] = w / H(j + 1, j);
      for (int i = 0; i < j; ++i) {
        const C t = std::conj(cs[i]) * H(i, j) + std::conj(sn[i]) * H(i + 1, j);
        H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
        H(i, j) = t;
      }
      const double a = std::abs(H(j, j)), bb = std::abs(H(j + 1, j));
      const double rho = std::hypot(a, bb);
      if (rho == 0.0) {
        cs[j] = 1.0;
        sn[j] = 0.0;
      } else {
        cs[j] = H(j, j) / rho;
        sn[j] = H(j + 1, j) / rho;
      }
      H(j, j) = rho;
      H(j + 1, j) = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = std::conj(cs[j]) * g[j];
      res.rel_residual = std::abs(g[j + 1]) / bnorm;
      if (res.rel_residual <= opt.rel_tol) {
        ++j;
        break;
      }
    }
    Vec y = H.topLeftCorner(j, j).triangularView<Eigen::Upper>().solve(g.head(j));
    for (int i = 0; i < j; ++i) xv += y[i] * Z[i];
    if (res.rel_residual <= opt.rel_tol) {
      // confirm with the true residual
      A(cview(xv), view(r));
      res.rel_residual = (bv - r).norm() / bnorm;
      if (res.rel_residual <= 10.0 * opt.rel_tol) {
        res.converged = true;
        return res;
      }
    }
  }
  return res;
}

}  // namespace vml
