#pragma once
/**
 * @file operator_checks.hpp
 * @brief Measured properties of the assembled collision operator: null-space
 *        residuals, symmetry defect, Rayleigh quotients, the micro coercivity
 *        gap and the dissipation / characterization ratio band. Also the
 *        continuum collision frequency along arbitrary points, used for tables.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "vml/landau_collision.hpp"
#include "vml/macro_structure.hpp"
#include "vml/quadrature.hpp"
#include "vml/weights_energy.hpp"

namespace vml {

/**
 * Random smooth two-species field: per species, a polynomial of total degree
 * <= `degree` with standard normal coefficients (scaled by 1/sqrt(alpha!)),
 * times mu^{1/2}. Coefficients are drawn before touching the grid, so the same
 * seed gives the same continuum field on every resolution.
 */
inline TwoSpeciesField random_smooth_field(const GridPtr& grid, std::mt19937_64& rng,
                                           int degree = 4, bool complex_values = false) {
  const auto alphas = multi_indices(degree);
  std::normal_distribution<double> N01;
  std::array<std::vector<cplx>, 2> c;
  for (int s = 0; s < 2; ++s) {
    for (const auto& a : alphas) {
      const double fact = std::tgamma(a[0] + 1.0) * std::tgamma(a[1] + 1.0) * std::tgamma(a[2] + 1.0);
      const double re = N01(rng);
      const double im = complex_values ? N01(rng) : 0.0;
      c[s].push_back(cplx(re, im) / std::sqrt(fact));
    }
  }
  return TwoSpeciesField::from_function(grid, [&](int s, const Vec3& xi) {
    cplx acc = 0.0;
    for (std::size_t q = 0; q < alphas.size(); ++q) {
      const auto& a = alphas[q];
      acc += c[s][q] * std::pow(xi[0], a[0]) * std::pow(xi[1], a[1]) * std::pow(xi[2], a[2]);
    }
    return acc * std::sqrt(maxwellian(xi));
  });
}

/// The six null vectors [1,0]mu^{1/2}, [0,1]mu^{1/2}, [xi_i,xi_i]mu^{1/2}, [|xi|^2,|xi|^2]mu^{1/2}.
inline std::array<TwoSpeciesField, 6> null_vectors(const GridPtr& grid) {
  std::array<TwoSpeciesField, 6> e;
  for (int q = 0; q < 6; ++q) {
    e[q] = TwoSpeciesField::from_function(grid, [q](int s, const Vec3& xi) -> cplx {
      const double sm = std::sqrt(maxwellian(xi));
      switch (q) {
        case 0: return s == kPlus ? sm : 0.0;
        case 1: return s == kMinus ? sm : 0.0;
        case 5: return xi.squaredNorm() * sm;
        default: return xi[q - 2] * sm;
      }
    });
  }
  return e;
}

/// ||L v|| / ||v|| for each null vector.
inline std::array<double, 6> null_residuals(const LinearizedOperator& L) {
  const auto e = null_vectors(L.grid());
  std::array<double, 6> r{};
  for (int q = 0; q < 6; ++q) r[q] = std::sqrt(norm_sq(L.apply(e[q])) / norm_sq(e[q]));
  return r;
}

/// max over trials of |<Lf,g> - <f,Lg>| / (||Lf|| ||g|| + ||f|| ||Lg||) on random complex fields.
inline double self_adjoint_defect(const LinearizedOperator& L, int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto f = random_smooth_field(L.grid(), rng, 4, true);
    const auto g = random_smooth_field(L.grid(), rng, 4, true);
    const auto Lf = L.apply(f);
    const auto Lg = L.apply(g);
    const double scale = std::sqrt(norm_sq(Lf) * norm_sq(g)) + std::sqrt(norm_sq(f) * norm_sq(Lg));
    worst = std::max(worst, std::abs(inner_product(Lf, g) - inner_product(f, Lg)) / scale);
  }
  return worst;
}

/// Minimum of <Lf,f> / ||f||^2 over random fields.
inline double min_rayleigh_quotient(const LinearizedOperator& L, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double lo = std::numeric_limits<double>::infinity();
  for (int t = 0; t < count; ++t) {
    const auto f = random_smooth_field(L.grid(), rng);
    lo = std::min(lo, inner_product(L.apply(f), f).real() / norm_sq(f));
  }
  return lo;
}

struct CoercivityReport {
  double kappa = 0.0;       // min <Lf,f> / |{I-P}f|_D^2 over micro fields
  double band_lo = 0.0;     // min |f|_D^2 / characterization
  double band_hi = 0.0;     // max of the same ratio
  double rayleigh_min = 0.0;
};

/**
 * Coercivity gap on `count` random micro fields {I-P}f and the
 * dissipation-to-characterization ratio band on the unprojected fields
 * (tau = lambda = 0).
 */
inline CoercivityReport coercivity_probe(const LinearizedOperator& L, int count,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const WeightSpec unit{0.0, 0.0, 0.25};
  CoercivityReport r;
  r.kappa = r.band_lo = r.rayleigh_min = std::numeric_limits<double>::infinity();
  r.band_hi = 0.0;
  for (int t = 0; t < count; ++t) {
    const auto f = random_smooth_field(L.grid(), rng);
    const auto u = project_P(f).micro;
    const double q = inner_product(L.apply(u), u).real();
    r.kappa = std::min(r.kappa, q / dissipation_norm(u, unit, 0.0, L.sigma(), L.params()));
    r.rayleigh_min = std::min(r.rayleigh_min, q / norm_sq(u));
    const double ratio = dissipation_norm(f, unit, 0.0, L.sigma(), L.params()) /
                         characterization_norm(f, unit, 0.0, L.params());
    r.band_lo = std::min(r.band_lo, ratio);
    r.band_hi = std::max(r.band_hi, ratio);
  }
  return r;
}

/**
 * Continuum sigma(xi) = int phi(v) mu(xi - v) dv, by Gauss-Legendre quadrature
 * in spherical coordinates centred on the singularity (the radial factor
 * r^{gamma+4} is integrable and smooth enough for the rule). Returns the
 * radial and tangential eigenvalues: sigma = s_r P_xi + s_t (I - P_xi).
 */
struct SigmaEigen {
  double radial = 0.0;
  double tangential = 0.0;

  Mat3 matrix(const Vec3& xi) const {
    const double r2 = xi.squaredNorm();
    if (r2 == 0.0) return tangential * Mat3::Identity();
    const Mat3 P = xi * xi.transpose() / r2;
    return radial * P + tangential * (Mat3::Identity() - P);
  }
};

inline SigmaEigen sigma_continuum(double speed, const CollisionParams& p, int nr = 160,
                                  int nc = 96) {
  p.validate();
  static thread_local std::pair<int, std::pair<std::vector<double>, std::vector<double>>> rule_r,
      rule_c;
  if (rule_r.first != nr) rule_r = {nr, gauss_legendre(nr)};
  if (rule_c.first != nc) rule_c = {nc, gauss_legendre(nc)};
  const auto& [xr, wr] = rule_r.second;
  const auto& [xc, wc] = rule_c.second;
  // mu(xi - v) decays in |v| beyond speed + 12; split at speed to resolve the peak
  const double q = p.gamma + 4.0;
  const double pref = p.c_phi * std::pow(2.0 * std::numbers::pi, -1.5) * 2.0 * std::numbers::pi;
  SigmaEigen out;
  const double cuts[3] = {0.0, speed, speed + 12.0};
  for (int seg = 0; seg < 2; ++seg) {
    const double a = cuts[seg], b = cuts[seg + 1];
    if (b <= a) continue;
    for (int i = 0; i < nr; ++i) {
      const double r = 0.5 * (b - a) * (xr[i] + 1.0) + a;
      const double wrad = 0.5 * (b - a) * wr[i] * std::pow(r, q);
      for (int j = 0; j < nc; ++j) {
        const double c = xc[j];
        const double s2 = 1.0 - c * c;
        const double m = std::exp(-0.5 * (speed * speed + r * r - 2.0 * r * speed * c));
        // azimuthal means of (I - vv^T) along xi and across it
        out.radial += pref * wrad * wc[j] * s2 * m;
        out.tangential += pref * wrad * wc[j] * (1.0 - 0.5 * s2) * m;
      }
    }
  }
  return out;
}

}  // namespace vml
