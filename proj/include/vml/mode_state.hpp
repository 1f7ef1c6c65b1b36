#pragma once

#include <cmath>

#include "vml/velocity_grid.hpp"

namespace vml {

/// One spatial Fourier mode of the linearized system: (k, f^, E^, B^) at time t.
struct ModeState {
  Vec3 k = Vec3::Zero();
  TwoSpeciesField f;
  CVec3 E = CVec3::Zero();
  CVec3 B = CVec3::Zero();
  double t = 0.0;

  static ModeState zero(const GridPtr& grid, const Vec3& k) {
    ModeState s;
    s.k = k;
    s.f = TwoSpeciesField(grid);
    return s;
  }
};

/// Charge moment <mu^{1/2}, f+ - f->.
inline cplx charge_density(const TwoSpeciesField& f) {
  const auto& g = *f.grid();
  const auto w = g.weights();
  const auto sm = g.sqrt_mu();
  cplx acc = 0.0;
  for (std::size_t m = 0; m < g.size(); ++m) acc += w[m] * sm[m] * (f(kPlus, m) - f(kMinus, m));
  return acc;
}

/// Current <xi mu^{1/2}, f+ - f->.
inline CVec3 current_density(const TwoSpeciesField& f) {
  const auto& g = *f.grid();
  const auto w = g.weights();
  const auto sm = g.sqrt_mu();
  CVec3 j = CVec3::Zero();
  for (std::size_t m = 0; m < g.size(); ++m) {
    const cplx d = w[m] * sm[m] * (f(kPlus, m) - f(kMinus, m));
    for (int i = 0; i < 3; ++i) j[i] += g.xi(i)[m] * d;
  }
  return j;
}

/// |i k . E - <mu^{1/2}, f+ - f->|
inline double gauss_residual_E(const ModeState& s) {
  const cplx div = cplx(0.0, 1.0) * (s.k.cast<cplx>().dot(s.E));
  return std::abs(div - charge_density(s.f));
}

/// |i k . B|
inline double gauss_residual_B(const ModeState& s) {
  return std::abs(s.k.cast<cplx>().dot(s.B));
}

}  // namespace vml
