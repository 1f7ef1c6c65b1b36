#pragma once
/**
 * @file velocity_grid.hpp
 * @brief Truncated tensor lattice in velocity space, trapezoid quadrature,
 *        the normalized Maxwellian and the two-species field container.
 *
 * Species ordering inside every two-species field is [+, -]. The sign
 * conventions q0 = diag(1,-1) and q1 = [1,-1] are applied by the operations
 * that need them (see `species_sign`).
 */

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vml/errors.hpp"

namespace vml {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kPlus = 0;
inline constexpr int kMinus = 1;

/// q1 = [1, -1]: +1 for ions, -1 for electrons.
inline constexpr double species_sign(int s) { return s == kPlus ? 1.0 : -1.0; }

/// Bilinear cross product (Eigen's cross() conjugates complex results).
inline CVec3 cross(const CVec3& a, const CVec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// Normalized global Maxwellian (2 pi)^{-3/2} exp(-|xi|^2 / 2).
inline double maxwellian(const Vec3& xi) {
  return std::pow(2.0 * std::numbers::pi, -1.5) * std::exp(-0.5 * xi.squaredNorm());
}

class VelocityGrid;
using GridPtr = std::shared_ptr<const VelocityGrid>;

/**
 * Uniform lattice on [-R, R]^3 with an odd number of points per axis, so the
 * origin is a node and the node set is symmetric under xi -> -xi. Weights are
 * the tensor trapezoid rule (h^3 in the interior, halved per boundary axis).
 *
 * Immutable after construction; the per-node tables (Maxwellian, its square
 * root, coordinates, weights) are precomputed once.
 */
class VelocityGrid {
 public:
  VelocityGrid(double half_width, int points_per_axis) : R_(half_width), n_(points_per_axis) {
    if (!(half_width > 0.0) || !std::isfinite(half_width)) {
      throw ParameterError("velocity grid half-width must be positive");
    }
    if (points_per_axis < 3 || points_per_axis % 2 == 0) {
      throw ParameterError("velocity grid needs an odd number (>= 3) of points per axis");
    }
    h_ = 2.0 * R_ / (n_ - 1);
    coord_.resize(n_);
    w1_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      // symmetric construction keeps coord(i) == -coord(n-1-i) bit for bit
      const int c = i - (n_ - 1) / 2;
      coord_[i] = c * h_;
      w1_[i] = (i == 0 || i == n_ - 1) ? 0.5 * h_ : h_;
    }
    const std::size_t N = size();
    weight_.resize(N);
    mu_.resize(N);
    sqrt_mu_.resize(N);
    for (auto& a : xi_) a.resize(N);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) {
        for (int k = 0; k < n_; ++k) {
          const std::size_t m = index(i, j, k);
          const Vec3 v(coord_[i], coord_[j], coord_[k]);
          xi_[0][m] = v[0];
          xi_[1][m] = v[1];
          xi_[2][m] = v[2];
          weight_[m] = w1_[i] * w1_[j] * w1_[k];
          mu_[m] = maxwellian(v);
          sqrt_mu_[m] = std::sqrt(mu_[m]);
        }
      }
    }
  }

  double half_width() const { return R_; }
  int points_per_axis() const { return n_; }
  double spacing() const { return h_; }
  std::size_t size() const { return static_cast<std::size_t>(n_) * n_ * n_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * n_ + j) * n_ + k;
  }
  std::array<int, 3> multi_index(std::size_t m) const {
    const int k = static_cast<int>(m % n_);
    const int j = static_cast<int>((m / n_) % n_);
    const int i = static_cast<int>(m / (static_cast<std::size_t>(n_) * n_));
    return {i, j, k};
  }
  /// Stride of the flat index along `axis` (0, 1, 2).
  std::size_t stride(int axis) const {
    return axis == 0 ? static_cast<std::size_t>(n_) * n_ : (axis == 1 ? n_ : 1);
  }

  double coord(int i) const { return coord_[i]; }
  std::span<const double> coords() const { return coord_; }
  Vec3 node(std::size_t m) const { return {xi_[0][m], xi_[1][m], xi_[2][m]}; }
  double weight(std::size_t m) const { return weight_[m]; }

  std::span<const double> weights() const { return weight_; }
  std::span<const double> mu() const { return mu_; }
  std::span<const double> sqrt_mu() const { return sqrt_mu_; }
  std::span<const double> xi(int axis) const { return xi_[axis]; }

  bool same_as(const VelocityGrid& o) const { return &o == this || (o.R_ == R_ && o.n_ == n_); }

 private:
  double R_;
  int n_;
  double h_ = 0.0;
  std::vector<double> coord_, w1_, weight_, mu_, sqrt_mu_;
  std::array<std::vector<double>, 3> xi_;
};

inline GridPtr build_grid(double half_width, int points_per_axis) {
  return std::make_shared<const VelocityGrid>(half_width, points_per_axis);
}

/**
 * One spatial Fourier mode of the perturbation: complex values of f+ and f-
 * at every lattice node, stored species-major ([+ block | - block]).
 */
class TwoSpeciesField {
 public:
  TwoSpeciesField() = default;
  explicit TwoSpeciesField(GridPtr grid) : grid_(std::move(grid)), v_(2 * grid_->size()) {}

  template <class Fn>  // Fn(species, node) -> cplx
  static TwoSpeciesField from_function(GridPtr grid, Fn&& fn) {
    TwoSpeciesField f(grid);
    const std::size_t N = grid->size();
    for (int s = 0; s < 2; ++s) {
      for (std::size_t m = 0; m < N; ++m) f.v_[s * N + m] = fn(s, grid->node(m));
    }
    return f;
  }

  const GridPtr& grid() const { return grid_; }
  std::size_t nodes() const { return grid_->size(); }
  std::size_t size() const { return v_.size(); }

  std::span<cplx> values() { return v_; }
  std::span<const cplx> values() const { return v_; }
  std::span<cplx> species(int s) { return std::span<cplx>(v_).subspan(s * nodes(), nodes()); }
  std::span<const cplx> species(int s) const {
    return std::span<const cplx>(v_).subspan(s * nodes(), nodes());
  }
  cplx& operator()(int s, std::size_t m) { return v_[s * nodes() + m]; }
  cplx operator()(int s, std::size_t m) const { return v_[s * nodes() + m]; }

  bool all_finite() const {
    for (const auto& z : v_) {
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
  }

  TwoSpeciesField& operator+=(const TwoSpeciesField& o) {
    check(o);
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
  }
  TwoSpeciesField& operator-=(const TwoSpeciesField& o) {
    check(o);
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
    return *this;
  }
  TwoSpeciesField& operator*=(cplx a) {
    for (auto& z : v_) z *= a;
    return *this;
  }
  /// this += a * x
  void axpy(cplx a, const TwoSpeciesField& x) {
    check(x);
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += a * x.v_[i];
  }

  friend TwoSpeciesField operator+(TwoSpeciesField a, const TwoSpeciesField& b) { return a += b; }
  friend TwoSpeciesField operator-(TwoSpeciesField a, const TwoSpeciesField& b) { return a -= b; }
  friend TwoSpeciesField operator*(cplx s, TwoSpeciesField a) { return a *= s; }

  void check(const TwoSpeciesField& o) const {
    if (!grid_ || !o.grid_ || !grid_->same_as(*o.grid_)) throw GridMismatch();
  }

 private:
  GridPtr grid_;
  std::vector<cplx> v_;
};

/// Quadrature inner product summed over species, conjugating the second argument.
inline cplx inner_product(const TwoSpeciesField& f, const TwoSpeciesField& g) {
  f.check(g);
  const auto w = f.grid()->weights();
  const std::size_t N = f.nodes();
  cplx acc = 0.0;
  for (int s = 0; s < 2; ++s) {
    const auto a = f.species(s);
    const auto b = g.species(s);
    for (std::size_t m = 0; m < N; ++m) acc += w[m] * a[m] * std::conj(b[m]);
  }
  return acc;
}

inline double norm_sq(const TwoSpeciesField& f) { return inner_product(f, f).real(); }

/// Linear velocity moment sum_m w_m g(xi_m) f(m) of one species (no conjugation).
template <class Fn>
cplx moment(const VelocityGrid& grid, std::span<const cplx> f, Fn&& g) {
  const auto w = grid.weights();
  cplx acc = 0.0;
  for (std::size_t m = 0; m < grid.size(); ++m) acc += w[m] * g(grid.node(m)) * f[m];
  return acc;
}

/**
 * Derivative along `axis` (0-based) of one species array: centered second-order
 * differences in the interior, three-point one-sided second-order stencils on
 * the two boundary layers. Exact on quadratics everywhere.
 */
inline void gradient_component(const VelocityGrid& grid, std::span<const cplx> f, int axis,
                               std::span<cplx> out) {
  const int n = grid.points_per_axis();
  const std::size_t st = grid.stride(axis);
  const double inv2h = 1.0 / (2.0 * grid.spacing());
  for (std::size_t m = 0; m < grid.size(); ++m) {
    const int i = grid.multi_index(m)[axis];
    if (i == 0) {
      out[m] = (-3.0 * f[m] + 4.0 * f[m + st] - f[m + 2 * st]) * inv2h;
    } else if (i == n - 1) {
      out[m] = (3.0 * f[m] - 4.0 * f[m - st] + f[m - 2 * st]) * inv2h;
    } else {
      out[m] = (f[m + st] - f[m - st]) * inv2h;
    }
  }
}

/// Velocity derivative of both species along `axis` (0-based).
inline TwoSpeciesField velocity_gradient(const TwoSpeciesField& f, int axis) {
  if (axis < 0 || axis > 2) throw ParameterError("velocity axis must be 0, 1 or 2");
  TwoSpeciesField out(f.grid());
  for (int s = 0; s < 2; ++s) gradient_component(*f.grid(), f.species(s), axis, out.species(s));
  return out;
}

/**
 * Derivative of f along `axis` computed through the Maxwellian factorization
 * f = mu^{1/2} H:  d f = mu^{1/2} dH - (xi/2) f, with dH by the same
 * second-order stencils. Exact whenever f is a quadratic polynomial times
 * mu^{1/2}, which makes moment identities of Maxwellian-weighted integrands
 * hold to quadrature accuracy.
 */
inline void maxwellian_gradient_component(const VelocityGrid& grid, std::span<const cplx> f,
                                          int axis, std::span<cplx> out) {
  const int n = grid.points_per_axis();
  const std::size_t st = grid.stride(axis);
  const double inv2h = 1.0 / (2.0 * grid.spacing());
  const auto x = grid.xi(axis);
  // H(m') * sqrt_mu(m) = f(m') * sqrt_mu(m) / sqrt_mu(m'); only one coordinate differs
  auto r = [&](std::size_t m, std::size_t mp) {
    return f[mp] * std::exp(0.25 * (x[mp] * x[mp] - x[m] * x[m]));
  };
  for (std::size_t m = 0; m < grid.size(); ++m) {
    const int i = grid.multi_index(m)[axis];
    cplx dH;
    if (i == 0) {
      dH = (-3.0 * f[m] + 4.0 * r(m, m + st) - r(m, m + 2 * st)) * inv2h;
    } else if (i == n - 1) {
      dH = (3.0 * f[m] - 4.0 * r(m, m - st) + r(m, m - 2 * st)) * inv2h;
    } else {
      dH = (r(m, m + st) - r(m, m - st)) * inv2h;
    }
    out[m] = dH - 0.5 * x[m] * f[m];
  }
}

}  // namespace vml
