#pragma once
/**
 * @file landau_collision.hpp
 * @brief Landau kernel, collision frequency, the bilinear collision operator Q,
 *        the two-species nonlinear term Gamma and the linearized operator L.
 *
 * Discretization
 * --------------
 * The kernel is sampled at lattice offsets; the coincident offset carries the
 * lattice self-term of the integrable singularity (see `coincident_kernel`).
 * Sampled values keep ker phi(xi_m - xi_m') = span(xi_m - xi_m') exactly.
 *
 * Velocity derivatives inside the collision operators are one-sided
 * differences on two orientations e = +1 (forward) and e = -1 (backward),
 * each restricted to the (n-1)^3 box of nodes where that difference exists;
 * every operator is the mean of its two oriented versions. Writing
 * f = mu^{1/2} h, the oriented gradient D^e f = mu^{1/2} grad^e h is exact on
 * h = 1, xi_i and, up to a constant shift e*h*(1,1,1), on |xi|^2, so the six
 * collision invariants are annihilated to round-off. With the weak form
 *
 *   <L^e f, g> = 2 sum_s sum_b w D^e g_s . sigma^e D^e f_s
 *              - sum_b w mu^{1/2} D^e G . (phi * (w mu^{1/2} D^e F)),
 *
 * (F = f+ + f-, G = g+ + g-), L is symmetric positive semidefinite in the
 * quadrature inner product by construction.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "vml/lattice_convolution.hpp"
#include "vml/quadrature.hpp"
#include "vml/velocity_grid.hpp"

namespace vml {

struct CollisionParams {
  double gamma = -3.0;
  double c_phi = 1.0;

  void validate() const {
    if (!(gamma >= -3.0 && gamma < -2.0)) {
      throw ParameterError("collision exponent gamma must satisfy -3 <= gamma < -2");
    }
    if (!(c_phi > 0.0) || !std::isfinite(c_phi)) throw ParameterError("C_phi must be positive");
  }
};

/// phi^{ij}(xi) = C_phi |xi|^{gamma+2} (delta_ij - xi_i xi_j / |xi|^2).
inline Mat3 phi_kernel(const Vec3& xi, const CollisionParams& p) {
  const double r2 = xi.squaredNorm();
  if (r2 == 0.0) throw SingularPointError("Landau kernel is singular at xi = 0");
  const double r = std::sqrt(r2);
  return p.c_phi * std::pow(r, p.gamma + 2.0) * (Mat3::Identity() - xi * xi.transpose() / r2);
}

/// P_xi u = (xi (x) xi / |xi|^2) u; the zero map at xi = 0.
inline Vec3 p_xi_projection(const Vec3& xi, const Vec3& u) {
  const double r2 = xi.squaredNorm();
  if (r2 == 0.0) return Vec3::Zero();
  return xi * (xi.dot(u) / r2);
}

/**
 * Kernel value carried by the coincident node. The lattice sum of
 * |v|^q g(v) over nonzero nodes misses the singular contribution
 * -Z(-q) h^{3+q} g(0) + O(h^{5+q}), with Z the cubic-lattice Epstein zeta
 * function; the origin therefore carries -Z(-q) h^q times the angular mean
 * (2/3) I of the projector.
 */
inline Mat3 coincident_kernel(double h, const CollisionParams& p) {
  const double q = p.gamma + 2.0;
  return (2.0 / 3.0) * p.c_phi * std::pow(h, q) * (-cubic_lattice_zeta(-q)) * Mat3::Identity();
}
/// Kernel on integer lattice offsets for spacing h.
class LatticeKernel {
 public:
  LatticeKernel(double h, const CollisionParams& p)
      : h_(h), p_(p), origin_(coincident_kernel(h, p)) {}
  Mat3 operator()(int a, int b, int c) const {
    if (a == 0 && b == 0 && c == 0) return origin_;
    return phi_kernel(Vec3(a * h_, b * h_, c * h_), p_);
  }

 private:
  double h_;
  CollisionParams p_;
  Mat3 origin_;
};

/// sigma^{ij}(xi) = (phi^{ij} * mu)(xi) at every node of a grid.
class CollisionFrequencyField {
 public:
  CollisionFrequencyField(GridPtr grid, std::vector<Mat3> values)
      : grid_(std::move(grid)), sigma_(std::move(values)) {}
  const GridPtr& grid() const { return grid_; }
  const Mat3& at(std::size_t m) const { return sigma_[m]; }
  std::size_t size() const { return sigma_.size(); }

 private:
  GridPtr grid_;
  std::vector<Mat3> sigma_;
};

/// Quadrature of the convolution phi * mu on every node (FFT-evaluated lattice sum).
inline CollisionFrequencyField sigma_field(const GridPtr& grid, const CollisionParams& p) {
  p.validate();
  const int n = grid->points_per_axis();
  LatticeConvolver conv(n, LatticeKernel(grid->spacing(), p));
  std::vector<double> rho(grid->size());
  for (std::size_t m = 0; m < grid->size(); ++m) rho[m] = grid->weight(m) * grid->mu()[m];
  auto s = conv.apply_scalar(rho);
  return CollisionFrequencyField(grid, std::move(s));
}

namespace detail {

/// One difference orientation: the box of nodes carrying D^e and its tables.
struct OrientedBox {
  int sign = 1;    // +1 forward, -1 backward
  int offset = 0;  // grid index of box coordinate 0
  int nb = 0;      // nodes per axis of the box (n - 1)
  std::vector<std::size_t> node;       // box -> grid flat index
  std::vector<double> w, sqrt_mu, mu;  // at box nodes
  std::vector<double> ratio_half;      // per 1-D box coordinate: sqrt(mu_b / mu_nb)
  std::vector<double> ratio_full;      // per 1-D box coordinate: mu_b / mu_nb

  OrientedBox(const VelocityGrid& g, int e) : sign(e), offset(e > 0 ? 0 : 1) {
    const int n = g.points_per_axis();
    nb = n - 1;
    const std::size_t NB = static_cast<std::size_t>(nb) * nb * nb;
    node.resize(NB);
    w.resize(NB);
    sqrt_mu.resize(NB);
    mu.resize(NB);
    std::size_t b = 0;
    for (int i = 0; i < nb; ++i) {
      for (int j = 0; j < nb; ++j) {
        for (int k = 0; k < nb; ++k, ++b) {
          const std::size_t m = g.index(i + offset, j + offset, k + offset);
          node[b] = m;
          w[b] = g.weight(m);
          sqrt_mu[b] = g.sqrt_mu()[m];
          mu[b] = g.mu()[m];
        }
      }
    }
    ratio_half.resize(nb);
    ratio_full.resize(nb);
    for (int i = 0; i < nb; ++i) {
      const double x = g.coord(i + offset);
      const double xn = g.coord(i + offset + e);
      ratio_half[i] = std::exp(0.25 * (xn * xn - x * x));
      ratio_full[i] = std::exp(0.5 * (xn * xn - x * x));
    }
  }

  std::size_t volume() const { return node.size(); }
  std::array<int, 3> coords(std::size_t b) const {
    const int k = static_cast<int>(b % nb);
    const int j = static_cast<int>((b / nb) % nb);
    const int i = static_cast<int>(b / (static_cast<std::size_t>(nb) * nb));
    return {i, j, k};
  }
};

}  // namespace detail

/// Work guard for the O(n^6) direct collision sums.
struct DirectBudget {
  double max_pair_count = 5.0e8;
};

/**
 * Bilinear Landau operator Q(F, G) for one pair of single-species arrays,
 * evaluated by the direct double sum (cost O(n^6)):
 *
 *   Q^e(F,G) = div^e A^e,  A^e(b) = sum_b' w' phi(b-b') [D~F(b) G(b') - F(b) D~G(b')],
 *
 * where D~F = mu grad^e(F/mu) - xi F is the Maxwellian-exact difference and
 * div^e is minus the quadrature adjoint of the plain difference grad^e.
 * The result is the mean over both orientations.
 */
inline std::vector<cplx> apply_Q(const GridPtr& grid, std::span<const cplx> F,
                                 std::span<const cplx> G, const CollisionParams& p,
                                 const DirectBudget& budget = {}) {
  p.validate();
  const VelocityGrid& g = *grid;
  const int n = g.points_per_axis();
  const double pairs = 2.0 * std::pow(static_cast<double>(n), 6);
  if (pairs > budget.max_pair_count) {
    throw ResourceGuardError("direct collision sum exceeds the configured budget");
  }
  const double h = g.spacing();
  const int nb = n - 1;
  const int span = 2 * nb - 1;
  LatticeKernel kernel(h, p);
  std::vector<Mat3> table(static_cast<std::size_t>(span) * span * span);
  for (int a = 0; a < span; ++a) {
    for (int b = 0; b < span; ++b) {
      for (int c = 0; c < span; ++c) {
        table[(static_cast<std::size_t>(a) * span + b) * span + c] =
            kernel(a - (nb - 1), b - (nb - 1), c - (nb - 1));
      }
    }
  }

  std::vector<cplx> out(g.size(), 0.0);
  for (int e : {1, -1}) {
    detail::OrientedBox box(g, e);
    const std::size_t NB = box.volume();
    // D~ at box nodes
    auto tilde_grad = [&](std::span<const cplx> X) {
      std::vector<CVec3> d(NB);
      for (std::size_t b = 0; b < NB; ++b) {
        const auto c = box.coords(b);
        const std::size_t m = box.node[b];
        for (int i = 0; i < 3; ++i) {
          const std::size_t mn = m + (e > 0 ? g.stride(i) : -g.stride(i));
          const cplx diff = X[mn] * box.ratio_full[c[i]] - X[m];
          d[b][i] = (e / h) * diff - g.xi(i)[m] * X[m];
        }
      }
      return d;
    };
    const auto dF = tilde_grad(F);
    const auto dG = tilde_grad(G);
    std::vector<CVec3> A(NB);
    for (std::size_t b = 0; b < NB; ++b) {
      const auto cb = box.coords(b);
      Eigen::Matrix3cd S1 = Eigen::Matrix3cd::Zero();
      CVec3 S2 = CVec3::Zero();
      for (std::size_t bp = 0; bp < NB; ++bp) {
        const auto cp = box.coords(bp);
        const Mat3& phi = table[(static_cast<std::size_t>(cb[0] - cp[0] + nb - 1) * span +
                                 (cb[1] - cp[1] + nb - 1)) *
                                    span +
                                (cb[2] - cp[2] + nb - 1)];
        const cplx wg = box.w[bp] * G[box.node[bp]];
        S1 += phi * wg;
        S2 += box.w[bp] * (phi * dG[bp]);
      }
      A[b] = S1 * dF[b] - F[box.node[b]] * S2;
    }
    // out -= (1/w) (grad^e)^T (w A), halved for the orientation mean
    for (std::size_t b = 0; b < NB; ++b) {
      const std::size_t m = box.node[b];
      for (int i = 0; i < 3; ++i) {
        const std::size_t mn = m + (e > 0 ? g.stride(i) : -g.stride(i));
        const cplx q = 0.5 * box.w[b] * A[b][i] * (e / h);
        out[mn] -= q;
        out[m] += q;
      }
    }
  }
  for (std::size_t m = 0; m < g.size(); ++m) out[m] /= g.weight(m);
  return out;
}

/**
 * Gamma_+-(f, g) = mu^{-1/2} Q(mu^{1/2} f+-, mu^{1/2} g+-)
 *                + mu^{-1/2} Q(mu^{1/2} f+-, mu^{1/2} g-+).
 */
inline TwoSpeciesField gamma_bilinear(const TwoSpeciesField& f, const TwoSpeciesField& g,
                                      const CollisionParams& p, const DirectBudget& budget = {}) {
  f.check(g);
  const auto& grid = f.grid();
  const std::size_t N = f.nodes();
  const auto sm = grid->sqrt_mu();
  std::vector<cplx> Gsum(N);
  for (std::size_t m = 0; m < N; ++m) Gsum[m] = sm[m] * (g(kPlus, m) + g(kMinus, m));
  TwoSpeciesField out(grid);
  for (int s = 0; s < 2; ++s) {
    std::vector<cplx> Fs(N);
    for (std::size_t m = 0; m < N; ++m) Fs[m] = sm[m] * f(s, m);
    const auto q = apply_Q(grid, Fs, Gsum, p, budget);
    for (std::size_t m = 0; m < N; ++m) out(s, m) = q[m] / sm[m];
  }
  return out;
}

/**
 * Direct evaluation of L_+- f = -2 mu^{-1/2} Q(mu^{1/2} f+-, mu)
 *                             - mu^{-1/2} Q(mu, mu^{1/2}(f+ + f-))
 * through `apply_Q`. Independent of the assembled operator; used to cross-check it.
 */
inline TwoSpeciesField apply_L_direct(const TwoSpeciesField& f, const CollisionParams& p,
                                      const DirectBudget& budget = {}) {
  const auto& grid = f.grid();
  const std::size_t N = f.nodes();
  const auto sm = grid->sqrt_mu();
  std::vector<cplx> mu(grid->mu().begin(), grid->mu().end());
  std::vector<cplx> Fsum(N);
  for (std::size_t m = 0; m < N; ++m) Fsum[m] = sm[m] * (f(kPlus, m) + f(kMinus, m));
  const auto q_mix = apply_Q(grid, mu, Fsum, p, budget);
  TwoSpeciesField out(grid);
  for (int s = 0; s < 2; ++s) {
    std::vector<cplx> Fs(N);
    for (std::size_t m = 0; m < N; ++m) Fs[m] = sm[m] * f(s, m);
    const auto q_self = apply_Q(grid, Fs, mu, p, budget);
    for (std::size_t m = 0; m < N; ++m) out(s, m) = (-2.0 * q_self[m] - q_mix[m]) / sm[m];
  }
  return out;
}

/**
 * Assembled linearized Landau operator on two-species fields.
 *
 * L f = [Loc f+ + N(f+ + f-), Loc f- + N(f+ + f-)]: a sparse local part Loc
 * (the sigma-weighted diffusion, identical for both species) and a nonlocal
 * part N evaluated by one FFT vector convolution per difference orientation.
 * The oriented collision frequencies sigma^e are sums over the oriented box
 * only, so that the weak form vanishes exactly on the null space.
 * Immutable after construction; all apply functions are thread safe.
 */
class LinearizedOperator {
 public:
  using SparseRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  LinearizedOperator(GridPtr grid, const CollisionParams& p)
      : grid_(std::move(grid)), params_(p), sigma_(sigma_field(grid_, p)) {
    const VelocityGrid& g = *grid_;
    const int n = g.points_per_axis();
    conv_ = std::make_unique<LatticeConvolver>(n - 1, LatticeKernel(g.spacing(), p));
    for (int e : {1, -1}) {
      auto& o = boxes_.emplace_back(g, e);
      std::vector<double> rho(o.volume());
      for (std::size_t b = 0; b < o.volume(); ++b) rho[b] = o.w[b] * o.mu[b];
      sigma_box_.push_back(conv_->apply_scalar(rho));
    }
    local_ = build_local();
    local_.makeCompressed();
    build_diagonal();
  }

  const GridPtr& grid() const { return grid_; }
  const CollisionParams& params() const { return params_; }
  const CollisionFrequencyField& sigma() const { return sigma_; }
  /// Diagonal of L per species and node (species-major, like the fields).
  std::span<const double> diagonal() const { return diag_; }

  /**
   * Local part for one species as a sparse n^3 x n^3 matrix,
   * (Loc f)(m) = sum_m' Loc(m, m') f(m'). It is the whole of L on the
   * species difference f+ - f-.
   */
  const SparseRow& local_matrix() const { return local_; }

  TwoSpeciesField apply(const TwoSpeciesField& f) const {
    if (!f.grid() || !f.grid()->same_as(*grid_)) throw GridMismatch();
    TwoSpeciesField out(grid_);
    apply_into(f.values(), out.values());
    return out;
  }

  /// out = L f on raw species-major arrays of length 2 n^3.
  void apply_into(std::span<const cplx> f, std::span<cplx> out) const {
    const std::size_t N = grid_->size();
    std::vector<cplx> F(N), nl(N);
    for (std::size_t m = 0; m < N; ++m) F[m] = f[m] + f[N + m];
    apply_nonlocal(F, nl);
    for (int s = 0; s < 2; ++s) {
      apply_local(f.subspan(s * N, N), out.subspan(s * N, N));
      for (std::size_t m = 0; m < N; ++m) out[s * N + m] += nl[m];
    }
  }

  /// out = Loc f for one species.
  void apply_local(std::span<const cplx> f, std::span<cplx> out) const {
    const int rows = static_cast<int>(local_.outerSize());
    const int* outer = local_.outerIndexPtr();
    const int* inner = local_.innerIndexPtr();
    const double* val = local_.valuePtr();
    for (int r = 0; r < rows; ++r) {
      cplx acc = 0.0;
      for (int q = outer[r]; q < outer[r + 1]; ++q) acc += val[q] * f[inner[q]];
      out[r] = acc;
    }
  }

  /// out = N(F), the nonlocal term shared by both species, F = f+ + f-.
  void apply_nonlocal(std::span<const cplx> F, std::span<cplx> out) const {
    const VelocityGrid& g = *grid_;
    const double h = g.spacing();
    std::fill(out.begin(), out.end(), cplx(0.0));
    for (const auto& box : boxes_) {
      const int e = box.sign;
      const std::size_t NB = box.volume();
      std::array<std::vector<cplx>, 3> u, V;
      for (int i = 0; i < 3; ++i) {
        u[i].resize(NB);
        V[i].resize(NB);
      }
      for (std::size_t b = 0; b < NB; ++b) {
        const auto c = box.coords(b);
        const std::size_t m = box.node[b];
        const double ws = box.w[b] * box.sqrt_mu[b] * (e / h);
        for (int i = 0; i < 3; ++i) {
          const std::size_t mn = e > 0 ? m + g.stride(i) : m - g.stride(i);
          u[i][b] = ws * (F[mn] * box.ratio_half[c[i]] - F[m]);
        }
      }
      conv_->apply({std::span<const cplx>(u[0]), std::span<const cplx>(u[1]),
                    std::span<const cplx>(u[2])},
                   {std::span<cplx>(V[0]), std::span<cplx>(V[1]), std::span<cplx>(V[2])});
      for (std::size_t b = 0; b < NB; ++b) {
        const auto c = box.coords(b);
        const std::size_t m = box.node[b];
        const double ws = -0.5 * box.w[b] * box.sqrt_mu[b] * (e / h);
        for (int i = 0; i < 3; ++i) {
          const std::size_t mn = e > 0 ? m + g.stride(i) : m - g.stride(i);
          const cplx q = ws * V[i][b];
          out[mn] += box.ratio_half[c[i]] * q;
          out[m] -= q;
        }
      }
    }
    const auto w = g.weights();
    for (std::size_t m = 0; m < g.size(); ++m) out[m] /= w[m];
  }

 private:
  // Loc = (1/2) sum_e W^{-1} (D^e)^T W 2 sigma^e D^e with D^e_i f(b) = (e/h)(r_i f(b + e e_i) - f(b)).
  SparseRow build_local() const {
    const VelocityGrid& g = *grid_;
    const double h = g.spacing();
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t oi = 0; oi < boxes_.size(); ++oi) {
      const auto& box = boxes_[oi];
      const auto& sig = sigma_box_[oi];
      const int e = box.sign;
      for (std::size_t b = 0; b < box.volume(); ++b) {
        const auto c = box.coords(b);
        const std::size_t m = box.node[b];
        std::array<std::array<std::pair<std::size_t, double>, 2>, 3> d;
        for (int i = 0; i < 3; ++i) {
          const std::size_t mn = e > 0 ? m + g.stride(i) : m - g.stride(i);
          d[i] = {{{m, -e / h}, {mn, (e / h) * box.ratio_half[c[i]]}}};
        }
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            const double s = box.w[b] * sig[b](i, j);
            for (const auto& [ra, ca] : d[i]) {
              for (const auto& [rb, cb] : d[j]) {
                trip.emplace_back(static_cast<int>(ra), static_cast<int>(rb),
                                  s * ca * cb / g.weight(ra));
              }
            }
          }
        }
      }
    }
    SparseRow A(static_cast<int>(g.size()), static_cast<int>(g.size()));
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }

  // Exact diagonal of L: each oriented difference touches node m through its
  // own box slot (all three components) and through the slot one step back
  // along each axis (one component).
  void build_diagonal() {
    const VelocityGrid& g = *grid_;
    const std::size_t N = g.size();
    const double h = g.spacing();
    const int n = g.points_per_axis();
    LatticeKernel kernel(h, params_);
    std::vector<double> d(N, 0.0);
    for (std::size_t oi = 0; oi < boxes_.size(); ++oi) {
      const auto& box = boxes_[oi];
      const auto& sig = sigma_box_[oi];
      const int e = box.sign;
      auto box_index = [&](int i, int j, int k) -> long {
        const int a = i - box.offset, b = j - box.offset, c = k - box.offset;
        if (a < 0 || b < 0 || c < 0 || a >= box.nb || b >= box.nb || c >= box.nb) return -1;
        return (static_cast<long>(a) * box.nb + b) * box.nb + c;
      };
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          for (int k = 0; k < n; ++k) {
            const std::size_t m = g.index(i, j, k);
            struct Entry {
              long b;
              int comp;  // -1: all components
              double coef;
              std::array<int, 3> c;
            };
            std::vector<Entry> entries;
            if (long b = box_index(i, j, k); b >= 0) {
              entries.push_back({b, -1, -e / h, {i, j, k}});
            }
            for (int ax = 0; ax < 3; ++ax) {
              std::array<int, 3> c{i, j, k};
              c[ax] -= e;
              const long b = box_index(c[0], c[1], c[2]);
              if (b < 0) continue;
              const double r = box.ratio_half[c[ax] - box.offset];
              entries.push_back({b, ax, (e / h) * r, c});
            }
            double local = 0.0, nonlocal = 0.0;
            for (const auto& a : entries) {
              for (const auto& b : entries) {
                const Mat3 phi = kernel(a.c[0] - b.c[0], a.c[1] - b.c[1], a.c[2] - b.c[2]);
                double same = 0.0, cross = 0.0;
                for (int p = 0; p < 3; ++p) {
                  if (a.comp >= 0 && a.comp != p) continue;
                  for (int q = 0; q < 3; ++q) {
                    if (b.comp >= 0 && b.comp != q) continue;
                    if (a.b == b.b) same += sig[a.b](p, q);
                    cross += phi(p, q);
                  }
                }
                const double ca = a.coef, cb = b.coef;
                if (a.b == b.b) local += 2.0 * box.w[a.b] * ca * cb * same;
                nonlocal -= box.w[a.b] * box.sqrt_mu[a.b] * box.w[b.b] * box.sqrt_mu[b.b] * ca *
                            cb * cross;
              }
            }
            d[m] += 0.5 * (local + nonlocal) / g.weight(m);
          }
        }
      }
    }
    diag_.resize(2 * N);
    for (std::size_t m = 0; m < N; ++m) diag_[m] = diag_[N + m] = d[m];
  }

  GridPtr grid_;
  CollisionParams params_;
  CollisionFrequencyField sigma_;
  std::unique_ptr<LatticeConvolver> conv_;
  std::vector<detail::OrientedBox> boxes_;
  SparseRow local_;
  std::vector<std::vector<Mat3>> sigma_box_;
  std::vector<double> diag_;
};

inline std::shared_ptr<const LinearizedOperator> assemble_L(const GridPtr& grid,
                                                            const CollisionParams& p) {
  p.validate();
  return std::make_shared<const LinearizedOperator>(grid, p);
}

}  // namespace vml
