#pragma once
/**
 * @file macro_structure.hpp
 * @brief Null-space projection P, macro coefficients (a+-, b, c), the
 *        high-order moments Theta and Lambda, residuals of the macro balance
 *        laws along a mode history, and the moment identities of the
 *        nonlinear source.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "vml/landau_collision.hpp"
#include "vml/mode_state.hpp"
#include "vml/velocity_grid.hpp"

namespace vml {

struct MacroState {
  cplx a_plus = 0.0;
  cplx a_minus = 0.0;
  CVec3 b = CVec3::Zero();
  cplx c = 0.0;

  cplx a(int s) const { return s == kPlus ? a_plus : a_minus; }

  /// a+[1,0]mu^{1/2} + a-[0,1]mu^{1/2} + b.xi[1,1]mu^{1/2} + c(|xi|^2-3)[1,1]mu^{1/2}
  TwoSpeciesField reconstruct(const GridPtr& grid) const {
    return TwoSpeciesField::from_function(grid, [&](int s, const Vec3& xi) {
      const double sm = std::sqrt(maxwellian(xi));
      return (a(s) + b[0] * xi[0] + b[1] * xi[1] + b[2] * xi[2] + c * (xi.squaredNorm() - 3.0)) *
             sm;
    });
  }
};

struct Projection {
  MacroState macro;
  TwoSpeciesField Pf;
  TwoSpeciesField micro;
};

namespace detail {

// The six null-space basis functions evaluated on the grid, species-major.
inline std::array<TwoSpeciesField, 6> null_basis(const GridPtr& grid) {
  std::array<TwoSpeciesField, 6> e;
  for (int q = 0; q < 6; ++q) {
    e[q] = TwoSpeciesField::from_function(grid, [q](int s, const Vec3& xi) -> cplx {
      const double sm = std::sqrt(maxwellian(xi));
      switch (q) {
        case 0: return s == kPlus ? sm : 0.0;
        case 1: return s == kMinus ? sm : 0.0;
        case 5: return (xi.squaredNorm() - 3.0) * sm;
        default: return xi[q - 2] * sm;
      }
    });
  }
  return e;
}

}  // namespace detail

/**
 * Orthogonal projection onto the discrete null space. The coefficients solve
 * the 6x6 Gram system of the basis in the quadrature inner product, so P is
 * idempotent and self-adjoint on the grid regardless of how well the
 * continuum orthogonality relations are reproduced by the quadrature.
 */
inline Projection project_P(const TwoSpeciesField& f) {
  const auto& grid = f.grid();
  const auto e = detail::null_basis(grid);
  Eigen::Matrix<double, 6, 6> G;
  Eigen::Matrix<cplx, 6, 1> r;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) G(i, j) = inner_product(e[j], e[i]).real();
    r[i] = inner_product(f, e[i]);
  }
  const Eigen::Matrix<cplx, 6, 1> x = G.cast<cplx>().ldlt().solve(r);
  Projection out;
  out.macro.a_plus = x[0];
  out.macro.a_minus = x[1];
  out.macro.b = x.segment<3>(2);
  out.macro.c = x[5];
  out.Pf = TwoSpeciesField(grid);
  for (int q = 0; q < 6; ++q) out.Pf.axpy(x[q], e[q]);
  out.micro = f - out.Pf;
  return out;
}

struct MomentReport {
  std::array<Eigen::Matrix3cd, 2> Theta;
  std::array<CVec3, 2> Lambda;
};

/// Theta_ij = <(xi_i xi_j - 1) mu^{1/2}, f+->,  Lambda_i = (1/10)<(|xi|^2 - 5) xi_i mu^{1/2}, f+->.
inline MomentReport theta_lambda(const TwoSpeciesField& f) {
  const auto& g = *f.grid();
  const auto w = g.weights();
  const auto sm = g.sqrt_mu();
  MomentReport r;
  for (int s = 0; s < 2; ++s) {
    r.Theta[s].setZero();
    r.Lambda[s].setZero();
    for (std::size_t m = 0; m < g.size(); ++m) {
      const Vec3 xi = g.node(m);
      const cplx v = w[m] * sm[m] * f(s, m);
      const double q = xi.squaredNorm() - 5.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) r.Theta[s](i, j) += (xi[i] * xi[j] - 1.0) * v;
        r.Lambda[s][i] += 0.1 * q * xi[i] * v;
      }
    }
  }
  return r;
}

/// Per-family residual statistics over the interior frames of a history.
struct LawResidual {
  double max = 0.0;
  double l2 = 0.0;  // sqrt(dt * sum |r|^2) over frames and components
};

struct MacroResidualReport {
  LawResidual a, b, c, theta, lambda;
  std::size_t frames_used = 0;
  const LawResidual& family(int i) const {
    const std::array<const LawResidual*, 5> f{&a, &b, &c, &theta, &lambda};
    return *f[i];
  }
};

namespace detail {

// Time-differentiated brackets and remaining terms of every balance law at one
// frame, laid out as a flat vector per family so that the residual at frame n
// is (Q[n+1] - Q[n-1]) / (2 dt) + R[n].
struct LawTerms {
  std::array<std::vector<cplx>, 5> Q, R;
};

inline LawTerms law_terms(const ModeState& s, const LinearizedOperator& L) {
  const auto& grid = s.f.grid();
  const VelocityGrid& g = *grid;
  const auto w = g.weights();
  const auto sm = g.sqrt_mu();
  const std::size_t N = g.size();
  const cplx I(0.0, 1.0);
  const Vec3 k = s.k;

  const auto proj = project_P(s.f);
  const auto& M = proj.macro;
  const TwoSpeciesField& u = proj.micro;  // {I - P} f
  const TwoSpeciesField Lf = L.apply(s.f);
  // r = -i xi.k {I-P}f - L f
  TwoSpeciesField r(grid);
  for (int sp = 0; sp < 2; ++sp) {
    for (std::size_t m = 0; m < N; ++m) {
      const double kx = k[0] * g.xi(0)[m] + k[1] * g.xi(1)[m] + k[2] * g.xi(2)[m];
      r(sp, m) = -I * kx * u(sp, m) - Lf(sp, m);
    }
  }
  const auto Tu = theta_lambda(u);
  const auto Tr = theta_lambda(r);

  LawTerms t;
  for (int sp = 0; sp < 2; ++sp) {
    const double sgn = species_sign(sp);
    // velocity moments of the micro part and of L f for this species
    CVec3 m_xi = CVec3::Zero(), m_xiq = CVec3::Zero(), l_xi = CVec3::Zero();
    Eigen::Matrix3cd m_xixi = Eigen::Matrix3cd::Zero();
    cplx m_q = 0.0, l_q = 0.0;
    for (std::size_t m = 0; m < N; ++m) {
      const Vec3 xi = g.node(m);
      const double q = xi.squaredNorm() - 3.0;
      const cplx um = w[m] * sm[m] * u(sp, m);
      const cplx lm = w[m] * sm[m] * Lf(sp, m);
      for (int i = 0; i < 3; ++i) {
        m_xi[i] += xi[i] * um;
        m_xiq[i] += q * xi[i] * um;
        l_xi[i] += xi[i] * lm;
        for (int j = 0; j < 3; ++j) m_xixi(i, j) += xi[i] * xi[j] * um;
      }
      m_q += q * um;
      l_q += q * lm;
    }
    const cplx kb = I * (k.cast<cplx>().transpose() * M.b)(0);
    const cplx a = M.a(sp);

    // a-law: d_t a + ik.b + ik.<xi mu^{1/2}, u> = 0
    t.Q[0].push_back(a);
    t.R[0].push_back(kb + I * (k.cast<cplx>().transpose() * m_xi)(0));
    // b-law: d_t[b_i + <xi_i mu^{1/2}, u>] + ik_i(a + 2c) -+ E_i + ik.<xi xi_i mu^{1/2}, u> = -<xi_i mu^{1/2}, L f>
    for (int i = 0; i < 3; ++i) {
      cplx flux = 0.0;
      for (int j = 0; j < 3; ++j) flux += I * k[j] * m_xixi(j, i);
      t.Q[1].push_back(M.b[i] + m_xi[i]);
      t.R[1].push_back(I * k[i] * (a + 2.0 * M.c) - sgn * s.E[i] + flux + l_xi[i]);
    }
    // c-law
    {
      cplx flux = 0.0;
      for (int j = 0; j < 3; ++j) flux += I * k[j] * m_xiq[j];
      t.Q[2].push_back(M.c + m_q / 6.0);
      t.R[2].push_back(kb / 3.0 + flux / 6.0 + l_q / 6.0);
    }
    // Theta laws
    cplx kmx = 0.0;
    for (int j = 0; j < 3; ++j) kmx += I * k[j] * m_xi[j];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) {
          t.Q[3].push_back(Tu.Theta[sp](i, i) + 2.0 * M.c);
          t.R[3].push_back(2.0 * I * k[i] * M.b[i] - Tr.Theta[sp](i, i));
        } else {
          t.Q[3].push_back(Tu.Theta[sp](i, j));
          t.R[3].push_back(I * k[j] * M.b[i] + I * k[i] * M.b[j] + kmx - Tr.Theta[sp](i, j));
        }
      }
    }
    // Lambda law
    for (int i = 0; i < 3; ++i) {
      t.Q[4].push_back(Tu.Lambda[sp][i]);
      t.R[4].push_back(I * k[i] * M.c - Tr.Lambda[sp][i]);
    }
  }
  return t;
}

}  // namespace detail

/**
 * Residuals of the five balance-law families (a, b, c, Theta, Lambda; both
 * species, all components) along a uniformly sampled linear history (S = 0),
 * with centered time differences at interior frames.
 */
inline MacroResidualReport macro_residuals(std::span<const ModeState> history,
                                           const LinearizedOperator& L) {
  if (history.size() < 3) throw InsufficientData("balance-law residuals need at least 3 frames");
  const double dt = history[1].t - history[0].t;
  if (!(dt > 0.0)) throw ParameterError("history must be uniformly increasing in time");
  std::vector<detail::LawTerms> terms;
  terms.reserve(history.size());
  for (const auto& s : history) terms.push_back(detail::law_terms(s, L));
  MacroResidualReport rep;
  std::array<LawResidual*, 5> fam{&rep.a, &rep.b, &rep.c, &rep.theta, &rep.lambda};
  for (std::size_t n = 1; n + 1 < history.size(); ++n) {
    for (int q = 0; q < 5; ++q) {
      const auto& Qp = terms[n + 1].Q[q];
      const auto& Qm = terms[n - 1].Q[q];
      const auto& R = terms[n].R[q];
      for (std::size_t c = 0; c < R.size(); ++c) {
        const double r = std::abs((Qp[c] - Qm[c]) / (2.0 * dt) + R[c]);
        fam[q]->max = std::max(fam[q]->max, r);
        fam[q]->l2 += dt * r * r;
      }
    }
  }
  for (auto* f : fam) f->l2 = std::sqrt(f->l2);
  rep.frames_used = history.size() - 2;
  return rep;
}

/// Both sides of the velocity-moment identities of the nonlinear source, per species.
struct SourceMomentSides {
  std::array<cplx, 2> mass_lhs, mass_rhs;
  std::array<CVec3, 2> momentum_lhs, momentum_rhs;
  std::array<cplx, 2> energy_lhs, energy_rhs;
};

/**
 * S+- = +-(1/2) E.xi f+- -+ (E + xi x B).grad_xi f+- + Gamma+-(f, f) evaluated
 * pointwise in x. The left sides are direct quadratures of S; the right sides
 * are the closed forms in terms of (a+-, b), the micro flux and Gamma.
 * Velocity gradients use the Maxwellian-factored stencil.
 */
inline SourceMomentSides source_moments(const TwoSpeciesField& f, const CVec3& E, const CVec3& B,
                                        const CollisionParams& p,
                                        const DirectBudget& budget = {}) {
  const auto& grid = f.grid();
  const VelocityGrid& g = *grid;
  const std::size_t N = g.size();
  const auto w = g.weights();
  const auto sm = g.sqrt_mu();
  const TwoSpeciesField Gm = gamma_bilinear(f, f, p, budget);
  const auto proj = project_P(f);

  SourceMomentSides out;
  for (int sp = 0; sp < 2; ++sp) {
    const double sgn = species_sign(sp);
    std::array<std::vector<cplx>, 3> grad;
    for (int i = 0; i < 3; ++i) {
      grad[i].resize(N);
      maxwellian_gradient_component(g, f.species(sp), i, grad[i]);
    }
    cplx mass = 0.0, energy = 0.0;
    CVec3 mom = CVec3::Zero();
    cplx g_energy = 0.0;
    CVec3 g_mom = CVec3::Zero(), micro_xi = CVec3::Zero();
    for (std::size_t m = 0; m < N; ++m) {
      const Vec3 xi = g.node(m);
      const CVec3 xic = xi.cast<cplx>();
      const CVec3 force = E + cross(xic, B);
      const cplx Ef = 0.5 * (E[0] * xi[0] + E[1] * xi[1] + E[2] * xi[2]) * f(sp, m);
      const cplx drift = force[0] * grad[0][m] + force[1] * grad[1][m] + force[2] * grad[2][m];
      const cplx S = sgn * Ef - sgn * drift + Gm(sp, m);
      const double q = (xi.squaredNorm() - 3.0) / 6.0;
      const double ws = w[m] * sm[m];
      mass += ws * S;
      energy += ws * q * S;
      g_energy += ws * q * Gm(sp, m);
      for (int i = 0; i < 3; ++i) {
        mom[i] += ws * xi[i] * S;
        g_mom[i] += ws * xi[i] * Gm(sp, m);
        micro_xi[i] += ws * xi[i] * proj.micro(sp, m);
      }
    }
    const auto& M = proj.macro;
    out.mass_lhs[sp] = mass;
    out.mass_rhs[sp] = 0.0;
    out.momentum_lhs[sp] = mom;
    out.momentum_rhs[sp] = sgn * E * M.a(sp) + sgn * cross(M.b, B) + sgn * cross(micro_xi, B) + g_mom;
    out.energy_lhs[sp] = energy;
    out.energy_rhs[sp] = sgn / 3.0 * (M.b.transpose() * E)(0) +
                         sgn / 3.0 * (micro_xi.transpose() * E)(0) + g_energy;
  }
  return out;
}

}  // namespace vml
