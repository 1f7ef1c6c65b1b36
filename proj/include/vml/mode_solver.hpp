#pragma once
/**
 * @file mode_solver.hpp
 * @brief Time integration of one spatial Fourier mode of the linearized
 *        Vlasov-Maxwell-Landau system, per-mode energy diagnostics, envelope
 *        fitting and binary checkpoints.
 *
 *   d_t f = -i xi.k f + (E.xi) mu^{1/2} q1 - L f
 *   d_t E =  i k x B - <xi mu^{1/2}, f+ - f->
 *   d_t B = -i k x E
 *
 * Implicit solves use the splitting of L into its species-local part Loc and
 * the nonlocal part acting on f+ + f-: the species difference only sees the
 * sparse operator I + theta (Loc + i xi.k), the species sum additionally the
 * FFT convolution and is solved by GMRES preconditioned with an incomplete
 * LU factorization of the sparse part.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <boost/math/tools/minima.hpp>

#include "vml/gmres.hpp"
#include "vml/landau_collision.hpp"
#include "vml/macro_structure.hpp"
#include "vml/mode_state.hpp"
#include "vml/weights_energy.hpp"

namespace vml {

enum class Scheme { ImexEuler, ImexMidpoint };

inline Scheme parse_scheme(const std::string& s) {
  if (s == "imex-euler") return Scheme::ImexEuler;
  if (s == "imex-midpoint") return Scheme::ImexMidpoint;
  throw ParameterError("unknown scheme '" + s + "'");
}

inline std::string scheme_name(Scheme s) {
  return s == Scheme::ImexEuler ? "imex-euler" : "imex-midpoint";
}

struct StepperConfig {
  double dt = 0.05;
  Scheme scheme = Scheme::ImexMidpoint;
  double linear_tol = 1e-11;
  double constraint_tol = 1e-8;
  long max_steps = 10'000'000;
  int save_every = 1;  // frames are emitted every save_every steps

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ParameterError("time step must be positive");
    if (!(linear_tol > 0.0) || !(constraint_tol > 0.0)) {
      throw ParameterError("tolerances must be positive");
    }
    if (max_steps <= 0 || save_every <= 0) throw ParameterError("step counts must be positive");
  }
};

struct ModeDerivative {
  TwoSpeciesField df;
  CVec3 dE = CVec3::Zero();
  CVec3 dB = CVec3::Zero();
};

namespace detail {

inline CVec3 ik_cross(const Vec3& k, const CVec3& v) {
  return cplx(0.0, 1.0) * cross(k.cast<cplx>(), v);
}

inline Eigen::Matrix3cd ik_cross_matrix(const Vec3& k) {
  Eigen::Matrix3cd K;
  K << 0.0, -k[2], k[1], k[2], 0.0, -k[0], -k[1], k[0], 0.0;
  return cplx(0.0, 1.0) * K;
}

}  // namespace detail

/// Right-hand side of the mode system at state s.
inline ModeDerivative mode_rhs(const ModeState& s, const LinearizedOperator& L) {
  if (!s.f.grid() || !s.f.grid()->same_as(*L.grid())) throw GridMismatch();
  const VelocityGrid& g = *s.f.grid();
  const std::size_t N = g.size();
  const auto sm = g.sqrt_mu();
  ModeDerivative d;
  d.df = L.apply(s.f);
  const cplx I(0.0, 1.0);
  for (int sp = 0; sp < 2; ++sp) {
    const double q1 = species_sign(sp);
    for (std::size_t m = 0; m < N; ++m) {
      const double kx = s.k[0] * g.xi(0)[m] + s.k[1] * g.xi(1)[m] + s.k[2] * g.xi(2)[m];
      const cplx Ex = s.E[0] * g.xi(0)[m] + s.E[1] * g.xi(1)[m] + s.E[2] * g.xi(2)[m];
      d.df(sp, m) = -I * kx * s.f(sp, m) + q1 * Ex * sm[m] - d.df(sp, m);
    }
  }
  d.dE = detail::ik_cross(s.k, s.B) - current_density(s.f);
  d.dB = -detail::ik_cross(s.k, s.E);
  return d;
}

/// Total mode energy ||f||^2 + |E|^2 + |B|^2.
inline double mode_energy(const ModeState& s) {
  return norm_sq(s.f) + s.E.squaredNorm() + s.B.squaredNorm();
}

struct StepStats {
  int gmres_iterations = 0;
  double gmres_residual = 0.0;
};

/**
 * One-step map for a fixed (k, dt, scheme), with all per-mode
 * precomputations (sparse factorization, field-response vectors).
 */
class ModeStepper {
 public:
  ModeStepper(std::shared_ptr<const LinearizedOperator> L, const Vec3& k, const StepperConfig& cfg)
      : L_(std::move(L)), k_(k), cfg_(cfg) {
    cfg_.validate();
    const VelocityGrid& g = *L_->grid();
    N_ = g.size();
    theta_ = cfg_.scheme == Scheme::ImexMidpoint ? 0.5 * cfg_.dt : cfg_.dt;
    kx_.resize(N_);
    for (std::size_t m = 0; m < N_; ++m) {
      kx_[m] = k[0] * g.xi(0)[m] + k[1] * g.xi(1)[m] + k[2] * g.xi(2)[m];
    }
    Eigen::SparseMatrix<cplx> M = L_->local_matrix().cast<cplx>() * theta_;
    for (std::size_t m = 0; m < N_; ++m) {
      M.coeffRef(static_cast<int>(m), static_cast<int>(m)) += cplx(1.0, theta_ * kx_[m]);
    }
    M.makeCompressed();
    Msp_ = M;
    ilu_.setDroptol(1e-3);
    ilu_.setFillfactor(10);
    ilu_.compute(Msp_);
    if (ilu_.info() != Eigen::Success) throw SolverError("incomplete factorization failed");

    // response of the implicit f-solve to a unit field component
    const auto sm = g.sqrt_mu();
    for (int i = 0; i < 3; ++i) {
      std::vector<cplx> rhs(2 * N_), z(2 * N_, 0.0);
      for (std::size_t m = 0; m < N_; ++m) {
        rhs[m] = g.xi(i)[m] * sm[m];
        rhs[N_ + m] = -rhs[m];
      }
      solve(rhs, z, nullptr);
      z_[i] = std::move(z);
    }
    for (int i = 0; i < 3; ++i) {
      Zj_.col(i) = current_of(z_[i]);
    }
  }

  const Vec3& k() const { return k_; }
  const StepperConfig& config() const { return cfg_; }

  /// Advance `s` by one step in place (time is not touched).
  StepStats step(ModeState& s) const {
    StepStats st;
    const VelocityGrid& g = *L_->grid();
    const auto sm = g.sqrt_mu();
    auto f0 = s.f.values();
    const CVec3 E0 = s.E, B0 = s.B;
    const Eigen::Matrix3cd K = detail::ik_cross_matrix(k_);
    const double th = theta_;

    std::vector<cplx> rhs(2 * N_), y(2 * N_);
    const bool mid = cfg_.scheme == Scheme::ImexMidpoint;
    // midpoint: y = M^{-1}(2 f0 + th E0.c), f1 = y - f0 + th E1.z
    // euler:    f1 = M^{-1}(f0 + th E0.c)
    for (int sp = 0; sp < 2; ++sp) {
      const double q1 = species_sign(sp);
      for (std::size_t m = 0; m < N_; ++m) {
        const cplx Ex = E0[0] * g.xi(0)[m] + E0[1] * g.xi(1)[m] + E0[2] * g.xi(2)[m];
        const std::size_t q = sp * N_ + m;
        rhs[q] = (mid ? 2.0 : 1.0) * f0[q] + th * q1 * Ex * sm[m];
        y[q] = (mid ? 2.0 : 1.0) * f0[q];
      }
    }
    solve(rhs, y, &st);

    if (mid) {
      std::vector<cplx> fp(2 * N_);
      for (std::size_t q = 0; q < 2 * N_; ++q) fp[q] = y[q] - f0[q];
      const CVec3 jp = current_of(fp);
      const CVec3 j0 = current_density(s.f);
      Eigen::Matrix<cplx, 6, 6> A = Eigen::Matrix<cplx, 6, 6>::Zero();
      Eigen::Matrix<cplx, 6, 1> b;
      A.topLeftCorner<3, 3>() = Eigen::Matrix3cd::Identity() + th * th * Zj_;
      A.topRightCorner<3, 3>() = -th * K;
      A.bottomLeftCorner<3, 3>() = th * K;
      A.bottomRightCorner<3, 3>() = Eigen::Matrix3cd::Identity();
      b.head<3>() = E0 + th * (K * B0) - th * j0 - th * jp;
      b.tail<3>() = B0 - th * (K * E0);
      const Eigen::Matrix<cplx, 6, 1> x = A.partialPivLu().solve(b);
      const CVec3 E1 = x.head<3>(), B1 = x.tail<3>();
      for (std::size_t q = 0; q < 2 * N_; ++q) {
        f0[q] = fp[q] + th * (E1[0] * z_[0][q] + E1[1] * z_[1][q] + E1[2] * z_[2][q]);
      }
      s.E = E1;
      s.B = B1;
    } else {
      std::copy(y.begin(), y.end(), f0.begin());
      const CVec3 j1 = current_density(s.f);
      s.E = E0 + cfg_.dt * (K * B0 - j1);
      s.B = B0 - cfg_.dt * (K * s.E);
    }
    return st;
  }

 private:
  CVec3 current_of(std::span<const cplx> f) const {
    const VelocityGrid& g = *L_->grid();
    const auto w = g.weights();
    const auto sm = g.sqrt_mu();
    CVec3 j = CVec3::Zero();
    for (std::size_t m = 0; m < N_; ++m) {
      const cplx d = w[m] * sm[m] * (f[m] - f[N_ + m]);
      for (int i = 0; i < 3; ++i) j[i] += g.xi(i)[m] * d;
    }
    return j;
  }

  // x = M^{-1} r with M = I + theta (L + i xi.k); x holds the initial guess.
  void solve(std::span<const cplx> r, std::span<cplx> x, StepStats* st) const {
    std::vector<cplx> ru(N_), rv(N_), u(N_), v(N_);
    for (std::size_t m = 0; m < N_; ++m) {
      ru[m] = r[m] + r[N_ + m];
      rv[m] = r[m] - r[N_ + m];
      u[m] = x[m] + x[N_ + m];
      v[m] = x[m] - x[N_ + m];
    }
    LinearMap precond = [this](std::span<const cplx> in, std::span<cplx> out) {
      Eigen::Map<const Eigen::VectorXcd> a(in.data(), static_cast<Eigen::Index>(in.size()));
      Eigen::Map<Eigen::VectorXcd> o(out.data(), static_cast<Eigen::Index>(out.size()));
      o = ilu_.solve(a);
    };
    LinearMap Mloc = [this](std::span<const cplx> in, std::span<cplx> out) {
      L_->apply_local(in, out);
      for (std::size_t m = 0; m < N_; ++m) {
        out[m] = in[m] + theta_ * (out[m] + cplx(0.0, kx_[m]) * in[m]);
      }
    };
    LinearMap Msum = [this](std::span<const cplx> in, std::span<cplx> out) {
      std::vector<cplx> nl(N_);
      L_->apply_local(in, out);
      L_->apply_nonlocal(in, nl);
      for (std::size_t m = 0; m < N_; ++m) {
        out[m] = in[m] + theta_ * (out[m] + 2.0 * nl[m] + cplx(0.0, kx_[m]) * in[m]);
      }
    };
    GmresOptions opt{cfg_.linear_tol, 40, 4000};
    const auto rs = gmres(Msum, precond, ru, u, opt);
    GmresOptions optv{std::min(cfg_.linear_tol, 1e-13), 40, 4000};
    const auto rd = gmres(Mloc, precond, rv, v, optv);
    if (!rs.converged || !(rd.converged || rd.rel_residual < 10.0 * cfg_.linear_tol)) {
      throw SolverError("implicit collision-transport solve did not converge");
    }
    for (std::size_t m = 0; m < N_; ++m) {
      x[m] = 0.5 * (u[m] + v[m]);
      x[N_ + m] = 0.5 * (u[m] - v[m]);
    }
    if (st) {
      st->gmres_iterations = rs.iterations + rd.iterations;
      st->gmres_residual = std::max(rs.rel_residual, rd.rel_residual);
    }
  }

  std::shared_ptr<const LinearizedOperator> L_;
  Vec3 k_;
  StepperConfig cfg_;
  std::size_t N_ = 0;
  double theta_ = 0.0;
  std::vector<double> kx_;
  Eigen::SparseMatrix<cplx> Msp_;
  Eigen::IncompleteLUT<cplx> ilu_;
  std::array<std::vector<cplx>, 3> z_;
  Eigen::Matrix3cd Zj_;
};

struct IntegrationSummary {
  ModeState final_state;
  long steps = 0;
  int max_gmres_iterations = 0;
  double max_gauss_E = 0.0;
  double max_gauss_B = 0.0;
  bool constraint_drift = false;
};

using FrameObserver = std::function<void(const ModeState&)>;

/**
 * Integrate s0 to time T with a fixed step. Frames (including the initial
 * one) are passed to `observer` every cfg.save_every steps and at T. Frame
 * times are s0.t + j dt (the last one exactly T); the step count is
 * round((T - s0.t) / dt).
 */
inline IntegrationSummary integrate_mode(const ModeState& s0, const StepperConfig& cfg, double T,
                                         std::shared_ptr<const LinearizedOperator> L,
                                         const FrameObserver& observer = {},
                                         bool emit_initial = true) {
  cfg.validate();
  if (!s0.f.grid() || !s0.f.grid()->same_as(*L->grid())) throw GridMismatch();
  IntegrationSummary out;
  out.final_state = s0;
  ModeState& s = out.final_state;
  const double gE0 = gauss_residual_E(s0), gB0 = gauss_residual_B(s0);
  if (gE0 > cfg.constraint_tol || gB0 > cfg.constraint_tol) {
    throw ParameterError("initial data violate the Gauss constraints");
  }
  const long total = std::lround((T - s0.t) / cfg.dt);
  if (total > cfg.max_steps) throw ParameterError("run exceeds the configured step limit");
  if (observer && emit_initial) observer(s);
  if (total <= 0) return out;
  const ModeStepper stepper(L, s0.k, cfg);
  for (long j = 1; j <= total; ++j) {
    const auto st = stepper.step(s);
    s.t = j == total ? T : s0.t + static_cast<double>(j) * cfg.dt;
    out.max_gmres_iterations = std::max(out.max_gmres_iterations, st.gmres_iterations);
    const double gE = gauss_residual_E(s), gB = gauss_residual_B(s);
    out.max_gauss_E = std::max(out.max_gauss_E, gE);
    out.max_gauss_B = std::max(out.max_gauss_B, gB);
    const double elapsed = s.t - s0.t;
    if (std::max(gE - gE0, gB - gB0) > cfg.constraint_tol * std::max(1.0, elapsed)) {
      out.constraint_drift = true;
    }
    if (observer && (j % cfg.save_every == 0 || j == total)) observer(s);
  }
  out.steps = total;
  return out;
}

/// Convenience wrapper collecting every emitted frame.
inline std::vector<ModeState> integrate_mode_history(const ModeState& s0, const StepperConfig& cfg,
                                                     double T,
                                                     std::shared_ptr<const LinearizedOperator> L) {
  std::vector<ModeState> h;
  integrate_mode(s0, cfg, T, std::move(L), [&](const ModeState& s) { h.push_back(s); });
  return h;
}

/// Piecewise-constant step sizes: stage i runs up to t_end with step dt.
struct Stage {
  double t_end = 0.0;
  double dt = 0.0;
};
using Schedule = std::vector<Stage>;

/**
 * 2 * level_steps steps of dt0, then level_steps steps per doubling of the
 * step up to dt_max, which is kept (shrunk to divide the remainder) until T.
 */
inline Schedule graded_schedule(double dt0, double dt_max, int level_steps, double T) {
  if (!(dt0 > 0.0) || !(dt_max >= dt0) || level_steps <= 0 || !(T > 0.0)) {
    throw ParameterError("invalid step schedule");
  }
  Schedule out;
  double t = 0.0, dt = dt0;
  int steps = 2 * level_steps;
  while (t < T * (1.0 - 1e-12)) {
    if (2.0 * dt > dt_max * (1.0 + 1e-12) || t + steps * dt >= T) {
      const long n = static_cast<long>(std::ceil((T - t) / dt * (1.0 - 1e-12)));
      out.push_back({T, (T - t) / static_cast<double>(n)});
      break;
    }
    t += steps * dt;
    out.push_back({t, dt});
    dt *= 2.0;
    steps = level_steps;
  }
  return out;
}

inline Schedule uniform_schedule(double dt, double T) { return graded_schedule(dt, dt, 1, T); }

/// Integrates through a schedule starting at s0.t (which may fall inside a stage).
inline IntegrationSummary integrate_schedule(const ModeState& s0, const Schedule& sched,
                                             const StepperConfig& base,
                                             std::shared_ptr<const LinearizedOperator> L,
                                             const FrameObserver& observer = {}) {
  IntegrationSummary total;
  total.final_state = s0;
  if (observer) observer(s0);
  for (const auto& st : sched) {
    const ModeState& cur = total.final_state;
    if (cur.t >= st.t_end - 1e-9 * st.dt) continue;
    StepperConfig cfg = base;
    cfg.dt = st.dt;
    auto r = integrate_mode(cur, cfg, st.t_end, L, observer, false);
    total.steps += r.steps;
    total.max_gmres_iterations = std::max(total.max_gmres_iterations, r.max_gmres_iterations);
    total.max_gauss_E = std::max(total.max_gauss_E, r.max_gauss_E);
    total.max_gauss_B = std::max(total.max_gauss_B, r.max_gauss_B);
    total.constraint_drift = total.constraint_drift || r.constraint_drift;
    total.final_state = std::move(r.final_state);
  }
  return total;
}

struct EnergyIdentityReport {
  std::vector<double> interval_residual;  // signed, per interval
  std::vector<double> energy;             // total mode energy per frame
  double max_abs = 0.0;
  double cumulative = 0.0;   // |sum of signed residuals|
  double initial_energy = 0.0;
  double max_increase = 0.0; // largest per-interval energy increase
};

/**
 * d/dt (||f||^2 + |E|^2 + |B|^2) = -2 Re <L f, f>; residual per interval of
 * the trapezoid form of this identity.
 */
inline EnergyIdentityReport energy_identity_check(std::span<const ModeState> history,
                                                  const LinearizedOperator& L) {
  EnergyIdentityReport r;
  std::vector<double> diss;
  for (const auto& s : history) {
    r.energy.push_back(mode_energy(s));
    diss.push_back(inner_product(L.apply(s.f), s.f).real());
  }
  if (!history.empty()) r.initial_energy = r.energy.front();
  double sum = 0.0;
  for (std::size_t n = 0; n + 1 < history.size(); ++n) {
    const double dt = history[n + 1].t - history[n].t;
    const double res = r.energy[n + 1] - r.energy[n] + dt * (diss[n] + diss[n + 1]);
    r.interval_residual.push_back(res);
    r.max_abs = std::max(r.max_abs, std::abs(res));
    r.max_increase = std::max(r.max_increase, r.energy[n + 1] - r.energy[n]);
    sum += res;
  }
  r.cumulative = std::abs(sum);
  return r;
}

/// rho(k) = |k|^2 / (1 + |k|^2)^2
inline double rho_of(const Vec3& k) {
  const double k2 = k.squaredNorm();
  return k2 / ((1.0 + k2) * (1.0 + k2));
}

struct ModeEnergyRow {
  double t = 0.0;
  Vec3 k = Vec3::Zero();
  double f_l2sq = 0.0;     // |f^|^2
  double em_sq = 0.0;      // |[E^, B^]|^2
  double micro_D = 0.0;    // |{I-P} f^|_D^2
  double micro_D_weighted = 0.0;  // |w^ell {I-P} f^|_D^2
  double macro_abc = 0.0;  // |k|^2/(1+|k|^2) (|a+ + a-|^2 + |b|^2 + |c|^2)
  double a_diff = 0.0;     // |a+ - a-|^2
  double E_term = 0.0;     // |E|^2 / (1+|k|^2)
  double B_term = 0.0;     // |k|^2/(1+|k|^2)^2 |B|^2
  double rho_k = 0.0;
  double gauss_E = 0.0;
  double gauss_B = 0.0;
  double weighted_f_l2sq = 0.0;  // |w^ell f^|^2

  /// |f|^2 + |[E, B]|^2
  double M() const { return f_l2sq + em_sq; }
  /// |w^ell f|^2 + |[E, B]|^2
  double M_tilde() const { return weighted_f_l2sq + em_sq; }
};

/// Velocity weight w^ell with w = <xi>^{-(gamma+2)/2}, i.e. w_{-ell/2, 0}.
inline WeightSpec decay_weight(double ell) { return WeightSpec{-0.5 * ell, 0.0, 0.25}; }

inline ModeEnergyRow mode_energy_row(const ModeState& s, double ell,
                                     const CollisionFrequencyField& sigma,
                                     const CollisionParams& p) {
  ModeEnergyRow r;
  r.t = s.t;
  r.k = s.k;
  const auto proj = project_P(s.f);
  const auto& M = proj.macro;
  const double k2 = s.k.squaredNorm();
  r.f_l2sq = norm_sq(s.f);
  r.em_sq = s.E.squaredNorm() + s.B.squaredNorm();
  r.micro_D = dissipation_norm(proj.micro, WeightSpec{}, 0.0, sigma, p);
  r.micro_D_weighted = ell == 0.0 ? r.micro_D
                                  : dissipation_norm(proj.micro, decay_weight(ell), 0.0, sigma, p);
  r.macro_abc = k2 / (1.0 + k2) *
                (std::norm(M.a_plus + M.a_minus) + M.b.squaredNorm() + std::norm(M.c));
  r.a_diff = std::norm(M.a_plus - M.a_minus);
  r.E_term = s.E.squaredNorm() / (1.0 + k2);
  r.B_term = k2 / ((1.0 + k2) * (1.0 + k2)) * s.B.squaredNorm();
  r.rho_k = rho_of(s.k);
  r.gauss_E = gauss_residual_E(s);
  r.gauss_B = gauss_residual_B(s);
  r.weighted_f_l2sq = ell == 0.0 ? r.f_l2sq : weighted_norm_sq(s.f, decay_weight(ell), 0.0, p);
  return r;
}

struct ModeEnergyReport {
  double ell = 0.0;
  std::vector<ModeEnergyRow> rows;
};

inline ModeEnergyReport mode_energy_report(std::span<const ModeState> history, double ell,
                                           const CollisionFrequencyField& sigma,
                                           const CollisionParams& p) {
  ModeEnergyReport rep;
  rep.ell = ell;
  for (const auto& s : history) rep.rows.push_back(mode_energy_row(s, ell, sigma, p));
  return rep;
}

struct EnvelopeFit {
  double eps = 0.0;
  double J = 0.0;
  double M0 = 0.0;
  double residual = 0.0;  // rms of log-residuals
  bool inconclusive = false;
  /// eps * J * rho: asymptotic algebraic rate scale of the envelope
  double rate(double rho) const { return eps * J * rho; }
};

/**
 * Least-squares fit of log M(t) = log M0 - J log(1 + eps rho t). For fixed eps
 * the problem is linear in (log M0, J); eps is found by a coarse scan of
 * log eps followed by Brent refinement. Series that decay by less than 10x are
 * inconclusive.
 */
inline EnvelopeFit envelope_fit(std::span<const double> t, std::span<const double> M, double rho) {
  EnvelopeFit out;
  if (t.size() != M.size() || t.size() < 3) throw InsufficientData("envelope fit needs >= 3 samples");
  double mmax = 0.0, mmin = INFINITY;
  for (double v : M) {
    if (!(v > 0.0)) {
      out.inconclusive = true;
      return out;
    }
    mmax = std::max(mmax, v);
    mmin = std::min(mmin, v);
  }
  if (!(rho > 0.0) || mmax < 10.0 * mmin || M.back() > 0.1 * M.front()) {
    out.inconclusive = true;
    return out;
  }
  const std::size_t n = t.size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::log(M[i]);
  auto solve = [&](double log_eps, double& c0, double& J) {
    const double eps = std::exp(log_eps);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = -std::log1p(eps * rho * t[i]);
      sx += x;
      sy += y[i];
      sxx += x * x;
      sxy += x * y[i];
    }
    const double det = n * sxx - sx * sx;
    J = (n * sxy - sx * sy) / det;
    c0 = (sy - J * sx) / n;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - c0 + J * std::log1p(eps * rho * t[i]);
      ss += r * r;
    }
    return ss;
  };
  double best = INFINITY, best_le = 0.0;
  const double lo = std::log(1e-8), hi = std::log(1e4);
  const int scan = 240;
  for (int i = 0; i <= scan; ++i) {
    const double le = lo + (hi - lo) * i / scan;
    double c0, J;
    const double ss = solve(le, c0, J);
    if (ss < best) {
      best = ss;
      best_le = le;
    }
  }
  const double step = (hi - lo) / scan;
  auto obj = [&](double le) {
    double c0, J;
    return solve(le, c0, J);
  };
  const auto r = boost::math::tools::brent_find_minima(obj, best_le - step, best_le + step, 52);
  double c0, J;
  const double ss = solve(r.first, c0, J);
  out.eps = std::exp(r.first);
  out.J = J;
  out.M0 = std::exp(c0);
  out.residual = std::sqrt(ss / n);
  return out;
}

// Binary checkpoints ---------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'V', 'M', 'L', 'C', 'K', 'P', 'T', '1'};

struct CheckpointHeader {
  double R = 0.0;
  std::int32_t n = 0;
  double gamma = 0.0;
  double c_phi = 0.0;
};

/**
 * Layout (native little-endian): magic[8]; R f64; n i32; gamma f64; C_phi f64;
 * record count u64; per record: k f64[3]; t f64; E f64[6]; B f64[6];
 * f f64[4 n^3] (species-major, re/im interleaved).
 */
inline void write_checkpoint(const std::string& path, const CollisionParams& p,
                             std::span<const ModeState> modes) {
  if (modes.empty()) throw ParameterError("checkpoint needs at least one mode");
  const auto& g = *modes.front().f.grid();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  auto put = [&](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(g.half_width());
  put(static_cast<std::int32_t>(g.points_per_axis()));
  put(p.gamma);
  put(p.c_phi);
  put(static_cast<std::uint64_t>(modes.size()));
  for (const auto& s : modes) {
    if (!s.f.grid()->same_as(g)) throw GridMismatch();
    for (int i = 0; i < 3; ++i) put(s.k[i]);
    put(s.t);
    for (int i = 0; i < 3; ++i) put(s.E[i]);
    for (int i = 0; i < 3; ++i) put(s.B[i]);
    const auto v = s.f.values();
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(cplx)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

struct Checkpoint {
  CheckpointHeader header;
  std::vector<ModeState> modes;
};

/// Reads a checkpoint; the grid is rebuilt from the header unless `grid` matches it.
inline Checkpoint read_checkpoint(const std::string& path, GridPtr grid = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  auto get = [&](auto& v) { is.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  Checkpoint c;
  get(c.header.R);
  get(c.header.n);
  get(c.header.gamma);
  get(c.header.c_phi);
  std::uint64_t count = 0;
  get(count);
  if (!is) throw std::runtime_error("truncated checkpoint header: " + path);
  if (!grid || grid->half_width() != c.header.R || grid->points_per_axis() != c.header.n) {
    grid = build_grid(c.header.R, c.header.n);
  }
  for (std::uint64_t r = 0; r < count; ++r) {
    ModeState s;
    for (int i = 0; i < 3; ++i) get(s.k[i]);
    get(s.t);
    for (int i = 0; i < 3; ++i) get(s.E[i]);
    for (int i = 0; i < 3; ++i) get(s.B[i]);
    s.f = TwoSpeciesField(grid);
    auto v = s.f.values();
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(cplx)));
    if (!is) throw std::runtime_error("truncated checkpoint record: " + path);
    c.modes.push_back(std::move(s));
  }
  return c;
}

}  // namespace vml
