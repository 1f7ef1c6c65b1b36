#pragma once
/**
 * @file weights_energy.hpp
 * @brief Time-velocity weights, weighted and dissipation norms, the
 *        three-term characterization of the dissipation norm, and the
 *        energy / dissipation ledgers with the derived X(t) norm.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "vml/landau_collision.hpp"
#include "vml/macro_structure.hpp"
#include "vml/mode_state.hpp"
#include "vml/velocity_grid.hpp"

namespace vml {

struct WeightSpec {
  double tau = 0.0;
  double lambda = 0.0;
  double theta = 0.25;

  void validate() const {
    if (!(theta > 0.0 && theta <= 0.25)) throw ParameterError("weight exponent theta must lie in (0, 1/4]");
    if (!(lambda >= 0.0)) throw ParameterError("weight lambda must be nonnegative");
    if (!std::isfinite(tau)) throw ParameterError("weight tau must be finite");
  }
};

/// Japanese bracket <xi> = (1 + |xi|^2)^{1/2}.
inline double bracket(const Vec3& xi) { return std::sqrt(1.0 + xi.squaredNorm()); }

/// w_{tau,lambda}(t, xi) = <xi>^{(gamma+2) tau} exp(lambda <xi>^2 / (1+t)^theta).
inline double weight_eval(const WeightSpec& spec, double t, const Vec3& xi,
                          const CollisionParams& p) {
  if (!(t >= 0.0)) throw ParameterError("weights are defined for t >= 0");
  const double b2 = 1.0 + xi.squaredNorm();
  return std::pow(b2, 0.5 * (p.gamma + 2.0) * spec.tau) *
         std::exp(spec.lambda * b2 / std::pow(1.0 + t, spec.theta));
}

namespace detail {

inline std::vector<double> weight_table(const VelocityGrid& g, const WeightSpec& spec, double t,
                                        const CollisionParams& p) {
  std::vector<double> w2(g.size());
  for (std::size_t m = 0; m < g.size(); ++m) {
    const double w = weight_eval(spec, t, g.node(m), p);
    w2[m] = w * w;
  }
  return w2;
}

inline std::array<TwoSpeciesField, 3> gradients(const TwoSpeciesField& f) {
  return {velocity_gradient(f, 0), velocity_gradient(f, 1), velocity_gradient(f, 2)};
}

}  // namespace detail

/// ||f||^2_{tau,lambda} = sum_s int w^2 |f_s|^2.
inline double weighted_norm_sq(const TwoSpeciesField& f, const WeightSpec& spec, double t,
                               const CollisionParams& p) {
  const auto& g = *f.grid();
  const auto w2 = detail::weight_table(g, spec, t, p);
  const auto q = g.weights();
  double acc = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (std::size_t m = 0; m < g.size(); ++m) acc += q[m] * w2[m] * std::norm(f(s, m));
  }
  return acc;
}

/**
 * |f|^2_{D,tau,lambda} = sum_s int w^2 { sigma^{ij} d_i f conj(d_j f) + sigma^{ij} (xi_i/2)(xi_j/2) |f|^2 }
 * with centered velocity differences.
 */
inline double dissipation_norm(const TwoSpeciesField& f, const WeightSpec& spec, double t,
                               const CollisionFrequencyField& sigma, const CollisionParams& p) {
  if (!sigma.grid() || !f.grid() || !sigma.grid()->same_as(*f.grid())) throw GridMismatch();
  const auto& g = *f.grid();
  const auto w2 = detail::weight_table(g, spec, t, p);
  const auto q = g.weights();
  const auto d = detail::gradients(f);
  double acc = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (std::size_t m = 0; m < g.size(); ++m) {
      const Mat3& S = sigma.at(m);
      const Vec3 xi = g.node(m);
      const CVec3 df(d[0](s, m), d[1](s, m), d[2](s, m));
      const double grad = (df.adjoint() * S * df)(0).real();
      const double zero = 0.25 * xi.dot(S * xi) * std::norm(f(s, m));
      acc += q[m] * w2[m] * (grad + zero);
    }
  }
  return acc;
}

/**
 * Three-term equivalent of the dissipation norm:
 * |(1+|xi|)^{gamma/2} P_xi grad f|^2 + |(1+|xi|)^{(gamma+2)/2} (I-P_xi) grad f|^2
 * + |(1+|xi|)^{(gamma+2)/2} f|^2, each with the weight w^2.
 */
inline double characterization_norm(const TwoSpeciesField& f, const WeightSpec& spec, double t,
                                    const CollisionParams& p) {
  const auto& g = *f.grid();
  const auto w2 = detail::weight_table(g, spec, t, p);
  const auto q = g.weights();
  const auto d = detail::gradients(f);
  double acc = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (std::size_t m = 0; m < g.size(); ++m) {
      const Vec3 xi = g.node(m);
      const double r = xi.norm();
      const CVec3 df(d[0](s, m), d[1](s, m), d[2](s, m));
      CVec3 radial = CVec3::Zero();
      if (r > 0.0) radial = xi.cast<cplx>() * (xi.cast<cplx>().transpose() * df)(0) / (r * r);
      const CVec3 tangential = df - radial;
      const double lo = std::pow(1.0 + r, p.gamma);
      const double hi = std::pow(1.0 + r, p.gamma + 2.0);
      acc += q[m] * w2[m] *
             (lo * radial.squaredNorm() + hi * tangential.squaredNorm() + hi * std::norm(f(s, m)));
    }
  }
  return acc;
}

struct EnergyRequest {
  int N = 0;
  double ell = 0.0;
  double lambda = 0.0;
  double theta = 0.25;
  int max_beta = 2;  // velocity-derivative budget

  void validate() const {
    if (N < 0) throw ParameterError("derivative order N must be nonnegative");
    if (ell < 0.0) throw ParameterError("weight order ell must be nonnegative");
    if (max_beta < 0 || max_beta > 2) {
      throw ParameterError("velocity derivatives are limited to order 2");
    }
    if (lambda > 0.0 && ell - N < 0.0) {
      throw ParameterError("an exponential weight requires ell - N >= 0");
    }
    WeightSpec{0.0, lambda, theta}.validate();
  }
};

using MultiIndex = std::array<int, 3>;

inline int order(const MultiIndex& a) { return a[0] + a[1] + a[2]; }

/// All multi-indices with |a| <= n, in lexicographic order.
inline std::vector<MultiIndex> multi_indices(int n) {
  std::vector<MultiIndex> out;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; i + j <= n; ++j) {
      for (int k = 0; i + j + k <= n; ++k) out.push_back({i, j, k});
    }
  }
  return out;
}

/// |k^alpha|^2 = prod k_i^{2 alpha_i}
inline double k_power_sq(const Vec3& k, const MultiIndex& a) {
  double v = 1.0;
  for (int i = 0; i < 3; ++i) v *= std::pow(k[i] * k[i], a[i]);
  return v;
}

struct LedgerEntry {
  MultiIndex alpha{0, 0, 0}, beta{0, 0, 0};
  double energy = 0.0;       // ||d^alpha_beta f||^2_{|beta|-ell, lambda}
  double dissipation = 0.0;  // ||d^alpha_beta {I-P} f||^2_{D, |beta|-ell, lambda}
  double extra = 0.0;        // ||<xi> d^alpha_beta {I-P} f||^2_{|beta|-ell, lambda}
};

struct EnergyLedger {
  std::vector<LedgerEntry> entries;
  double macro_gradient = 0.0;  // sum_{|alpha|<=N-1} ||grad d^alpha (a+, a-, b, c)||^2
  double a_difference = 0.0;    // ||a+ - a-||^2
  double field_energy = 0.0;    // ||(E, B)||^2_{H^N}
  double field_gradient = 0.0;  // ||grad (E, B)||^2_{H^{N-1}}
  double E_dissipation = 0.0;   // ||E||^2_{H^{N-1}}
  double B_dissipation = 0.0;   // ||grad B||^2_{H^{N-2}}
  double extra_prefactor = 0.0; // lambda / (1+t)^{1+theta}

  double energy() const {
    double e = field_energy;
    for (const auto& x : entries) e += x.energy;
    return e;
  }
  double dissipation() const {
    double d = macro_gradient + a_difference + E_dissipation + B_dissipation;
    for (const auto& x : entries) d += x.dissipation + extra_prefactor * x.extra;
    return d;
  }

  /// this += s * other (same request)
  void accumulate(const EnergyLedger& o, double s) {
    if (entries.empty()) {
      entries = o.entries;
      for (auto& e : entries) e.energy = e.dissipation = e.extra = 0.0;
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      entries[i].energy += s * o.entries[i].energy;
      entries[i].dissipation += s * o.entries[i].dissipation;
      entries[i].extra += s * o.entries[i].extra;
    }
    macro_gradient += s * o.macro_gradient;
    a_difference += s * o.a_difference;
    field_energy += s * o.field_energy;
    field_gradient += s * o.field_gradient;
    E_dissipation += s * o.E_dissipation;
    B_dissipation += s * o.B_dissipation;
    extra_prefactor = o.extra_prefactor;
  }
};

/**
 * Energy functional and dissipation rate components of one Fourier mode:
 * spatial derivatives become powers of ik, velocity derivatives are centered
 * differences. Terms with |beta| above the request's budget are omitted.
 */
inline EnergyLedger energy_ledger(const ModeState& s, const EnergyRequest& req, double t,
                                  const CollisionFrequencyField& sigma,
                                  const CollisionParams& p) {
  req.validate();
  const auto proj = project_P(s.f);
  EnergyLedger led;
  led.extra_prefactor = req.lambda > 0.0 ? req.lambda / std::pow(1.0 + t, 1.0 + req.theta) : 0.0;
  const auto& g = *s.f.grid();

  // velocity derivatives of f and {I-P}f for every |beta| within budget
  const auto betas = multi_indices(std::min(req.N, req.max_beta));
  std::vector<TwoSpeciesField> df, du;
  for (const auto& b : betas) {
    TwoSpeciesField a = s.f, c = proj.micro;
    for (int ax = 0; ax < 3; ++ax) {
      for (int r = 0; r < b[ax]; ++r) {
        a = velocity_gradient(a, ax);
        c = velocity_gradient(c, ax);
      }
    }
    df.push_back(std::move(a));
    du.push_back(std::move(c));
  }
  // <xi> times the weight is the weight with the bracket power raised by one
  std::vector<double> br2(g.size());
  for (std::size_t m = 0; m < g.size(); ++m) br2[m] = 1.0 + g.node(m).squaredNorm();

  for (std::size_t bi = 0; bi < betas.size(); ++bi) {
    const auto& b = betas[bi];
    const int nb = order(b);
    const double gp = p.gamma + 2.0;
    // w_{|beta| - ell, lambda}
    const WeightSpec spec{nb - req.ell, req.lambda, req.theta};
    const double e0 = weighted_norm_sq(df[bi], spec, t, p);
    const double d0 = dissipation_norm(du[bi], spec, t, sigma, p);
    double x0 = 0.0;
    if (req.lambda > 0.0) {
      // <xi>^2 w^2 = w'^2 with tau' = tau + 1/(gamma+2)
      const WeightSpec lifted{spec.tau + 1.0 / gp, spec.lambda, spec.theta};
      x0 = weighted_norm_sq(du[bi], lifted, t, p);
    }
    for (const auto& a : multi_indices(req.N - nb)) {
      const double kp = k_power_sq(s.k, a);
      led.entries.push_back({a, b, kp * e0, kp * d0, kp * x0});
    }
  }

  const auto& M = proj.macro;
  const double k2 = s.k.squaredNorm();
  const double macro = std::norm(M.a_plus) + std::norm(M.a_minus) + M.b.squaredNorm() + std::norm(M.c);
  for (const auto& a : multi_indices(req.N - 1)) led.macro_gradient += k2 * k_power_sq(s.k, a) * macro;
  led.a_difference = std::norm(M.a_plus - M.a_minus);
  const double E2 = s.E.squaredNorm(), B2 = s.B.squaredNorm();
  for (const auto& a : multi_indices(req.N)) led.field_energy += k_power_sq(s.k, a) * (E2 + B2);
  for (const auto& a : multi_indices(req.N - 1)) {
    led.field_gradient += k2 * k_power_sq(s.k, a) * (E2 + B2);
    led.E_dissipation += k_power_sq(s.k, a) * E2;
  }
  for (const auto& a : multi_indices(req.N - 2)) led.B_dissipation += k2 * k_power_sq(s.k, a) * B2;
  return led;
}

/// k-quadrature of per-mode ledgers (x-space ledger of the synthesized snapshot).
inline EnergyLedger energy_ledger(std::span<const ModeState> modes, std::span<const double> k_weights,
                                  const EnergyRequest& req, double t,
                                  const CollisionFrequencyField& sigma, const CollisionParams& p) {
  if (modes.size() != k_weights.size()) throw ParameterError("one quadrature weight per mode required");
  EnergyLedger total;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    total.accumulate(energy_ledger(modes[i], req, t, sigma, p), k_weights[i]);
  }
  if (modes.empty()) total.extra_prefactor = 0.0;
  return total;
}

/// Parameters of the X(t) norm. N1 = ceil(3 N0 / 2), ell1 = ell0 / 2.
struct XNormConfig {
  int N0 = 2;
  double ell0 = 8.0;
  double lambda0 = 0.05;
  double theta = 0.25;
  double eps0 = 0.1;
  int max_beta = 2;

  int N1() const { return (3 * N0 + 1) / 2; }
  double ell1() const { return 0.5 * ell0; }
};

/**
 * Running X(t) from a sequence of snapshots. `ledger(req, frame)` returns the
 * ledger of frame `frame` for the request; the supremum is taken over frames.
 */
inline std::vector<double> x_norm_series(
    std::span<const double> times, const XNormConfig& cfg,
    const std::function<EnergyLedger(const EnergyRequest&, std::size_t)>& ledger) {
  auto energy = [&](int N, double ell, double lambda, std::size_t frame) {
    if (N < 0) return 0.0;
    EnergyRequest r{N, ell, lambda, cfg.theta, std::min(cfg.max_beta, 2)};
    return ledger(r, frame).energy();
  };
  const int N1 = cfg.N1();
  const double l1 = cfg.ell1();
  std::array<double, 4> sup{0.0, 0.0, 0.0, 0.0};
  std::vector<double> X;
  for (std::size_t f = 0; f < times.size(); ++f) {
    const double s = times[f];
    const double g32 = std::pow(1.0 + s, 1.5);
    const double t1 = energy(N1, 0.0, 0.0, f) + g32 * energy(N1 - 2, 0.0, 0.0, f);
    const double t2 = std::pow(1.0 + s, -0.5 * (1.0 + cfg.eps0)) * energy(N1, l1, cfg.lambda0, f) +
                      energy(N1 - 1, l1, cfg.lambda0, f) +
                      g32 * energy(N1 - 3, l1 - 1.0, cfg.lambda0, f);
    const double t3 = energy(cfg.N0, cfg.ell0, cfg.lambda0, f) +
                      g32 * energy(cfg.N0, cfg.ell0 - 1.0, cfg.lambda0, f);
    const auto led = ledger(EnergyRequest{cfg.N0, 0.0, 0.0, cfg.theta, 0}, f);
    const double t4 = std::pow(1.0 + s, 2.0 * (1.0 + cfg.theta)) * led.field_gradient;
    sup[0] = std::max(sup[0], t1);
    sup[1] = std::max(sup[1], t2);
    sup[2] = std::max(sup[2], t3);
    sup[3] = std::max(sup[3], t4);
    X.push_back(sup[0] + sup[1] + sup[2] + sup[3]);
  }
  return X;
}

}  // namespace vml
