#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "vml/decay_lab.hpp"
#include "vml/macro_structure.hpp"
#include "vml/operator_checks.hpp"

using namespace vml;

namespace {

// continuum moment formulas for the macro coefficients
MacroState moment_oracle(const TwoSpeciesField& f) {
  const auto& g = *f.grid();
  MacroState M;
  for (std::size_t m = 0; m < g.size(); ++m) {
    const Vec3 x = g.node(m);
    const double ws = g.weight(m) * g.sqrt_mu()[m];
    const cplx sum = f(kPlus, m) + f(kMinus, m);
    M.a_plus += ws * f(kPlus, m);
    M.a_minus += ws * f(kMinus, m);
    for (int i = 0; i < 3; ++i) M.b[i] += 0.5 * ws * x[i] * sum;
    M.c += ws * (x.squaredNorm() - 3.0) * sum / 12.0;
  }
  return M;
}

double macro_distance(const MacroState& A, const MacroState& B) {
  return std::abs(A.a_plus - B.a_plus) + std::abs(A.a_minus - B.a_minus) + (A.b - B.b).norm() +
         std::abs(A.c - B.c);
}

}  // namespace

TEST(ProjectP, RecoversPureMacroStates) {
  const auto g = build_grid(7.0, 17);
  MacroState M;
  M.a_plus = {1.0, 0.5};
  M.a_minus = -2.0;
  M.b = CVec3(cplx(0.1, 0.0), cplx(0.0, -0.3), cplx(0.7, 0.2));
  M.c = 0.25;
  const auto p = project_P(M.reconstruct(g));
  EXPECT_LE(macro_distance(p.macro, M), 1e-12);
  EXPECT_LE(norm_sq(p.micro), 1e-24);
}

TEST(ProjectP, SingleSpeciesMaxwellian) {
  const auto g = build_grid(7.0, 17);
  const auto f = TwoSpeciesField::from_function(
      g, [](int s, const Vec3& x) { return cplx(s == kPlus ? std::sqrt(maxwellian(x)) : 0.0); });
  const auto p = project_P(f);
  EXPECT_NEAR(std::abs(p.macro.a_plus - 1.0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(p.macro.a_minus), 0.0, 1e-12);
  EXPECT_NEAR(p.macro.b.norm(), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(p.macro.c), 0.0, 1e-12);
}

TEST(ProjectP, MatchesContinuumMomentFormulas) {
  const auto g = build_grid(7.0, 25);
  std::mt19937_64 rng(41);
  for (int t = 0; t < 3; ++t) {
    const auto f = random_smooth_field(g, rng, 4, true);
    EXPECT_LE(macro_distance(project_P(f).macro, moment_oracle(f)), 1e-8);
  }
}

TEST(ProjectP, IdempotentAndOrthogonal) {
  const auto g = build_grid(7.0, 13);
  std::mt19937_64 rng(42);
  const auto f = random_smooth_field(g, rng, 4, true);
  const auto h = random_smooth_field(g, rng, 4, true);
  const auto p = project_P(f);
  const auto pp = project_P(p.Pf);
  auto diff = pp.Pf;
  diff -= p.Pf;
  EXPECT_LE(std::sqrt(norm_sq(diff) / norm_sq(p.Pf)), 1e-12);
  EXPECT_LE(std::abs(inner_product(p.micro, p.Pf)), 1e-12 * norm_sq(f));
  // self-adjoint: <Pf, h> = <f, Ph>
  const auto ph = project_P(h);
  EXPECT_LE(std::abs(inner_product(p.Pf, h) - inner_product(f, ph.Pf)), 1e-12 * norm_sq(f));
  const auto micro_proj = project_P(p.micro);
  EXPECT_LE(macro_distance(micro_proj.macro, MacroState{}), 1e-12 * std::sqrt(norm_sq(f)));
  auto sum = p.Pf;
  sum += p.micro;
  sum -= f;
  EXPECT_LE(norm_sq(sum), 1e-28 * norm_sq(f));
}

TEST(ProjectP, ReconstructRoundTrip) {
  const auto g = build_grid(7.0, 13);
  std::mt19937_64 rng(43);
  const auto p = project_P(random_smooth_field(g, rng, 3, true));
  auto d = p.macro.reconstruct(g);
  d -= p.Pf;
  EXPECT_LE(std::sqrt(norm_sq(d) / norm_sq(p.Pf)), 1e-12);
}

TEST(ThetaLambda, ClosedFormExamples) {
  const auto g = build_grid(7.0, 25);
  const auto shear = TwoSpeciesField::from_function(g, [](int s, const Vec3& x) {
    return cplx(s == kPlus ? x[0] * x[1] * std::sqrt(maxwellian(x)) : 0.0);
  });
  const auto r = theta_lambda(shear);
  EXPECT_NEAR(std::abs(r.Theta[kPlus](0, 1) - 1.0), 0.0, 1e-8);
  EXPECT_NEAR(std::abs(r.Theta[kPlus](1, 0) - 1.0), 0.0, 1e-8);
  EXPECT_NEAR(std::abs(r.Theta[kPlus](0, 0)), 0.0, 1e-8);
  EXPECT_NEAR(r.Theta[kMinus].norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.Lambda[kPlus].norm(), 0.0, 1e-8);

  const auto heat = TwoSpeciesField::from_function(g, [](int s, const Vec3& x) {
    return cplx(s == kMinus ? (x.squaredNorm() - 5.0) * x[0] * std::sqrt(maxwellian(x)) : 0.0);
  });
  // (1/10) E[(|xi|^2 - 5)^2 xi_1^2] = (35 - 50 + 25) / 10
  EXPECT_NEAR(std::abs(theta_lambda(heat).Lambda[kMinus][0] - 1.0), 0.0, 1e-6);

  MacroState M;
  M.c = 1.0;
  const auto rc = theta_lambda(M.reconstruct(g));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(std::abs(rc.Theta[kPlus](i, i) - 2.0), 0.0, 1e-6);
}

TEST(ThetaLambda, LambdaVanishesOnNullSpace) {
  const auto g = build_grid(7.0, 25);
  const auto e = null_vectors(g);
  for (const auto& v : e) {
    const auto r = theta_lambda(v);
    EXPECT_LE(r.Lambda[kPlus].norm() + r.Lambda[kMinus].norm(), 1e-8);
  }
}

TEST(MacroResiduals, NeedThreeFrames) {
  const auto g = build_grid(5.0, 7);
  const auto L = assemble_L(g, CollisionParams{});
  std::vector<ModeState> h(2, ModeState::zero(g, Vec3(1, 0, 0)));
  h[1].t = 0.1;
  EXPECT_THROW(macro_residuals(h, *L), InsufficientData);
}

TEST(MacroResiduals, ZeroHistoryHasZeroResidual) {
  const auto g = build_grid(5.0, 7);
  const auto L = assemble_L(g, CollisionParams{});
  std::vector<ModeState> h;
  for (int i = 0; i < 4; ++i) {
    h.push_back(ModeState::zero(g, Vec3(0.5, 0, 0)));
    h.back().t = 0.1 * i;
  }
  const auto r = macro_residuals(h, *L);
  EXPECT_EQ(r.frames_used, 2u);
  for (int q = 0; q < 5; ++q) EXPECT_EQ(r.family(q).max, 0.0);
}

TEST(MacroResiduals, ShrinkWithTheTimeStep) {
  const auto g = build_grid(7.0, 13);
  const auto L = assemble_L(g, CollisionParams{});
  ExperimentConfig cfg;
  cfg.family = Family::Mixed;
  const auto s0 = init_data(cfg, g, Vec3(0.6, 0.3, 0.0));
  std::array<MacroResidualReport, 2> rep;
  for (int lvl = 0; lvl < 2; ++lvl) {
    StepperConfig sc;
    sc.dt = 0.1 / (1 << lvl);
    rep[lvl] = macro_residuals(integrate_mode_history(s0, sc, 1.0, L), *L);
  }
  for (int q = 0; q < 5; ++q) {
    EXPECT_GT(rep[0].family(q).l2, 0.0);
    EXPECT_GE(std::log2(rep[0].family(q).l2 / rep[1].family(q).l2), 1.0) << "family " << q;
  }
}

TEST(SourceMoments, VanishForZeroData) {
  const auto g = build_grid(5.0, 7);
  const auto r = source_moments(TwoSpeciesField(g), CVec3(1, 2, 3), CVec3(0, 1, 0), CollisionParams{});
  for (int s = 0; s < 2; ++s) {
    EXPECT_EQ(std::abs(r.mass_lhs[s]), 0.0);
    EXPECT_EQ(r.momentum_lhs[s].norm(), 0.0);
    EXPECT_EQ(std::abs(r.energy_lhs[s]), 0.0);
    EXPECT_EQ(r.momentum_rhs[s].norm(), 0.0);
    EXPECT_EQ(std::abs(r.energy_rhs[s]), 0.0);
  }
}

TEST(SourceMoments, BothSidesAgreeOnRandomData) {
  const auto g = build_grid(7.0, 17);
  std::mt19937_64 rng(44);
  const auto f = random_smooth_field(g, rng, 2, true);
  const CVec3 E(cplx(0.3, 0.1), cplx(-0.2, 0.0), cplx(0.05, 0.4));
  const CVec3 B(cplx(0.0, 0.2), cplx(0.5, 0.0), cplx(-0.1, -0.1));
  const auto r = source_moments(f, E, B, CollisionParams{});
  double scale = 0.0;
  for (int s = 0; s < 2; ++s) scale = std::max(scale, r.momentum_lhs[s].norm() + std::abs(r.energy_lhs[s]));
  ASSERT_GT(scale, 0.0);
  for (int s = 0; s < 2; ++s) {
    EXPECT_LE(std::abs(r.mass_lhs[s] - r.mass_rhs[s]), 1e-6 * scale);
    EXPECT_LE((r.momentum_lhs[s] - r.momentum_rhs[s]).norm(), 1e-6 * scale);
    EXPECT_LE(std::abs(r.energy_lhs[s] - r.energy_rhs[s]), 1e-6 * scale);
  }
}
