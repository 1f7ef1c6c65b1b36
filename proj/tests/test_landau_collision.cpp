#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "vml/landau_collision.hpp"
#include "vml/operator_checks.hpp"

using namespace vml;

namespace {

// (2 C / 3) int_0^inf 4 pi r^2 r^{gamma+2} (2 pi)^{-3/2} e^{-r^2/2} dr
double sigma_origin_oracle(double gamma) {
  auto fn = [gamma](double r) {
    return 4.0 * std::numbers::pi * std::pow(r, gamma + 4.0) * std::pow(2.0 * std::numbers::pi, -1.5) *
           std::exp(-0.5 * r * r);
  };
  return (2.0 / 3.0) *
         boost::math::quadrature::gauss_kronrod<double, 61>::integrate(fn, 0.0, 40.0, 15, 1e-14);
}

std::size_t origin_index(const VelocityGrid& g) {
  const int c = (g.points_per_axis() - 1) / 2;
  return g.index(c, c, c);
}

std::vector<cplx> random_species(const VelocityGrid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> N;
  const double a = N(rng), b = N(rng), c = N(rng), d = N(rng);
  std::vector<cplx> F(g.size());
  for (std::size_t m = 0; m < g.size(); ++m) {
    const Vec3 x = g.node(m);
    F[m] = (a + b * x[0] + c * x[1] * x[2] + d * x.squaredNorm()) * g.mu()[m];
  }
  return F;
}

}  // namespace

TEST(PhiKernel, UnitAxisIsTransverseProjector) {
  const Mat3 p = phi_kernel(Vec3(1, 0, 0), CollisionParams{});
  EXPECT_TRUE(p.isApprox(Vec3(0, 1, 1).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(PhiKernel, ScalesWithSpeed) {
  const Mat3 p = phi_kernel(Vec3(2, 0, 0), CollisionParams{});
  EXPECT_TRUE(p.isApprox(Vec3(0, 0.5, 0.5).asDiagonal().toDenseMatrix(), 1e-15));
}

TEST(PhiKernel, TraceSymmetryAndKernel) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N;
  for (double gamma : {-3.0, -2.5}) {
    const CollisionParams p{gamma, 1.7};
    for (int t = 0; t < 20; ++t) {
      const Vec3 xi(N(rng), N(rng), N(rng));
      const Mat3 phi = phi_kernel(xi, p);
      EXPECT_NEAR(phi.trace(), 2.0 * p.c_phi * std::pow(xi.norm(), gamma + 2.0), 1e-12);
      EXPECT_NEAR((phi - phi.transpose()).norm(), 0.0, 1e-15);
      EXPECT_NEAR((phi * xi).norm(), 0.0, 1e-13);
      Eigen::SelfAdjointEigenSolver<Mat3> es(phi);
      EXPECT_GT(es.eigenvalues()[0], -1e-13);
      EXPECT_GT(es.eigenvalues()[1], 1e-8);
    }
  }
}

TEST(PhiKernel, SingularAtOrigin) {
  EXPECT_THROW(phi_kernel(Vec3::Zero(), CollisionParams{}), SingularPointError);
}

TEST(CollisionParams, RejectsHardPotentials) {
  EXPECT_THROW((CollisionParams{-2.0, 1.0}.validate()), ParameterError);
  EXPECT_THROW((CollisionParams{-3.5, 1.0}.validate()), ParameterError);
  EXPECT_THROW((CollisionParams{-3.0, 0.0}.validate()), ParameterError);
  EXPECT_NO_THROW((CollisionParams{-2.5, 1.0}.validate()));
}

TEST(PXiProjection, Examples) {
  EXPECT_TRUE(p_xi_projection(Vec3(1, 0, 0), Vec3(3, 4, 5)).isApprox(Vec3(3, 0, 0)));
  EXPECT_EQ(p_xi_projection(Vec3(0, 2, 0), Vec3(1, 0, 7)), Vec3::Zero());
  EXPECT_EQ(p_xi_projection(Vec3::Zero(), Vec3(1, 2, 3)), Vec3::Zero());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N;
  for (int t = 0; t < 10; ++t) {
    const Vec3 xi(N(rng), N(rng), N(rng)), u(N(rng), N(rng), N(rng));
    const Vec3 once = p_xi_projection(xi, u);
    EXPECT_NEAR((p_xi_projection(xi, once) - once).norm(), 0.0, 1e-14);
  }
}

TEST(SigmaField, OriginValueMatchesRadialOracle) {
  const auto g = build_grid(7.0, 33);
  for (double gamma : {-3.0, -2.5}) {
    const auto s = sigma_field(g, CollisionParams{gamma, 1.0});
    const Mat3& s0 = s.at(origin_index(*g));
    const double oracle = sigma_origin_oracle(gamma);
    if (gamma == -3.0) {
      EXPECT_NEAR(oracle, 2.0 / 3.0 * std::sqrt(2.0 / std::numbers::pi), 1e-12);
    }
    EXPECT_NEAR(s0(0, 0), oracle, 1e-3) << "gamma " << gamma;
    EXPECT_NEAR(s0(1, 1), oracle, 1e-3);
    EXPECT_NEAR(s0(0, 1), 0.0, 1e-12);
  }
}

TEST(SigmaField, SymmetricAtAllNodes) {
  const auto g = build_grid(7.0, 17);
  const auto s = sigma_field(g, CollisionParams{});
  for (std::size_t m = 0; m < g->size(); ++m) {
    EXPECT_LE((s.at(m) - s.at(m).transpose()).norm(), 1e-15 * s.at(m).norm());
  }
}

TEST(SigmaField, CovariantUnderAxisRotations) {
  const auto g = build_grid(7.0, 17);
  const auto s = sigma_field(g, CollisionParams{});
  const int n = g->points_per_axis();
  // quarter turn about z: (x, y, z) -> (-y, x, z)
  Mat3 Rz;
  Rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 Rx;
  Rx << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  double worst = 0.0, scale = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        const std::size_t m = g->index(i, j, k);
        const std::size_t mz = g->index(n - 1 - j, i, k);
        const std::size_t mx = g->index(i, n - 1 - k, j);
        worst = std::max(worst, (s.at(mz) - Rz * s.at(m) * Rz.transpose()).norm());
        worst = std::max(worst, (s.at(mx) - Rx * s.at(m) * Rx.transpose()).norm());
        scale = std::max(scale, s.at(m).norm());
      }
    }
  }
  EXPECT_LE(worst, 1e-10 * scale);
}

TEST(SigmaField, RadialEigenvectorAtSymmetryNodes) {
  const auto g = build_grid(7.0, 17);
  const auto s = sigma_field(g, CollisionParams{});
  const int n = g->points_per_axis(), c = (n - 1) / 2;
  for (int d = 1; d <= c; ++d) {
    for (const auto& idx : {std::array<int, 3>{c + d, c, c}, std::array<int, 3>{c, c - d, c},
                            std::array<int, 3>{c + d, c + d, c + d}, std::array<int, 3>{c - d, c + d, c}}) {
      const std::size_t m = g->index(idx[0], idx[1], idx[2]);
      const Vec3 xi = g->node(m);
      const Vec3 sx = s.at(m) * xi;
      EXPECT_LE((sx - p_xi_projection(xi, sx)).norm(), 1e-8 * s.at(m).norm() * xi.norm());
    }
  }
}

TEST(SigmaField, AgreesWithContinuumInTheBulk) {
  const auto g = build_grid(7.0, 33);
  const CollisionParams p{};
  const auto s = sigma_field(g, p);
  const int c = 16;
  for (int d : {0, 2, 4, 8}) {
    const std::size_t m = g->index(c + d, c, c);
    const auto ref = sigma_continuum(g->node(m).norm(), p);
    EXPECT_NEAR(s.at(m)(0, 0), d == 0 ? ref.tangential : ref.radial, 2e-3) << d;
    EXPECT_NEAR(s.at(m)(1, 1), ref.tangential, 2e-3) << d;
  }
}

TEST(SigmaContinuum, OriginClosedForm) {
  const auto s = sigma_continuum(0.0, CollisionParams{});
  EXPECT_NEAR(s.radial, 2.0 / 3.0 * std::sqrt(2.0 / std::numbers::pi), 1e-10);
  EXPECT_NEAR(s.tangential, s.radial, 1e-12);
}

TEST(SigmaContinuum, LargeSpeedCoulombAsymptotics) {
  // gamma = -3: radial ~ E|v_perp|^2 |xi|^{-3} = 2 |xi|^{-3}, tangential ~ |xi|^{-1}
  const auto s = sigma_continuum(10.0, CollisionParams{});
  EXPECT_NEAR(s.tangential * 10.0, 1.0, 5e-2);
  EXPECT_NEAR(s.radial * 1000.0, 2.0, 0.1);
}

TEST(ApplyQ, MaxwellianEquilibrium) {
  const auto g = build_grid(7.0, 11);
  std::vector<cplx> mu(g->mu().begin(), g->mu().end());
  const auto q = apply_Q(g, mu, mu, CollisionParams{});
  double qmax = 0.0, mumax = 0.0;
  for (std::size_t m = 0; m < g->size(); ++m) {
    qmax = std::max(qmax, std::abs(q[m]));
    mumax = std::max(mumax, g->mu()[m]);
  }
  EXPECT_LE(qmax, 1e-12 * mumax);
}

TEST(ApplyQ, DivergenceFormTelescopes) {
  const auto g = build_grid(7.0, 11);
  std::mt19937_64 rng(4);
  const auto F = random_species(*g, rng), G = random_species(*g, rng);
  const auto q = apply_Q(g, F, G, CollisionParams{});
  cplx total = 0.0;
  double abs_total = 0.0;
  for (std::size_t m = 0; m < g->size(); ++m) {
    total += g->weight(m) * q[m];
    abs_total += g->weight(m) * std::abs(q[m]);
  }
  EXPECT_LE(std::abs(total), 1e-8 * abs_total);
}

TEST(ApplyQ, MomentumAndEnergyOfSymmetrizedPair) {
  const auto g = build_grid(7.0, 11);
  std::mt19937_64 rng(8);
  const auto F = random_species(*g, rng), G = random_species(*g, rng);
  const CollisionParams p{-2.5, 1.0};
  const auto a = apply_Q(g, F, G, p), b = apply_Q(g, G, F, p);
  const auto c = apply_Q(g, F, F, p);
  // oracle: summing the antisymmetrized pair directly
  CVec3 mom = CVec3::Zero(), mom_self = CVec3::Zero();
  cplx en = 0.0;
  double scale = 0.0;
  for (std::size_t m = 0; m < g->size(); ++m) {
    const Vec3 x = g->node(m);
    const double w = g->weight(m);
    for (int i = 0; i < 3; ++i) {
      mom[i] += w * x[i] * (a[m] + b[m]);
      mom_self[i] += w * x[i] * c[m];
    }
    en += w * x.squaredNorm() * (a[m] + b[m]);
    scale += w * x.squaredNorm() * (std::abs(a[m]) + std::abs(b[m]));
  }
  EXPECT_LE(mom.norm(), 1e-10 * scale);
  EXPECT_LE(mom_self.norm(), 1e-10 * scale);
  EXPECT_LE(std::abs(en), 1e-10 * scale);
}

TEST(ApplyQ, BilinearInEachArgument) {
  const auto g = build_grid(5.0, 9);
  std::mt19937_64 rng(9);
  const auto F = random_species(*g, rng), G = random_species(*g, rng), H = random_species(*g, rng);
  std::vector<cplx> GH(g->size());
  for (std::size_t m = 0; m < g->size(); ++m) GH[m] = 2.0 * G[m] - cplx(0, 1) * H[m];
  const CollisionParams p{};
  const auto q1 = apply_Q(g, F, G, p), q2 = apply_Q(g, F, H, p), q = apply_Q(g, F, GH, p);
  for (std::size_t m = 0; m < g->size(); ++m) {
    EXPECT_NEAR(std::abs(q[m] - (2.0 * q1[m] - cplx(0, 1) * q2[m])), 0.0, 1e-12 * (1.0 + std::abs(q[m])));
  }
}

TEST(ApplyQ, ResourceGuard) {
  const auto g = build_grid(7.0, 11);
  std::vector<cplx> F(g->size(), 1.0);
  EXPECT_THROW(apply_Q(g, F, F, CollisionParams{}, DirectBudget{1e3}), ResourceGuardError);
}

TEST(GammaBilinear, MassAndMomentumInvariants) {
  const auto g = build_grid(7.0, 11);
  std::mt19937_64 rng(12);
  const auto f = random_smooth_field(g, rng, 3), h = random_smooth_field(g, rng, 3);
  const CollisionParams p{};
  const auto G = gamma_bilinear(f, h, p);
  const auto Gff = gamma_bilinear(f, f, p);
  double scale = 0.0;
  cplx mass_plus = 0.0;
  CVec3 mom = CVec3::Zero();
  for (std::size_t m = 0; m < g->size(); ++m) {
    const double ws = g->weight(m) * g->sqrt_mu()[m];
    mass_plus += ws * G(kPlus, m);
    for (int i = 0; i < 3; ++i) mom[i] += ws * g->node(m)[i] * (Gff(kPlus, m) + Gff(kMinus, m));
    scale += ws * (1.0 + g->node(m).norm()) * (std::abs(G(kPlus, m)) + std::abs(Gff(kPlus, m)));
  }
  EXPECT_LE(std::abs(mass_plus), 1e-9 * scale);
  EXPECT_LE(mom.norm(), 1e-9 * scale);
}

TEST(GammaBilinear, ZeroArgument) {
  const auto g = build_grid(5.0, 9);
  std::mt19937_64 rng(13);
  const auto h = random_smooth_field(g, rng, 2);
  const auto G = gamma_bilinear(TwoSpeciesField(g), h, CollisionParams{});
  EXPECT_EQ(norm_sq(G), 0.0);
}

class AssembledOperator : public ::testing::TestWithParam<double> {};

TEST_P(AssembledOperator, NullVectorsAnnihilated) {
  const auto L = assemble_L(build_grid(7.0, 17), CollisionParams{GetParam(), 1.0});
  for (double r : null_residuals(*L)) EXPECT_LE(r, 1e-3);
}

TEST_P(AssembledOperator, SelfAdjointAndNonnegative) {
  const auto L = assemble_L(build_grid(7.0, 13), CollisionParams{GetParam(), 1.0});
  EXPECT_LE(self_adjoint_defect(*L, 5, 21), 1e-10);
  EXPECT_GE(min_rayleigh_quotient(*L, 20, 22), -1e-10);
}

TEST_P(AssembledOperator, MatchesDirectFormula) {
  const auto g = build_grid(7.0, 9);
  const CollisionParams p{GetParam(), 1.0};
  const auto L = assemble_L(g, p);
  std::mt19937_64 rng(23);
  for (int t = 0; t < 3; ++t) {
    const auto f = random_smooth_field(g, rng, 3, true);
    auto d = apply_L_direct(f, p);
    const auto a = L->apply(f);
    d -= a;
    EXPECT_LE(std::sqrt(norm_sq(d) / norm_sq(a)), 1e-10);
  }
}

TEST_P(AssembledOperator, DiagonalMatchesUnitResponses) {
  const auto g = build_grid(7.0, 9);
  const auto L = assemble_L(g, CollisionParams{GetParam(), 1.0});
  const auto d = L->diagonal();
  for (std::size_t m : {std::size_t{0}, g->size() / 2, g->size() - 1, g->index(1, 4, 8)}) {
    TwoSpeciesField e(g);
    e(kMinus, m) = 1.0;
    const auto Le = L->apply(e);
    EXPECT_NEAR(Le(kMinus, m).real(), d[g->size() + m], 1e-10 * std::abs(d[m]));
  }
}

TEST_P(AssembledOperator, LocalPartActsAloneOnSpeciesDifference) {
  const auto g = build_grid(7.0, 11);
  const auto L = assemble_L(g, CollisionParams{GetParam(), 1.0});
  std::mt19937_64 rng(24);
  auto f = random_smooth_field(g, rng, 3);
  for (std::size_t m = 0; m < g->size(); ++m) f(kMinus, m) = -f(kPlus, m);
  const auto Lf = L->apply(f);
  std::vector<cplx> loc(g->size());
  L->apply_local(f.species(kPlus), loc);
  for (std::size_t m = 0; m < g->size(); ++m) EXPECT_NEAR(std::abs(Lf(kPlus, m) - loc[m]), 0.0, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Exponents, AssembledOperator, ::testing::Values(-3.0, -2.5));

TEST(LatticeConvolver, MatchesDirectLatticeSum) {
  const int n = 6;
  const CollisionParams p{};
  const LatticeKernel K(0.4, p);
  LatticeConvolver conv(n, K);
  std::mt19937_64 rng(31);
  std::normal_distribution<double> N;
  const std::size_t V = static_cast<std::size_t>(n) * n * n;
  std::array<std::vector<cplx>, 3> u, out;
  for (int i = 0; i < 3; ++i) {
    u[i].resize(V);
    out[i].resize(V);
    for (auto& z : u[i]) z = cplx(N(rng), N(rng));
  }
  conv.apply({std::span<const cplx>(u[0]), std::span<const cplx>(u[1]), std::span<const cplx>(u[2])},
             {std::span<cplx>(out[0]), std::span<cplx>(out[1]), std::span<cplx>(out[2])});
  double worst = 0.0, scale = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      for (int c = 0; c < n; ++c) {
        CVec3 ref = CVec3::Zero();
        for (int a2 = 0; a2 < n; ++a2) {
          for (int b2 = 0; b2 < n; ++b2) {
            for (int c2 = 0; c2 < n; ++c2) {
              const std::size_t q = (static_cast<std::size_t>(a2) * n + b2) * n + c2;
              const CVec3 v(u[0][q], u[1][q], u[2][q]);
              ref += K(a - a2, b - b2, c - c2).cast<cplx>() * v;
            }
          }
        }
        const std::size_t q = (static_cast<std::size_t>(a) * n + b) * n + c;
        const CVec3 got(out[0][q], out[1][q], out[2][q]);
        worst = std::max(worst, (got - ref).norm());
        scale = std::max(scale, ref.norm());
      }
    }
  }
  EXPECT_LE(worst, 1e-12 * scale);
}

TEST(CoincidentKernel, SelfTermCompletesLatticeSum) {
  // sum over |o| <= M of |o h|^q g(o h) with the origin term approximates the
  // integral of |v|^q g(v) at O(h^{5+q}); without it the error is O(h^{3+q}).
  const CollisionParams p{-2.5, 1.0};
  const double q = p.gamma + 2.0;
  auto integral_error = [&](double h, bool with_origin) {
    const int M = static_cast<int>(std::ceil(9.0 / h));
    double acc = 0.0;
    for (int a = -M; a <= M; ++a) {
      for (int b = -M; b <= M; ++b) {
        for (int c = -M; c <= M; ++c) {
          const Vec3 v(a * h, b * h, c * h);
          const double g = std::exp(-0.5 * v.squaredNorm());
          if (a == 0 && b == 0 && c == 0) {
            if (with_origin) acc += coincident_kernel(h, p).trace() / 2.0 * std::pow(h, 3);
            continue;
          }
          acc += std::pow(v.norm(), q) * g * std::pow(h, 3);
        }
      }
    }
    // exact: 4 pi int r^{2+q} e^{-r^2/2} dr = 4 pi 2^{(1+q)/2} Gamma((3+q)/2)
    const double exact = 4.0 * std::numbers::pi * std::pow(2.0, 0.5 * (1.0 + q)) * std::tgamma(0.5 * (3.0 + q));
    return std::abs(acc - exact);
  };
  const double with = integral_error(0.5, true), without = integral_error(0.5, false);
  EXPECT_LT(with, 0.05 * without);
}
