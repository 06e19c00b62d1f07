#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "boltzctl/control.hpp"

using namespace boltzctl;

namespace {

LayerSpec small_spec() {
  LayerSpec s;
  s.n_v = 16;
  s.p_center = 16;
  s.p_per_panel = 6;
  return s;
}

double beta_fn(const Vec2& x, const Vec2& v) { return 1.0 + 0.3 * x.x() * v.y() + 0.2 * std::sin(3 * std::atan2(x.y(), x.x())); }

}  // namespace

TEST(LayerNodes, SymmetricAndCoverDiameter) {
  const auto r = annulus_layer_radii(1.0, 2.0, 5);
  const auto p = layer_p_nodes(r, small_spec());
  double s = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p[i].p, -p[p.size() - 1 - i].p);
    EXPECT_EQ(p[i].dp, p[p.size() - 1 - i].dp);
    s += p[i].dp;
  }
  EXPECT_NEAR(s, 4.0, 1e-12);
  // first layer panel carries p_source lines
  EXPECT_EQ(p.size(), 16u + 2 * (16 + 6 * 4));
  auto uniform = small_spec();
  uniform.p_source = 0;
  EXPECT_EQ(layer_p_nodes(r, uniform).size(), 16u + 2 * 6 * 5);
  EXPECT_THROW(layer_p_nodes(r, LayerSpec{.p_center = 1}), ValidationError);
}

TEST(Peel, ReproducesInnerDataAndMatchesInterfaces) {
  const auto c = Coefficients::constant(1.0, 0.005);
  const auto P = make_peel_plan(1.0, 2.0, c, small_spec(), 4);
  ASSERT_TRUE(P.all_certified) << P.min_margin();
  const auto R = layer_peel(P, beta_fn, [](int, const Vec2& x, const Vec2&) { return 0.5 * x.y(); });
  EXPECT_EQ(R.inner_defect, 0.0);
  EXPECT_EQ(R.interface_jump, 0.0);
  EXPECT_LT(R.residual.relative(), 5e-3);
  EXPECT_GT(R.l2_norm, 1.0);
  ASSERT_EQ(R.solutions.size(), 4u);
  // a grazing solution in the outer layer sees the data it was given
  const auto& g = *R.solutions.back().grid;
  for (int s = 0; s < g.n_segs(); ++s)
    if (seg_kind(g.segs[s]) == SegKind::grazing) {
      EXPECT_NEAR(R.solutions.back().u.in[s], 0.5 * g.entry_pos(s).y(), 1e-12);
      break;
    }
}

TEST(Peel, ConstantSolutionOfConservativeProblem) {
  // sigma = sigma_s: u = 1 solves the equation; peeling with beta = 1 and
  // grazing data 1 must return it
  const auto c = Coefficients::constant(0.5, 0.5 / kTwoPi);
  auto sp = small_spec();
  sp.n_r = 4;
  const auto P = make_peel_plan(1.0, 2.0, c, sp, 6);
  const auto R = layer_peel(P, [](const Vec2&, const Vec2&) { return 1.0; },
                            [](int, const Vec2&, const Vec2&) { return 1.0; });
  double err = 0;
  for (auto& L : R.solutions) err = std::max(err, (L.u.val.array() - 1.0).abs().maxCoeff());
  EXPECT_LT(err, 1e-8);
}

TEST(Peel, AutoLayerCountIsMinimal) {
  const auto c = Coefficients::constant(1.0, 0.3 / kTwoPi);
  const auto P = auto_peel_plan(1.0, 2.0, c, small_spec());
  EXPECT_TRUE(P.all_certified);
  EXPECT_TRUE(P.auto_N);
  if (P.N > 1) {
    EXPECT_FALSE(make_peel_plan(1.0, 2.0, c, small_spec(), P.N - 1).all_certified);
  }
}

TEST(Extension, FreeStreamingOracle) {
  GridSpec sp;
  sp.n_v = 16;
  sp.n_r = 4;
  const double sig = 0.8;
  const auto c = Coefficients::constant(sig, 0.0);
  auto u0 = [](const Vec2& x, const Vec2& v) { return 1.0 + x.dot(v); };
  auto gam = [](const Vec2& x, const Vec2&) { return x.x() * x.x(); };
  const auto E = extend_solution(Domain::annulus({0, 0}, 1.0, 1.5), c, sp, u0, gam);
  EXPECT_EQ(E.continuity_defect, 0.0);
  const auto& g = *E.layer.grid;
  double err = 0;
  for (int n = 0; n < g.n_nodes(); ++n) {
    const int s = g.node_seg[n];
    const Segment& sg = g.segs[s];
    const Vec2 v = g.V.dir[sg.vel];
    const double t = g.node_t[n];
    double ref = 0;
    switch (seg_kind(sg)) {
      case SegKind::inner_exit: ref = u0(g.exit_pos(s), v) * std::exp(sig * (sg.len() - t)); break;
      case SegKind::inner_entry: ref = u0(g.entry_pos(s), v) * std::exp(-sig * t); break;
      case SegKind::grazing: ref = gam(g.entry_pos(s), v) * std::exp(-sig * t); break;
    }
    err = std::max(err, std::abs(E.layer.u.val[n] - ref) / std::max(1.0, std::abs(ref)));
  }
  EXPECT_LT(err, 1e-12);
  EXPECT_THROW(extend_solution(Domain::disk({0, 0}, 1.0), c, sp, u0, gam), ValidationError);
}

TEST(Ucp, DifferenceVanishesOnInnerCircle) {
  const auto c = Coefficients::constant(1.0, 0.02);
  const auto P = make_peel_plan(1.0, 2.0, c, small_spec(), 4);
  const auto U = ucp_violation(P, [](const Vec2&, const Vec2&) { return 1.0; },
                               [](const Vec2& x, const Vec2&) { return 1.0 + 0.5 * x.x(); });
  EXPECT_LT(U.inner_trace_norm, 1e-8);
  EXPECT_GT(U.l2_norm, 1e-3);
  EXPECT_LT(U.zero_extension_residual, 5e-3);
}

TEST(LayerTau, AnnulusBoundIsSharp) {
  const auto c = Coefficients::constant(1.0, 0.0);
  auto sp = small_spec();
  sp.p_per_panel = 24;
  const auto P = make_peel_plan(1.0, 2.0, c, sp, 17);
  const auto t = layer_tau_check(P);
  EXPECT_TRUE(t.all_ok);
  for (int k = 0; k < 17; ++k) {
    EXPECT_NEAR(t.bound[k], annulus_sup_tau(P.radii[k], P.radii[k + 1]), 1e-12);
    // lines come within a cosine-node gap of the tangent line
    EXPECT_GT(t.tau_max[k], 0.9 * t.bound[k]);
  }
}

TEST(LayerTau, LevelSetChordBound) {
  LevelSetFn f{[](const Vec2& x) { return x.squaredNorm() - 1.0; }, [](const Vec2& x) -> Vec2 { return 2.0 * x; }, 2.0};
  const int N = 8;
  std::vector<double> lv;
  for (int k = 0; k <= N; ++k) lv.push_back(static_cast<double>(k) / N);
  const auto tau = levelset_layer_tau(f, lv, 4, 2000);
  const double C = level_chord_constant(2.0);
  const auto r = quadratic_level_radii(0.0, 1.0, N);
  for (int k = 0; k < N; ++k) {
    EXPECT_LE(tau[k], C / std::sqrt(N));
    EXPECT_NEAR(tau[k], annulus_sup_tau(r[k], r[k + 1]), 1e-2 * tau[k]);
  }
}

TEST(Diffusive, MollifierHasUnitMass) {
  boost::math::quadrature::tanh_sinh<double> ts;
  EXPECT_NEAR(ts.integrate([](double s) { return mollifier(s); }, -1.0, 1.0), 1.0, 1e-12);
  EXPECT_EQ(mollifier(1.0), 0.0);
  EXPECT_EQ(mollifier(-1.5), 0.0);
  EXPECT_EQ(diffusive_layer_count(1.0), 17);
  EXPECT_EQ(diffusive_layer_count(0.5), 65);
}

TEST(Diffusive, BallisticOracleWithoutScattering) {
  auto sp = small_spec();
  sp.p_source = 48;
  const int N = 4;
  const auto run = diffusive_experiment(1.0, 0.0, sp, N, true);
  EXPECT_TRUE(run.override_warning);
  EXPECT_NEAR(run.phi_norm, 2 * kTwoPi, 1e-3 * 2 * kTwoPi);
  // int_{U_eta} u dxi = 2 |V| int_1^{r1} e^{(sqrt(4 - p^2) - sqrt(r1^2 - p^2))/eps} rho_eta(p) dp
  const double r1 = 1.0 + 1.0 / N, eta = 1.0 / (2.0 * N), mid = 1.0 + eta;
  auto integrand = [&](double p) {
    return std::exp(std::sqrt(4 - p * p) - std::sqrt(r1 * r1 - p * p)) * mollifier((mid - p) / eta) / eta;
  };
  const double ref = 2 * kTwoPi * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 1.0, r1, 10, 1e-12);
  EXPECT_NEAR(run.observable, ref, 1e-3 * ref);
  for (auto& row : run.rows) EXPECT_LT(row.f1_norm, 1e-10 * row.f0_norm);
  ASSERT_EQ(run.rows.size(), static_cast<size_t>(N));
  EXPECT_GT(run.ratio, 1.0);
}

TEST(Diffusive, RejectsUnresolvedSource) {
  auto sp = small_spec();
  sp.p_source = 2;
  EXPECT_THROW(diffusive_experiment(1.0, 0.0, sp, 4), ValidationError);
  EXPECT_THROW(diffusive_experiment(1.0, 0.5, sp, 4), ValidationError);
  EXPECT_THROW(diffusive_experiment(0.0, 0.0, sp, 4), ValidationError);
}
