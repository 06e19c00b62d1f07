#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "boltzctl/transport.hpp"

using namespace boltzctl;

namespace {

std::shared_ptr<const PhaseGrid> annulus_grid(int nv = 16, int nr = 8, double sigma_bound = 0.0) {
  GridSpec sp;
  sp.n_v = nv;
  sp.n_r = nr;
  sp.sigma_bound = sigma_bound;
  return PhaseGrid::build(Domain::annulus({0, 0}, 1.0, 2.0), sp);
}

Eigen::VectorXd random_field(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  Eigen::VectorXd u(g.n_nodes());
  for (auto& x : u) x = N(rng);
  return u;
}

BoundaryField random_boundary(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  auto b = BoundaryField::zeros(g);
  for (int s = 0; s < g.n_segs(); ++s) {
    b.in[s] = N(rng);
    b.out[s] = N(rng);
  }
  return b;
}

auto smooth = [](const Vec2& x, const Vec2& v) { return std::sin(x.x() + 0.5 * x.y()) + 0.3 * v.x() * x.y() + 1.0; };

}  // namespace

TEST(EvalE, ClosedForms) {
  const Vec2 x(0, 0), v(1, 0);
  EXPECT_DOUBLE_EQ(eval_E(Coefficients::constant(0, 0), x, v, 1.3, +1), 1.0);
  EXPECT_NEAR(eval_E(Coefficients::constant(0.7, 0), x, v, 1.3, -1), std::exp(-0.91), 1e-14);
  EXPECT_NEAR(eval_E(Coefficients::diffusive(0.5), x, v, 1.0, +1), std::exp(2.0), 1e-13);
  Coefficients c = Coefficients::constant(1.0, 0);
  c.sigma = [](const Vec2& y, const Vec2&) { return y.x() * y.x(); };
  c.sigma_sup = 4;
  EXPECT_NEAR(eval_E(c, x, v, 2.0, +1), std::exp(8.0 / 3.0), 1e-12);
  EXPECT_THROW(eval_E(c, x, v, -1.0, +1), ValidationError);
}

TEST(Coefficients, ScatteringCoefficientsRecomputed) {
  const auto V = VelocitySphere::uniform(32);
  const auto c = Coefficients::diffusive(1.0);
  EXPECT_NEAR(sigma_s(c, V, {0.1, 0}, V.dir[3]), 1.0, 1e-12);
  EXPECT_NEAR(sigma_s_prime(c, V, {0.1, 0}, V.dir[3]), 1.0, 1e-12);
}

TEST(Lift, ConstantAlongLinesAndTraceExact) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(0, 0));
  const auto C = random_boundary_set(*g, 5);
  const auto b = random_boundary(*g, 6);
  const auto u = ops.J(C, b);
  EXPECT_LT(phase_lp(*g, ops.derivative(u.val), std::numeric_limits<double>::infinity()), 1e-10);
  for (int s = 0; s < g->n_segs(); ++s) EXPECT_EQ(C.exit_selected(s) ? u.out[s] : u.in[s], C.exit_selected(s) ? b.out[s] : b.in[s]);
  auto one = BoundaryField::zeros(*g);
  one.in.setOnes();
  one.out.setOnes();
  EXPECT_LT((ops.J(C, one).val.array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(Lift, IsometryInWp) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(0, 0));
  for (const auto& C : {BoundarySet::incoming(*g), BoundarySet::outgoing(*g), random_boundary_set(*g, 1)})
    for (int trial = 0; trial < 5; ++trial) {
      const auto b = random_boundary(*g, 100 + trial);
      const auto u = ops.J(C, b);
      for (double p : {1.0, 2.0}) {
        const double lhs = compute_norm(ops, u, NormKind::W, p);
        const double rhs = boundary_norm(*g, C, b, NormKind::Lp_dxi, p);
        EXPECT_NEAR(lhs, rhs, 1e-8 * rhs);
      }
    }
}

TEST(Norms, ConstantOnBoundaryOfAnnulus) {
  const auto g = annulus_grid();
  auto one = BoundaryField::zeros(*g);
  one.in.setOnes();
  one.out.setOnes();
  const auto C = BoundarySet::incoming(*g);
  EXPECT_NEAR(boundary_norm(*g, C, one, NormKind::Lstar_d2, 1.0), 24 * std::numbers::pi, 1e-10);
  EXPECT_EQ(boundary_norm(*g, C, BoundaryField::zeros(*g), NormKind::Lp_dxi, 2.0), 0.0);
  EXPECT_THROW(boundary_norm(*g, C, one, NormKind::Lp_dxi, 3.0), ValidationError);
}

TEST(Tinv, FreeStreamingIntegralOfOne) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(0, 0));
  const Eigen::VectorXd f = Eigen::VectorXd::Ones(g->n_nodes());
  const auto um = ops.Tinv(BoundarySet::incoming(*g), f);
  const auto up = ops.Tinv(BoundarySet::outgoing(*g), f);
  for (int n = 0; n < g->n_nodes(); ++n) {
    const Vec2 x = g->node_pos(n), v = g->V.dir[g->segs[g->node_seg[n]].vel];
    EXPECT_NEAR(um.val[n], travel_time(g->domain, x, v, Side::minus), 1e-12);
    EXPECT_NEAR(up.val[n], -travel_time(g->domain, x, v, Side::plus), 1e-12);
  }
  EXPECT_EQ(um.in.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(up.out.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Tinv, TransportIdentity) {
  Coefficients c = Coefficients::constant(1.0, 0);
  c.sigma = [](const Vec2& x, const Vec2& v) { return 1.0 + 0.3 * x.x() + 0.2 * v.y(); };
  c.sigma_sup = 2.0;
  const double err_c = [&] {
    const auto g = annulus_grid(16, 16);
    TransportOps ops(g, c);
    const auto f = sample_nodes(*g, smooth);
    const auto C = random_boundary_set(*g, 3);
    const auto u = ops.Tinv(C, f);
    const Eigen::VectorXd su = ops.sigma_times(u.val);
    const Eigen::VectorXd r = ops.derivative(u.val) + su - f;
    // relative to the segment scale: the C_+ branch grows like e^{tau sigma}
    double e = 0;
    for (const auto& s : g->segs) {
      const double scale = su.segment(s.node_begin, s.n_nodes).lpNorm<Eigen::Infinity>() +
                           f.segment(s.node_begin, s.n_nodes).lpNorm<Eigen::Infinity>();
      e = std::max(e, r.segment(s.node_begin, s.n_nodes).lpNorm<Eigen::Infinity>() / scale);
    }
    return e;
  }();
  EXPECT_LT(err_c, 1e-3);
}

TEST(Tinv, LiftingSolvesHomogeneousEquation) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(0.8, 0));
  const auto C = random_boundary_set(*g, 9);
  auto b = BoundaryField::sample(*g, smooth);
  const auto u = ops.L(C, b);
  const Eigen::VectorXd su = ops.sigma_times(u.val);
  const Eigen::VectorXd r = ops.derivative(u.val) + su;
  EXPECT_LT(r.lpNorm<Eigen::Infinity>(), 1e-3 * su.lpNorm<Eigen::Infinity>());
  for (int s = 0; s < g->n_segs(); ++s)
    if (C.exit_selected(s)) EXPECT_EQ(u.out[s], b.out[s]);
    else EXPECT_EQ(u.in[s], b.in[s]);
  // closed form on the incoming branch
  const auto ui = ops.L(BoundarySet::incoming(*g), b);
  for (int n = 0; n < g->n_nodes(); n += 7) {
    const int s = g->node_seg[n];
    EXPECT_NEAR(ui.val[n], b.in[s] * std::exp(-0.8 * g->node_t[n]), 1e-12);
  }
}

TEST(Tinv, DiscreteAdjointness) {
  Coefficients c = Coefficients::constant(1.0, 0);
  c.sigma = [](const Vec2& x, const Vec2& v) { return 1.0 + 0.5 * std::sin(x.y()) + 0.4 * v.x(); };
  c.sigma_sup = 2.0;
  const auto g = annulus_grid(16, 8, 2.0);
  TransportOps ops(g, c);
  for (const auto& C : {BoundarySet::incoming(*g), BoundarySet::outgoing(*g), random_boundary_set(*g, 4)}) {
    const auto f = random_field(*g, 1), h = random_field(*g, 2);
    const double a = ops.inner(ops.Tinv(C, f).val, h);
    const double b = ops.inner(f, ops.Tinv_adj(C, h).val);
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
  }
}

TEST(Tinv, BoundByTauSigma) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(0.6, 0));
  const auto C = random_boundary_set(*g, 8);
  const double tsig = ops.max_tau_sigma;
  const auto tw = tau_power(*g, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_field(*g, 50 + trial);
    for (double p : {1.0, 2.0}) {
      const double lhs = phase_lp(*g, ops.Tinv(C, f).val, p);
      const double rhs = std::exp(tsig) * phase_lp(*g, f, p, &tw);
      EXPECT_LE(lhs, rhs);
    }
  }
}

TEST(Tinv, ParitySymmetryOutgoing) {
  Coefficients c = Coefficients::constant(1.0, 0);
  c.sigma = [](const Vec2& x, const Vec2& v) { return 1.0 + 0.3 * x.x() + 0.2 * v.x() * v.x(); };
  c.sigma_sup = 2.0;
  const auto g = annulus_grid();
  TransportOps ops(g, c);
  const auto C = BoundarySet::outgoing(*g);
  const auto f = random_field(*g, 12);
  Eigen::VectorXd fr(f.size());
  for (int n = 0; n < g->n_nodes(); ++n) fr[n] = f[g->rev_node(n)];
  const auto a = ops.Tinv_adj(C, fr).val;
  const auto b = ops.Tinv(C, f).val;
  double e = 0;
  for (int n = 0; n < g->n_nodes(); ++n) e = std::max(e, std::abs(a[g->rev_node(n)] - b[n]));
  EXPECT_LT(e, 1e-8 * b.lpNorm<Eigen::Infinity>());
}

TEST(K, IsotropicAveragingPreservesConstants) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(1.0, 1.0 / kTwoPi));
  const auto Ku = ops.K(Eigen::VectorXd::Constant(g->n_nodes(), 3.5));
  EXPECT_LT((Ku.array() - 3.5).abs().maxCoeff(), 1e-12);
}

TEST(K, SymmetricInPhaseMeasureAndKillsOddFields) {
  const auto g = annulus_grid();
  TransportOps ops(g, Coefficients::constant(1.0, 0.37));
  const auto a = random_field(*g, 1), b = random_field(*g, 2);
  EXPECT_NEAR(ops.inner(ops.K(a), b), ops.inner(a, ops.K(b)), 1e-12 * a.norm() * b.norm());
  // odd in v at fixed x; K sees velocity averages only
  Eigen::VectorXd vodd = sample_nodes(*g, [](const Vec2& x, const Vec2& v) { return v.x() * (1 + x.y()); });
  EXPECT_LT(ops.K(vodd).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(K, AnisotropicAdjointAndRankOne) {
  Coefficients c = Coefficients::constant(1.0, 0);
  c.kernel = [](const Vec2& x, const Vec2& vp, const Vec2& v) {
    return (1.0 + 0.1 * x.x()) * (1.0 + 0.5 * v.x()) * (1.0 + 0.5 * vp.x()) * (1.0 + 0.3 * vp.y());
  };
  const auto g = annulus_grid();
  TransportOps ops(g, c);
  const auto a = random_field(*g, 3), b = random_field(*g, 4);
  EXPECT_NEAR(ops.inner(ops.K(a), b), ops.inner(a, ops.Kadj(b)), 1e-12 * a.norm() * b.norm());

  // rank one g(v) g(v'): K h(v) = g(v) sum_j' w_j' g(v_j') h(v_j')
  Coefficients r = Coefficients::constant(1.0, 0);
  auto gv = [](const Vec2& v) { return 1.0 + 0.5 * v.x(); };
  r.kernel = [gv](const Vec2&, const Vec2& vp, const Vec2& v) { return gv(v) * gv(vp); };
  r.kernel_x_independent = true;
  TransportOps ro(g, r);
  auto h = [](const Vec2& v) { return v.y() * v.y() + 0.2 * v.x(); };
  double m = 0;
  for (int j = 0; j < g->V.n; ++j) m += g->V.w[j] * gv(g->V.dir[j]) * h(g->V.dir[j]);
  const auto Ku = ro.K(sample_nodes(*g, [&](const Vec2&, const Vec2& v) { return h(v); }));
  double e = 0;
  for (int n = 0; n < g->n_nodes(); ++n) e = std::max(e, std::abs(Ku[n] - gv(g->V.dir[g->segs[g->node_seg[n]].vel]) * m));
  EXPECT_LT(e, 2e-2 * std::abs(m));
}

TEST(Smallness, ZeroKernelAndLayerCertificate) {
  const auto g = annulus_grid();
  const auto r0 = smallness_check(TransportOps(g, Coefficients::constant(1.0, 0)), 1.0);
  EXPECT_TRUE(r0.certified);
  EXPECT_EQ(r0.kappa, 0.0);
  const auto big = smallness_check(TransportOps(g, Coefficients::diffusive(1.0)), 1.0);
  EXPECT_FALSE(big.certified);
  EXPECT_NEAR(big.kappa, 1.0, 1e-12);
  // thin layer of width 1/64 at the outer edge
  GridSpec sp;
  sp.n_v = 16;
  sp.n_r = 2;
  const auto thin = PhaseGrid::build(Domain::annulus({0, 0}, 2.0 - 1.0 / 64, 2.0), sp);
  const auto ok = smallness_check(TransportOps(thin, Coefficients::diffusive(1.0)), 1.0);
  EXPECT_TRUE(ok.certified);
  EXPECT_GT(ok.margin, 0.0);
}

TEST(Smallness, SingularKernelDiagnostics) {
  const auto g = annulus_grid(16, 4);
  const auto p1 = smallness_check(TransportOps(g, Coefficients::singular_angular(0.1, 0.01, 16)), 1.0);
  EXPECT_TRUE(p1.certified);
  double prev = 0;
  for (int nv : {16, 64, 256}) {
    GridSpec sp;
    sp.n_v = nv;
    sp.n_r = 2;
    const auto gg = PhaseGrid::build(Domain::disk({0, 0}, 0.5), sp);
    const auto p2 = smallness_check(TransportOps(gg, Coefficients::singular_angular(0.1, 0.01, nv)), 2.0);
    EXPECT_GT(p2.kappa, prev);
    prev = p2.kappa;
  }
}
