#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "boltzctl/solver.hpp"

using namespace boltzctl;

namespace {

std::shared_ptr<const PhaseGrid> grid(const Domain& D, int nv, int nr, double sb = 0.0) {
  GridSpec sp;
  sp.n_v = nv;
  sp.n_r = nr;
  sp.sigma_bound = sb;
  return PhaseGrid::build(D, sp);
}

BoundaryField random_boundary(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  auto b = BoundaryField::zeros(g);
  for (int s = 0; s < g.n_segs(); ++s) {
    b.in[s] = U(rng);
    b.out[s] = U(rng);
  }
  return b;
}

TransportProblem problem(std::shared_ptr<const PhaseGrid> g, Coefficients c, BoundarySet C,
                         Strategy st = Strategy::automatic) {
  TransportProblem p;
  p.grid = std::move(g);
  p.coeffs = std::move(c);
  p.set = std::move(C);
  p.strategy = st;
  return p;
}

const auto annulus = Domain::annulus({0, 0}, 1.0, 2.0);

}  // namespace

TEST(Solver, FreeStreamingIsLift) {
  const auto g = grid(annulus, 16, 6);
  Solver S(problem(g, Coefficients::constant(0.7, 0), random_boundary_set(*g, 2)));
  const auto b = random_boundary(*g, 3);
  const auto sol = S.forward(b);
  const auto L = S.ops.L(S.pb.set, b);
  EXPECT_EQ((sol.u.val - L.val).lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(sol.iterations, 0);
  const auto back = S.backward(b);
  EXPECT_EQ((back.u.val - S.ops.L_back(S.pb.set, b).val).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Solver, ZeroDataZeroSolution) {
  const auto g = grid(annulus, 16, 6);
  Solver S(problem(g, Coefficients::constant(1.0, 0.05), BoundarySet::incoming(*g)));
  const auto sol = S.forward(BoundaryField::zeros(*g));
  EXPECT_EQ(sol.u.val.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(S.backward(BoundaryField::zeros(*g)).u.val.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Solver, ConservativeConstantSolution) {
  const auto g = grid(Domain::disk({0, 0}, 2.0), 32, 16);
  for (auto st : {Strategy::direct, Strategy::krylov}) {
    Solver S(problem(g, Coefficients::constant(1.0, 1.0 / kTwoPi), BoundarySet::incoming(*g), st));
    auto one = BoundaryField::zeros(*g);
    one.in.setOnes();
    const auto sol = S.forward(one);
    EXPECT_LT((sol.u.val.array() - 1.0).abs().maxCoeff(), 1e-6) << sol.method;
    EXPECT_LT(sol.residual, 1e-9);
  }
}

TEST(Solver, StrategiesAgree) {
  const auto g = grid(annulus, 16, 6);
  const auto C = random_boundary_set(*g, 7);
  const auto b = random_boundary(*g, 8);
  // small scattering so that iteration is certified
  const auto c = Coefficients::constant(0.3, 0.01);
  Solver it(problem(g, c, C, Strategy::iterate)), di(problem(g, c, C, Strategy::direct)),
      kr(problem(g, c, C, Strategy::krylov));
  ASSERT_TRUE(it.small.certified);
  const auto a = it.forward(b), d = di.forward(b), k = kr.forward(b);
  EXPECT_GT(a.iterations, 1);
  const double scale = d.u.val.lpNorm<Eigen::Infinity>();
  EXPECT_LT((a.u.val - d.u.val).lpNorm<Eigen::Infinity>(), 10 * it.pb.tol_resid * scale);
  EXPECT_LT((k.u.val - d.u.val).lpNorm<Eigen::Infinity>(), 10 * it.pb.tol_resid * scale);
  const auto ab = it.backward(b), db = di.backward(b);
  EXPECT_LT((ab.u.val - db.u.val).lpNorm<Eigen::Infinity>(), 10 * it.pb.tol_resid * db.u.val.lpNorm<Eigen::Infinity>());
}

TEST(Solver, IterationFailsWhenNotContractive) {
  const auto g = grid(annulus, 16, 4);
  // sigma_s > sigma with outgoing data: source iteration blows up
  auto p = problem(g, Coefficients::constant(0.5, 3.0 / kTwoPi), BoundarySet::outgoing(*g), Strategy::iterate);
  p.max_iter = 400;
  Solver S(p);
  EXPECT_FALSE(S.small.certified);
  EXPECT_THROW(S.forward(random_boundary(*g, 1)), NumericalFailure);
}

TEST(Solver, MaximumPrinciple) {
  const auto g = grid(annulus, 16, 6);
  Solver S(problem(g, Coefficients::constant(1.2, 1.0 / kTwoPi), BoundarySet::incoming(*g)));
  auto b = random_boundary(*g, 4);
  b.in = b.in.cwiseAbs();
  const auto u = S.forward(b).u.val;
  EXPECT_GE(u.minCoeff(), -1e-10);
  EXPECT_LE(u.maxCoeff(), b.in.maxCoeff() + 1e-10);
}

TEST(Albedo, FreeStreamingAttenuation) {
  const auto g = grid(annulus, 16, 6);
  Solver S(problem(g, Coefficients::constant(0.9, 0), BoundarySet::incoming(*g)));
  const auto A = S.albedo();
  for (int s = 0; s < g->n_segs(); ++s) EXPECT_NEAR(A.A(s, s), std::exp(-0.9 * g->segs[s].len()), 1e-14);
  EXPECT_EQ((A.A - Eigen::MatrixXd(A.A.diagonal().asDiagonal())).norm(), 0.0);
}

TEST(Albedo, ColumnsMatchSolves) {
  const auto g = grid(annulus, 16, 6);
  Solver S(problem(g, Coefficients::constant(1.0, 0.1), random_boundary_set(*g, 3), Strategy::direct));
  for (bool back : {false, true}) {
    const auto A = S.albedo(back);
    for (int col : {0, 17, g->n_segs() - 1}) {
      auto e = BoundaryField::zeros(*g);
      const bool ex = S.pb.set.exit_selected(col);
      // forward data sits on C; backward data on the complement
      if (ex != back) e.out[col] = 1.0;
      else e.in[col] = 1.0;
      const auto u = S.solve(e, back).u;
      for (int r = 0; r < g->n_segs(); ++r) {
        const bool rex = S.pb.set.exit_selected(r);
        const double tr = (rex != back) ? u.in[r] : u.out[r];
        EXPECT_NEAR(A.A(r, col), tr, 1e-10);
      }
    }
  }
}

TEST(Green, FreeStreamingAndScattering) {
  const auto g = grid(annulus, 16, 8);
  for (double k0 : {0.0, 0.1}) {
    Solver S(problem(g, Coefficients::constant(1.0, k0), random_boundary_set(*g, 5), Strategy::direct));
    EXPECT_EQ(green_residual(S, BoundaryField::zeros(*g), random_boundary(*g, 1)).residual, 0.0);
    for (int t = 0; t < 3; ++t) {
      const auto r = green_residual(S, random_boundary(*g, 10 + t), random_boundary(*g, 20 + t));
      EXPECT_LT(r.residual, 1e-10) << k0;
    }
  }
}

TEST(KernelDiagnostics, SmallScatteringHasTrivialKernel) {
  const auto g = grid(Domain::disk({0, 0}, 1.0), 16, 6);
  Solver S(problem(g, Coefficients::constant(0.5, 0.02), BoundarySet::incoming(*g)));
  ASSERT_TRUE(S.small.certified);
  const auto d = S.kernel_diagnostics();
  for (auto e : d.eigs) EXPECT_GT(std::abs(e - 1.0), 0.5);
  EXPECT_EQ(d.small_sv_count, 0);
  EXPECT_TRUE(d.counts_agree);
  Solver Z(problem(g, Coefficients::constant(0.5, 0), BoundarySet::incoming(*g)));
  const auto z = Z.kernel_diagnostics();
  EXPECT_TRUE(z.eigs.empty());
  EXPECT_EQ(z.small_sv_count, 0);
}

TEST(Gauge, IdentityAndAlbedoInvariance) {
  const auto D = Domain::disk({0, 0}, 1.0);
  const auto g = grid(D, 16, 8, 3.0);
  const auto c = Coefficients::constant(1.0, 0.1);
  const auto same = gauge_transform(c, [](const Vec2&, const Vec2&) { return 1.0; }, true, D);
  const Vec2 x(0.2, 0.1), v(0, 1);
  EXPECT_DOUBLE_EQ(same.sigma(x, v), 1.0);
  EXPECT_DOUBLE_EQ(same.k(x, v, v), c.k(x, v, v));

  // phi = 1 + 0.1 bump, bump = (1 - |x|^2)^3 vanishing on the circle
  auto phi = [](const Vec2& y, const Vec2& w) {
    const double b = std::max(0.0, 1.0 - y.squaredNorm());
    return 1.0 + 0.1 * b * b * b * (1.0 + 0.5 * w.x());
  };
  const auto c2 = gauge_transform(c, phi, false, D);
  const Vec2 vp(1, 0);
  EXPECT_NEAR(c2.k(x, vp, v) / c.k(x, vp, v), phi(x, v) / phi(x, vp), 1e-14);
  const auto A1 = Solver(problem(g, c, BoundarySet::incoming(*g), Strategy::direct)).albedo().A;
  const auto A2 = Solver(problem(g, c2, BoundarySet::incoming(*g), Strategy::direct)).albedo().A;
  EXPECT_LT((A1 - A2).norm() / A1.norm(), 1e-3);
  EXPECT_THROW(gauge_transform(c, [](const Vec2&, const Vec2&) { return 2.0; }, true, D), ValidationError);
}
