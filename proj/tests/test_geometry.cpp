#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "boltzctl/geometry.hpp"
#include "boltzctl/phase_grid.hpp"

using namespace boltzctl;

namespace {

// Ray-circle intersection by bisection on |x + t v| - R, independent of the
// closed forms under test.
double bisect_exit(const Vec2& x, const Vec2& v, double R) {
  double lo = 0, hi = 4 * R;
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (lo + hi);
    ((x + m * v).norm() < R ? lo : hi) = m;
  }
  return 0.5 * (lo + hi);
}

LevelSetFn quadratic() {
  return {[](const Vec2& x) { return x.squaredNorm() - 1.0; }, [](const Vec2& x) { return Vec2(2.0 * x); }, 2.0};
}

}  // namespace

TEST(TravelTime, DiskCenter) {
  const auto D = Domain::disk({0, 0}, 2.0);
  for (int i = 0; i < 16; ++i) {
    const Vec2 v = unit_dir(0.3 * i);
    EXPECT_NEAR(travel_time(D, {0, 0}, v, Side::plus), 2.0, 1e-15);
    EXPECT_NEAR(travel_time(D, {0, 0}, v, Side::minus), 2.0, 1e-15);
  }
}

TEST(TravelTime, AnnulusPointOracle) {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  const double t = travel_time(D, {1.5, 0}, {0, 1}, Side::plus);
  EXPECT_NEAR(t, std::sqrt(4.0 - 2.25), 1e-14);
  EXPECT_NEAR(t, bisect_exit({1.5, 0}, {0, 1}, 2.0), 1e-12);
}

TEST(TravelTime, AnnulusSupChord) {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  EXPECT_NEAR(annulus_sup_tau(1.0, 2.0), 2.0 * std::sqrt(3.0), 1e-15);
  // sampled sup approaches the closed form from below
  double m = 0;
  for (int i = 0; i <= 2000; ++i) {
    const double r = 1.0 + i / 2000.0;
    m = std::max(m, chord_tau(D, {r, 0}, {0, 1}));
  }
  EXPECT_NEAR(m, 2.0 * std::sqrt(3.0), 1e-9);
}

TEST(TravelTime, EndpointsOnBoundaryAndConstantAlongLines) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(0, 1);
  const auto D = Domain::annulus({0.2, -0.1}, 0.7, 1.9);
  for (int i = 0; i < 500; ++i) {
    const double r = 0.7 + 1.2 * U(rng), th = kTwoPi * U(rng);
    const Vec2 x = D.center + r * unit_dir(th);
    const Vec2 v = unit_dir(kTwoPi * U(rng));
    const double tp = travel_time(D, x, v, Side::plus), tm = travel_time(D, x, v, Side::minus);
    EXPECT_LT(D.boundary_defect(x + tp * v), 1e-9);
    EXPECT_LT(D.boundary_defect(x - tm * v), 1e-9);
    const double t = (U(rng) - 0.5) * (tp + tm) * 0.9 + 0.5 * (tp - tm);
    EXPECT_NEAR(chord_tau(D, x + t * v, v), tp + tm, 1e-9);
  }
}

TEST(TravelTime, LevelSetMatchesDisk) {
  const auto L = Domain::levelset(quadratic(), 0.44);  // radius 1.2
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-0.8, 0.8);
  for (int i = 0; i < 100; ++i) {
    const Vec2 x(U(rng), U(rng) * 0.5);
    const Vec2 v = unit_dir(4 * U(rng));
    const double t = travel_time(L, x, v, Side::plus);
    EXPECT_NEAR(t, bisect_exit(x, v, 1.2), 1e-7);
    EXPECT_LT(L.boundary_defect(x + t * v), 1e-7);
  }
}

TEST(TravelTime, Errors) {
  const auto D = Domain::disk({0, 0}, 1.0);
  EXPECT_THROW(travel_time(D, {0, 0}, {2, 0}, Side::plus), std::invalid_argument);
  EXPECT_THROW(travel_time(D, {3, 0}, {1, 0}, Side::plus), std::invalid_argument);
  EXPECT_THROW(Domain::annulus({0, 0}, 2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(Domain::disk({0, 0}, 0.0), std::invalid_argument);
}

TEST(Classify, DiskCases) {
  const auto D = Domain::disk({0, 0}, 2.0);
  EXPECT_EQ(classify(D, {2, 0}, {1, 0}), BoundaryClass::outgoing);
  EXPECT_EQ(classify(D, {2, 0}, {-1, 0}), BoundaryClass::incoming);
  EXPECT_EQ(classify(D, {2, 0}, {0, 1}), BoundaryClass::tangential);
}

TEST(Classify, InnerCircleNormalPointsToCenter) {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  EXPECT_EQ(classify(D, {1, 0}, {-1, 0}), BoundaryClass::outgoing);
  EXPECT_EQ(classify(D, {1, 0}, {1, 0}), BoundaryClass::incoming);
}

TEST(GrazingSet, ImpactParameter) {
  EXPECT_TRUE(in_grazing_set({-2, 1.5}, {1, 0}, 1.0));
  EXPECT_FALSE(in_grazing_set({-2, 0}, {1, 0}, 1.0));
  EXPECT_FALSE(in_grazing_set({0, 1.0}, {1, 0}, 1.0));  // tangent line excluded
  const auto f = quadratic();
  EXPECT_TRUE(in_grazing_set({-2, 1.5}, {1, 0}, f, 0.0));
  EXPECT_FALSE(in_grazing_set({-2, 0.5}, {1, 0}, f, 0.0));
}

TEST(Layers, Radii) {
  const auto r = annulus_layer_radii(1.0, 2.0, 4);
  EXPECT_EQ(r.front(), 1.0);
  EXPECT_EQ(r.back(), 2.0);
  EXPECT_DOUBLE_EQ(r[1], 1.25);
  const auto q = quadratic_level_radii(-0.5, 0.0, 2);
  EXPECT_NEAR(q[0], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(q[1], std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(q[2], 1.0, 1e-15);
  EXPECT_EQ(annulus_layer_radii(1.0, 2.0, 1).size(), 2u);
}

TEST(Layers, AnnulusTauBound) {
  for (int N : {1, 4, 16}) {
    const auto r = annulus_layer_radii(1.0, 2.0, N);
    double sup = 0;
    for (int k = 1; k <= N; ++k) {
      const double t = annulus_sup_tau(r[k - 1], r[k]);
      EXPECT_LE(t, annulus_layer_tau_bound(N, k) + 1e-12);
      sup = std::max(sup, t);
    }
    EXPECT_LE(sup, 4.0 / std::sqrt(N) + 1e-12);
  }
  EXPECT_NEAR(annulus_layer_tau_bound(16, 16), std::sqrt(63.0) / 8, 1e-15);
}

TEST(VelocitySphere, WeightsAndSymmetry) {
  const auto V = VelocitySphere::uniform(64);
  double s = 0;
  for (int j = 0; j < V.n; ++j) {
    s += V.w[j];
    EXPECT_NEAR(V.dir[j].norm(), 1.0, 1e-15);
    EXPECT_EQ(V.dir[V.opposite(j)], Vec2(-V.dir[j]));
  }
  EXPECT_NEAR(s, kTwoPi, 1e-12 * kTwoPi);
  EXPECT_THROW(VelocitySphere::uniform(7), std::invalid_argument);
}

TEST(BoundarySet, OneEndpointPerLine) {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  GridSpec sp;
  sp.n_v = 16;
  sp.n_r = 8;
  const auto g = PhaseGrid::build(D, sp);
  for (const auto& C : {BoundarySet::incoming(*g), BoundarySet::outgoing(*g), random_boundary_set(*g, 11)})
    EXPECT_TRUE(check_one_endpoint(*g, C));
  // C_+ = inner exits: lines through the hole get data at the inner circle
  const auto Ck = derive_Cminus(*g, [](const Vec2& x, const Vec2&) { return x.norm() < 1.5; });
  for (int s = 0; s < g->n_segs(); ++s) EXPECT_EQ(Ck.exit_selected(s), g->segs[s].exit_circle == 0);
  EXPECT_TRUE(check_one_endpoint(*g, Ck));
}

TEST(BoundaryNodes, WeightsAndNormals) {
  const auto D = Domain::disk({0, 0}, 2.0);
  GridSpec sp;
  sp.n_v = 16;
  sp.n_r = 8;
  const auto g = PhaseGrid::build(D, sp);
  const auto nodes = boundary_nodes(*g);
  ASSERT_EQ(nodes.size(), 2u * g->n_segs());
  double s = 0;
  for (auto& b : nodes) {
    EXPECT_NEAR(b.nu.norm(), 1.0, 1e-12);
    EXPECT_GE(b.dxi, 0.0);
    EXPECT_EQ(b.cls, b.is_exit ? BoundaryClass::outgoing : BoundaryClass::incoming);
    s += b.dxi;
  }
  // int_Gamma dxi = 2 * |V| * (2R) for a disk
  EXPECT_NEAR(s, 2 * kTwoPi * 4.0, 1e-9);
}
