#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "boltzctl/quadrature.hpp"

using namespace boltzctl;

TEST(GaussLegendre, IntegratesPolynomialsExactly) {
  for (int n : {1, 2, 4, 8, 16}) {
    const auto g = gauss_legendre(n);
    for (int deg = 0; deg < 2 * n; ++deg) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += g.w[i] * std::pow(g.x[i], deg);
      const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
      EXPECT_NEAR(s, exact, 1e-14) << n << " " << deg;
    }
  }
}

TEST(GaussLegendre, NodesAreSymmetric) {
  const auto g = gauss_legendre(7);
  for (int i = 0; i < 7; ++i) {
    EXPECT_EQ(g.x[i], -g.x[6 - i]);
    EXPECT_EQ(g.w[i], g.w[6 - i]);
  }
}

TEST(PanelRule, IntegrationMatrixMatchesAntiderivative) {
  PanelRule r(5);
  // f(t) = t^3: int_{-1}^{x} = (x^4 - 1)/4
  for (int i = 0; i < 5; ++i) {
    double s = 0, st = 0, d = 0;
    for (int k = 0; k < 5; ++k) {
      const double f = std::pow(r.gl.x[k], 3);
      s += r.S(i, k) * f;
      st += r.St(i, k) * f;
      d += r.D(i, k) * f;
    }
    const double x = r.gl.x[i];
    EXPECT_NEAR(s, (std::pow(x, 4) - 1) / 4, 1e-14);
    EXPECT_NEAR(st, (1 - std::pow(x, 4)) / 4, 1e-14);
    EXPECT_NEAR(d, 3 * x * x, 1e-12);
  }
}

TEST(CosinePanel, WeightsSumToLength) {
  double s = 0;
  for (auto& n : cosine_panel(-1.0, 3.0, 40)) s += n.w;
  EXPECT_NEAR(s, 4.0, 1e-13);
  // sqrt endpoint behaviour: int_0^1 sqrt(1 - x^2) = pi/4
  double q = 0;
  for (auto& n : cosine_panel(0.0, 1.0, 200)) q += n.w * std::sqrt(1 - n.x * n.x);
  EXPECT_NEAR(q, std::numbers::pi / 4, 1e-5);
}

TEST(CompositeRule, GradedEdgesResolveLogSingularity) {
  const auto e = graded_edges(0.0, 1.0, true);
  EXPECT_EQ(e.front(), 0.0);
  EXPECT_EQ(e.back(), 1.0);
  double s = 0;
  for (auto& n : composite_rule(e, gauss_legendre(10))) s += n.w * std::log(n.x);
  EXPECT_NEAR(s, -1.0, 1e-10);
}
