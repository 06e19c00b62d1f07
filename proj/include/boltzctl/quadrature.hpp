#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace boltzctl {

struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
};

// Gauss-Legendre nodes and weights on [-1, 1], ascending.
inline GaussRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n < 1");
  GaussRule g;
  g.x.resize(n);
  g.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
    }
    double w = 2.0 / ((1.0 - z * z) * dp * dp);
    g.x[i] = -z;
    g.x[n - 1 - i] = z;
    g.w[i] = w;
    g.w[n - 1 - i] = w;
  }
  if (n % 2 == 1) g.x[n / 2] = 0.0;
  return g;
}

// Lagrange basis values l_j(t) for nodes xs.
inline std::vector<double> lagrange_basis(const std::vector<double>& xs, double t) {
  const int n = static_cast<int>(xs.size());
  std::vector<double> l(n, 1.0);
  for (int j = 0; j < n; ++j)
    for (int m = 0; m < n; ++m)
      if (m != j) l[j] *= (t - xs[m]) / (xs[j] - xs[m]);
  return l;
}

// Reference panel data on [-1, 1]: GL rule with its spectral integration
// and differentiation matrices.
//   S(i,k)  = int_{-1}^{x_i} l_k
//   St(i,k) = int_{x_i}^{1} l_k = w_k - S(i,k)
//   D(i,k)  = l_k'(x_i)
struct PanelRule {
  int q = 0;
  GaussRule gl;
  Eigen::MatrixXd S, St, D;

  explicit PanelRule(int q_ = 4) : q(q_), gl(gauss_legendre(q_)) {
    S = Eigen::MatrixXd::Zero(q, q);
    St.resize(q, q);
    D.resize(q, q);
    for (int i = 0; i < q; ++i) {
      const double a = -1.0, b = gl.x[i];
      for (int m = 0; m < q; ++m) {
        double t = 0.5 * (a + b) + 0.5 * (b - a) * gl.x[m];
        auto l = lagrange_basis(gl.x, t);
        for (int k = 0; k < q; ++k) S(i, k) += 0.5 * (b - a) * gl.w[m] * l[k];
      }
      for (int k = 0; k < q; ++k) St(i, k) = gl.w[k] - S(i, k);
    }
    for (int i = 0; i < q; ++i)
      for (int k = 0; k < q; ++k) {
        if (i == k) {
          double s = 0.0;
          for (int m = 0; m < q; ++m)
            if (m != k) s += 1.0 / (gl.x[k] - gl.x[m]);
          D(i, k) = s;
        } else {
          double num = 1.0, den = 1.0;
          for (int m = 0; m < q; ++m) {
            if (m != k) den *= gl.x[k] - gl.x[m];
            if (m != k && m != i) num *= gl.x[i] - gl.x[m];
          }
          D(i, k) = num / den;
        }
      }
  }
};

struct Node1D {
  double x;
  double w;
};

// Fejer's first rule on a + (b-a)(1-cos psi)/2, psi = (i+1/2) pi/n: exact for
// polynomials of degree < n and clustered toward both ends, which absorbs
// square-root endpoint behaviour of chord lengths.
inline std::vector<Node1D> cosine_panel(double a, double b, int n) {
  std::vector<Node1D> out;
  out.reserve(n);
  const double h = std::numbers::pi / n;
  for (int i = 0; i < n; ++i) {
    const double psi = (i + 0.5) * h;
    double s = 0.0;
    for (int j = 1; j <= n / 2; ++j) s += std::cos(2.0 * j * psi) / (4.0 * j * j - 1.0);
    const double w = 2.0 / n * (1.0 - 2.0 * s);
    out.push_back({a + (b - a) * 0.5 * (1.0 - std::cos(psi)), 0.5 * (b - a) * w});
  }
  return out;
}

// Geometric panel edges on [a, b] refined toward a (toward_a) or b.
inline std::vector<double> graded_edges(double a, double b, bool toward_a, double hmin_rel = 1e-10,
                                        double ratio = 1.6) {
  const double L = b - a;
  std::vector<double> e{0.0};
  double h = hmin_rel * L;
  while (e.back() + h < L / ratio) {
    e.push_back(e.back() + h);
    h *= ratio;
  }
  e.push_back(L);
  std::vector<double> pts(e.size());
  for (size_t i = 0; i < e.size(); ++i)
    pts[i] = toward_a ? a + e[i] : b - e[e.size() - 1 - i];
  if (toward_a) pts.back() = b;
  else pts.front() = a;
  return pts;
}

// Composite GL rule over consecutive edges.
inline std::vector<Node1D> composite_rule(const std::vector<double>& edges, const GaussRule& g) {
  std::vector<Node1D> out;
  out.reserve((edges.size() - 1) * g.x.size());
  for (size_t p = 0; p + 1 < edges.size(); ++p) {
    const double a = edges[p], b = edges[p + 1];
    for (size_t i = 0; i < g.x.size(); ++i)
      out.push_back({0.5 * (a + b) + 0.5 * (b - a) * g.x[i], 0.5 * (b - a) * g.w[i]});
  }
  return out;
}

}  // namespace boltzctl
