#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace boltzctl {

using Vec2 = Eigen::Vector2d;

inline constexpr double kTolGraze = 1e-8;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }
inline Vec2 unit_dir(double phi) { return {std::cos(phi), std::sin(phi)}; }

enum class DomainKind { disk, annulus, levelset };
enum class Side { plus, minus };
enum class BoundaryClass { incoming, outgoing, tangential };

// Convex level function with rho(0) = -1, grad rho(0) = 0.
struct LevelSetFn {
  std::function<double(const Vec2&)> rho;
  std::function<Vec2(const Vec2&)> grad;
  double hess_lower = 0.0;  // inf Hess rho(z)(w,w) over X x V
};

struct Domain {
  DomainKind kind = DomainKind::disk;
  Vec2 center = Vec2::Zero();
  double r_in = 0.0;
  double r_out = 1.0;
  LevelSetFn ls;
  double level = 0.0;

  static Domain disk(Vec2 c, double R) {
    if (!(R > 0)) throw std::invalid_argument("disk radius must be positive");
    Domain d;
    d.kind = DomainKind::disk;
    d.center = c;
    d.r_out = R;
    return d;
  }
  static Domain annulus(Vec2 c, double r1, double r2) {
    if (!(r1 > 0 && r1 < r2)) throw std::invalid_argument("annulus needs 0 < r_inner < r_outer");
    Domain d;
    d.kind = DomainKind::annulus;
    d.center = c;
    d.r_in = r1;
    d.r_out = r2;
    return d;
  }
  static Domain levelset(LevelSetFn f, double s) {
    if (!(s > -1.0 && s <= 1.0)) throw std::invalid_argument("level must lie in (-1, 1]");
    if (std::abs(f.rho(Vec2::Zero()) + 1.0) > 1e-12 || f.grad(Vec2::Zero()).norm() > 1e-12)
      throw std::invalid_argument("level function must satisfy rho(0) = -1, grad rho(0) = 0");
    Domain d;
    d.kind = DomainKind::levelset;
    d.ls = std::move(f);
    d.level = s;
    return d;
  }

  bool contains(const Vec2& x, double tol = 1e-9) const {
    if (kind == DomainKind::levelset) return ls.rho(x) <= level + tol;
    const double r = (x - center).norm();
    return r <= r_out + tol && r >= r_in - tol;
  }

  // Outward unit normal at a boundary point.
  Vec2 normal(const Vec2& x) const {
    if (kind == DomainKind::levelset) return ls.grad(x).normalized();
    Vec2 d = x - center;
    const double r = d.norm();
    if (kind == DomainKind::annulus && std::abs(r - r_in) < std::abs(r - r_out)) return -d / r;
    return d / r;
  }

  // Distance-like defect of a boundary point.
  double boundary_defect(const Vec2& x) const {
    if (kind == DomainKind::levelset) return std::abs(ls.rho(x) - level);
    const double r = (x - center).norm();
    double e = std::abs(r - r_out);
    if (kind == DomainKind::annulus) e = std::min(e, std::abs(r - r_in));
    return e;
  }
};

namespace detail {

// Smallest t > tiny with |y + t d|^2 = R^2 entering from outside, or exit
// from inside; returns the exit root of the outer circle.
inline double circle_exit(const Vec2& y, const Vec2& d, double R) {
  const double b = y.dot(d);
  const double c = y.squaredNorm() - R * R;
  const double disc = std::max(b * b - c, 0.0);
  const double sq = std::sqrt(disc);
  // stable form of -b + sq
  double t = b > 0 ? (c >= 0 ? 0.0 : -c / (b + sq)) : -b + sq;
  return std::max(t, 0.0);
}

// First hit of the inner circle along d, or +inf.
inline double circle_entry(const Vec2& y, const Vec2& d, double r) {
  const double b = y.dot(d);
  if (b >= 0) return std::numeric_limits<double>::infinity();
  const double c = y.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc <= 0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  return std::max(c / (-b + sq), 0.0);
}

inline double levelset_exit(const Domain& D, const Vec2& x, const Vec2& d) {
  auto g = [&](double t) { return D.ls.rho(x + t * d) - D.level; };
  const double g0 = g(0.0);
  if (g0 >= -1e-14 && D.ls.grad(x).dot(d) >= 0) return 0.0;
  double lo = 0.0, hi = 1e-3;
  while (g(hi) <= 0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e8) throw std::runtime_error("levelset ray does not leave the domain");
  }
  while (hi - lo > 1e-6) {
    double m = 0.5 * (lo + hi);
    (g(m) <= 0 ? lo : hi) = m;
  }
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 3; ++it) {
    double dg = D.ls.grad(x + t * d).dot(d);
    if (dg <= 0) break;
    t -= g(t) / dg;
  }
  return std::max(t, 0.0);
}

}  // namespace detail

// tau_+(x,v) (side plus) or tau_-(x,v) (side minus).
inline double travel_time(const Domain& D, const Vec2& x, const Vec2& v, Side side) {
  if (std::abs(v.norm() - 1.0) > 1e-12) throw std::invalid_argument("travel_time: non-unit v");
  if (!D.contains(x, 1e-8)) throw std::invalid_argument("travel_time: x outside the domain");
  const Vec2 d = side == Side::plus ? v : Vec2(-v);
  if (D.kind == DomainKind::levelset) return detail::levelset_exit(D, x, d);
  const Vec2 y = x - D.center;
  double t = detail::circle_exit(y, d, D.r_out);
  if (D.kind == DomainKind::annulus) t = std::min(t, detail::circle_entry(y, d, D.r_in));
  return t;
}

inline double chord_tau(const Domain& D, const Vec2& x, const Vec2& v) {
  return travel_time(D, x, v, Side::plus) + travel_time(D, x, v, Side::minus);
}

inline BoundaryClass classify(const Domain& D, const Vec2& x, const Vec2& v, double tol = kTolGraze) {
  const double s = D.normal(x).dot(v);
  if (s > tol) return BoundaryClass::outgoing;
  if (s < -tol) return BoundaryClass::incoming;
  return BoundaryClass::tangential;
}

// Distance from the center to the line x + R v.
inline double impact_parameter(const Vec2& x, const Vec2& v, const Vec2& c = Vec2::Zero()) {
  const Vec2 y = x - c;
  return (y - y.dot(v) * v).norm();
}

// Concentric balls: the whole line misses the inner ball of radius r1.
inline bool in_grazing_set(const Vec2& x, const Vec2& v, double r1, const Vec2& c = Vec2::Zero()) {
  return impact_parameter(x, v, c) > r1;
}

// Level-set version: min of rho along the line stays above s1.
inline bool in_grazing_set(const Vec2& x, const Vec2& v, const LevelSetFn& f, double s1, double span = 10.0) {
  auto g = [&](double t) { return f.rho(x + t * v); };
  double a = -span, b = span;
  const double ir = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ir * (b - a), d = a + ir * (b - a);
  double gc = g(c), gd = g(d);
  for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
    if (gc < gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - ir * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + ir * (b - a);
      gd = g(d);
    }
  }
  return std::min(gc, gd) > s1;
}

struct VelocitySphere {
  int n = 0;
  std::vector<double> angle;
  std::vector<Vec2> dir;
  std::vector<double> w;

  static VelocitySphere uniform(int n) {
    if (n < 2 || n % 2) throw std::invalid_argument("velocity count must be even and >= 2");
    VelocitySphere V;
    V.n = n;
    for (int j = 0; j < n; ++j) {
      V.angle.push_back(kTwoPi * j / n);
      // second half negated exactly so v -> -v is a clean permutation
      V.dir.push_back(j < n / 2 ? unit_dir(kTwoPi * j / n) : Vec2(-unit_dir(kTwoPi * (j - n / 2) / n)));
      V.w.push_back(kTwoPi / n);
    }
    return V;
  }
  int opposite(int j) const { return (j + n / 2) % n; }
};

// Radii of the level sets Z_{k/N}, k = 0..N, for the annulus layering
// B(0, r0 + k (r1 - r0)/N).
inline std::vector<double> annulus_layer_radii(double r0, double r1, int N) {
  if (N < 1) throw std::invalid_argument("N >= 1 required");
  std::vector<double> r(N + 1);
  for (int k = 0; k <= N; ++k) r[k] = r0 + (r1 - r0) * k / N;
  r[N] = r1;
  return r;
}

// Radii of Z_{k/N} for rho(x) = |x|^2 - 1 between levels s0 and s1.
inline std::vector<double> quadratic_level_radii(double s0, double s1, int N) {
  std::vector<double> r(N + 1);
  for (int k = 0; k <= N; ++k) r[k] = std::sqrt(1.0 + s0 + (s1 - s0) * k / N);
  return r;
}

// Exact chord bound in the k-th annulus layer of thickness 1/N starting at
// radius 1.
inline double annulus_layer_tau_bound(int N, int k) {
  return 2.0 / N * std::sqrt(2.0 * N + 2.0 * k - 1.0);
}

// Constant of the layer chord bound for a level function with Hessian lower
// bound C1.
inline double level_chord_constant(double C1) {
  if (!(C1 > 0)) throw std::invalid_argument("Hessian lower bound must be positive");
  return std::max(1.0, (1.0 + std::sqrt(1.0 + 4.0 * C1)) / C1);
}

// Longest chord of an annulus: tangent to the inner circle.
inline double annulus_sup_tau(double r_in, double r_out) { return 2.0 * std::sqrt(r_out * r_out - r_in * r_in); }

}  // namespace boltzctl
