#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "errors.hpp"
#include "geometry.hpp"
#include "quadrature.hpp"

namespace boltzctl {

// sigma(x, v) and k(x, v', v). An isotropic kernel is given through k_iso(x)
// and then k(x, v', v) = k_iso(x).
struct Coefficients {
  std::function<double(const Vec2&, const Vec2&)> sigma;
  std::function<double(const Vec2&, const Vec2&, const Vec2&)> kernel;
  std::function<double(const Vec2&)> k_iso;
  bool kernel_x_independent = false;
  double sigma_sup = 0.0;  // bound used for panel sizing, 0 when unknown
  std::string label = "custom";

  bool isotropic() const { return static_cast<bool>(k_iso); }
  bool scattering() const { return isotropic() || static_cast<bool>(kernel); }
  double k(const Vec2& x, const Vec2& vp, const Vec2& v) const {
    if (k_iso) return k_iso(x);
    if (kernel) return kernel(x, vp, v);
    return 0.0;
  }

  // Constant sigma, isotropic kernel k0 (sigma_s = 2 pi k0).
  static Coefficients constant(double sig, double k0) {
    Coefficients c;
    c.sigma = [sig](const Vec2&, const Vec2&) { return sig; };
    if (k0 != 0.0) c.k_iso = [k0](const Vec2&) { return k0; };
    c.kernel_x_independent = true;
    c.sigma_sup = std::abs(sig);
    c.label = "constant";
    return c;
  }

  // Mean free path eps: sigma = 1/eps, k = 1/(|V| eps).
  static Coefficients diffusive(double eps) {
    auto c = constant(1.0 / eps, 1.0 / (kTwoPi * eps));
    c.label = "diffusive";
    return c;
  }

  // k(theta, theta') = a |theta - theta'|^{-1/2} on angles in [0, 2 pi); the
  // coincident-angle value is the cell average over a width 2 pi / n_v.
  static Coefficients singular_angular(double sig, double a, int n_v) {
    Coefficients c;
    c.sigma = [sig](const Vec2&, const Vec2&) { return sig; };
    const double h = kTwoPi / n_v;
    c.kernel = [a, h](const Vec2&, const Vec2& vp, const Vec2& v) {
      double t1 = std::atan2(vp.y(), vp.x()), t2 = std::atan2(v.y(), v.x());
      if (t1 < 0) t1 += kTwoPi;
      if (t2 < 0) t2 += kTwoPi;
      const double d = std::abs(t1 - t2);
      if (d < 0.5 * h) return a * 2.0 * std::sqrt(2.0 / h);
      return a / std::sqrt(d);
    };
    c.kernel_x_independent = true;
    c.sigma_sup = std::abs(sig);
    c.label = "singular_angular";
    return c;
  }
};

inline double sigma_s(const Coefficients& c, const VelocitySphere& V, const Vec2& x, const Vec2& v) {
  double s = 0;
  for (int j = 0; j < V.n; ++j) s += V.w[j] * c.k(x, v, V.dir[j]);
  return s;
}

inline double sigma_s_prime(const Coefficients& c, const VelocitySphere& V, const Vec2& x, const Vec2& v) {
  double s = 0;
  for (int j = 0; j < V.n; ++j) s += V.w[j] * c.k(x, V.dir[j], v);
  return s;
}

// exp(+- int_0^t sigma(x +- s v, v) ds) by composite 8-point Gauss-Legendre,
// one panel per unit of optical depth.
inline double eval_E(const Coefficients& c, const Vec2& x, const Vec2& v, double t, int sign) {
  if (t < 0) throw ValidationError("eval_E: t outside segment");
  static const GaussRule g = gauss_legendre(8);
  const int P = std::max(1, static_cast<int>(std::ceil(t * std::max(c.sigma_sup, 1.0))));
  double I = 0;
  for (int p = 0; p < P; ++p) {
    const double a = t * p / P, b = t * (p + 1) / P;
    for (int k = 0; k < 8; ++k) {
      const double s = 0.5 * (a + b) + 0.5 * (b - a) * g.x[k];
      I += 0.5 * (b - a) * g.w[k] * c.sigma(x + sign * s * v, v);
    }
  }
  if (sign * I > kLogGuard) throw NumericalFailure("eval_E: exponent beyond log guard");
  return std::exp(sign * I);
}

}  // namespace boltzctl
