#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "solver.hpp"

namespace boltzctl {

// Outgoing-trace obstructions: parity structure of T_{Gamma_+}^{-1}, the
// square root R of K, test-function Rayleigh quotients and the count of
// eigenvalues of K T_{Gamma_+}^{-1} above 1 as absorption grows.

inline constexpr double kUnitBallArea = std::numbers::pi;  // c_d for d = 2

// ---- parity --------------------------------------------------------------

struct ParityDecomposition {
  Eigen::VectorXd even, odd;
};

inline void require_v_symmetric(const PhaseGrid& g) {
  if (static_cast<int>(g.rev_seg.size()) != g.n_segs()) throw ValidationError("grid is not v-symmetric");
  for (int s = 0; s < g.n_segs(); ++s) {
    const int r = g.rev_seg[s];
    if (r < 0 || g.rev_seg[r] != s || g.segs[r].n_nodes != g.segs[s].n_nodes) throw ValidationError("grid is not v-symmetric");
  }
}

inline ParityDecomposition parity_project(const PhaseGrid& g, const Eigen::VectorXd& u) {
  require_v_symmetric(g);
  if (u.size() != g.n_nodes()) throw ValidationError("field size does not match the grid");
  ParityDecomposition d;
  d.even.resize(u.size());
  d.odd.resize(u.size());
  for (int n = 0; n < g.n_nodes(); ++n) {
    const double r = u[g.rev_node(n)];
    d.even[n] = 0.5 * (u[n] + r);
    d.odd[n] = 0.5 * (u[n] - r);
  }
  return d;
}

// Relative residuals of the parity identities for T = T_{Gamma_+}^{-1},
// estimated on random fields (max over samples):
//   even:      P_e (T^* - T) P_e
//   even_full: P_e (T^* - T)          (nonzero: the identity needs even input)
//   odd_skew:  P_o (T^* + T) P_o      (the skew-Hermitian form)
//   odd_self:  P_o (T^* - T) P_o      (the form that holds)
struct SymmetryResidual {
  double even = 0.0, even_full = 0.0, odd_skew = 0.0, odd_self = 0.0;
  double sigma_asymmetry = 0.0;  // max |sigma(x,v) - sigma(x,-v)| at nodes
};

inline SymmetryResidual symmetry_check(const TransportOps& ops, int samples = 4, std::uint64_t seed = 1) {
  const PhaseGrid& g = ops.g();
  require_v_symmetric(g);
  const auto Gp = BoundarySet::outgoing(g);
  SymmetryResidual r;
  for (int n = 0; n < g.n_nodes(); ++n) r.sigma_asymmetry = std::max(r.sigma_asymmetry, std::abs(ops.sig[n] - ops.sig[g.rev_node(n)]));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  auto Lnorm = [&](const Eigen::VectorXd& a) { return std::sqrt(std::max(ops.inner(a, a), 0.0)); };
  auto rel = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& scale) {
    const double s = Lnorm(scale);
    return s > 0 ? Lnorm(a) / s : Lnorm(a);
  };
  for (int t = 0; t < samples; ++t) {
    Eigen::VectorXd f(g.n_nodes());
    for (int n = 0; n < g.n_nodes(); ++n) f[n] = U(rng);
    const auto pf = parity_project(g, f);
    auto T = [&](const Eigen::VectorXd& h) { return ops.Tinv(Gp, h, false).val; };
    auto Ts = [&](const Eigen::VectorXd& h) { return ops.Tinv(Gp, h, true).val; };
    {
      const auto a = parity_project(g, Ts(pf.even)).even, b = parity_project(g, T(pf.even)).even;
      r.even = std::max(r.even, rel(a - b, b));
    }
    {
      const auto a = parity_project(g, Ts(f)).even, b = parity_project(g, T(f)).even;
      r.even_full = std::max(r.even_full, rel(a - b, b));
    }
    {
      const auto a = parity_project(g, Ts(pf.odd)).odd, b = parity_project(g, T(pf.odd)).odd;
      r.odd_skew = std::max(r.odd_skew, rel(a + b, b));
      r.odd_self = std::max(r.odd_self, rel(a - b, b));
    }
  }
  return r;
}

// ---- square root of K ------------------------------------------------------

// K is local in x: at each point it is the velocity matrix
// K_v(j, j') = w_j' k(x, v_j', v_j), selfadjoint for the weights w when k is
// symmetric. R_v = W^{-1/2} sqrt(W^{1/2} K_v W^{-1/2}) W^{1/2}.
struct SqrtK {
  std::vector<Eigen::MatrixXd> R, K;  // one block when the kernel is x-independent
  std::vector<Vec2> points;
  double min_eig = 0.0;     // most negative eigenvalue before clipping
  double clip = 0.0;        // largest clipped magnitude
  double asymmetry = 0.0;   // max |S - S^T| / |S|

  const Eigen::MatrixXd& block(int i) const { return R.size() == 1 ? R[0] : R[i]; }
  const Eigen::MatrixXd& kblock(int i) const { return K.size() == 1 ? K[0] : K[i]; }
  double square_error() const {
    double e = 0;
    for (size_t i = 0; i < R.size(); ++i) e = std::max(e, (R[i] * R[i] - K[i]).norm());
    return e;
  }
};

inline SqrtK sqrt_K(const Coefficients& c, const VelocitySphere& V, const std::vector<Vec2>& xs, double tol = 1e-10) {
  SqrtK out;
  out.points = c.kernel_x_independent ? std::vector<Vec2>{xs.empty() ? Vec2::Zero() : xs[0]} : xs;
  const int nv = V.n;
  Eigen::VectorXd sw(nv), isw(nv);
  for (int j = 0; j < nv; ++j) {
    sw[j] = std::sqrt(V.w[j]);
    isw[j] = 1.0 / sw[j];
  }
  for (const Vec2& x : out.points) {
    Eigen::MatrixXd Kv(nv, nv);
    for (int j = 0; j < nv; ++j)
      for (int jp = 0; jp < nv; ++jp) Kv(j, jp) = V.w[jp] * c.k(x, V.dir[jp], V.dir[j]);
    Eigen::MatrixXd S = sw.asDiagonal() * Kv * isw.asDiagonal();
    const double sn = std::max(S.norm(), 1e-300);
    out.asymmetry = std::max(out.asymmetry, (S - S.transpose()).norm() / sn);
    if ((S - S.transpose()).norm() > tol * std::max(1.0, sn)) throw ValidationError("kernel is not symmetric; K is not selfadjoint");
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    Eigen::VectorXd lam = es.eigenvalues();
    out.min_eig = std::min(out.min_eig, lam.minCoeff());
    if (lam.minCoeff() < -tol * std::max(1.0, sn))
      throw NumericalFailure("K is not positive semidefinite: min eigenvalue " + std::to_string(lam.minCoeff()));
    // roundoff-level eigenvalues are zero so that projectors are their own roots
    const double floor = 1e-14 * std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    for (int i = 0; i < nv; ++i) {
      if (lam[i] < 0) out.clip = std::max(out.clip, -lam[i]);
      if (lam[i] < floor) lam[i] = 0;
    }
    const Eigen::MatrixXd Rs = es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    out.R.push_back(isw.asDiagonal() * Rs * sw.asDiagonal());
    out.K.push_back(Kv);
  }
  return out;
}

inline SqrtK sqrt_K(const Coefficients& c, const PhaseGrid& g, double tol = 1e-10) {
  std::vector<Vec2> xs;
  for (int i = 0; i < g.cells.n_cells; ++i) xs.push_back(g.cells.position(i));
  return sqrt_K(c, g.V, xs, tol);
}

// ---- double quadrature over balls ------------------------------------------

struct Ball {
  Vec2 c = Vec2::Zero();
  double r = 0.0;
};

struct QuadOptions {
  int n_r = 10;      // radial GL points per ball
  int n_t = 24;      // angles per ball
  int n_theta = 64;  // directions around x for the coincident ball
  int n_rho = 12;    // GL points along each direction
  int n_sig = 4;     // GL points for the optical depth along x -> y
};

// sum_i w_i e^{E_i} kept as m e^{shift}
struct Scaled {
  double m = 0.0;
  double shift = 0.0;
  double value() const { return m * std::exp(shift); }
  double log_abs() const { return std::log(std::abs(m)) + shift; }
};

using ScatterFn = std::function<double(const Vec2& x, const Vec2& v)>;

namespace detail {

struct BallRule {
  std::vector<Vec2> x;
  std::vector<double> w;
};

inline BallRule ball_rule(const Ball& b, int n_r, int n_t) {
  BallRule R;
  const auto gr = gauss_legendre(n_r);
  for (int i = 0; i < n_r; ++i) {
    const double r = 0.5 * b.r * (1 + gr.x[i]);
    const double wr = 0.5 * b.r * gr.w[i] * r;
    for (int m = 0; m < n_t; ++m) {
      const double th = kTwoPi * (m + 0.5 * (i % 2)) / n_t;
      R.x.push_back(b.c + r * unit_dir(th));
      R.w.push_back(wr * kTwoPi / n_t);
    }
  }
  return R;
}

// int_0^1 sigma(x + e (y - x), v) de by Gauss-Legendre
inline double mean_sigma(const Coefficients& c, const Vec2& x, const Vec2& y, const Vec2& v, const GaussRule& g) {
  double s = 0;
  for (size_t i = 0; i < g.x.size(); ++i) s += 0.5 * g.w[i] * c.sigma(x + 0.5 * (1 + g.x[i]) * (y - x), v);
  return s;
}

}  // namespace detail

// J(Bi, Bj) = int_{x in Bi} int_{y in Bj} e^{|y-x| <sigma>} s(x, v) s(y, v) / |y - x| dx dy,
// v = (y - x)/|y - x|, scaled by e^{-shift}.
inline double ball_pair_integral(const Coefficients& c, const ScatterFn& s, const Ball& Bi, const Ball& Bj, double shift,
                                 const QuadOptions& q = {}) {
  const auto gs = gauss_legendre(q.n_sig);
  const auto X = detail::ball_rule(Bi, q.n_r, q.n_t);
  double acc = 0;
  const bool same = (Bi.c - Bj.c).norm() == 0.0 && Bi.r == Bj.r;
  if (!same) {
    const auto Y = detail::ball_rule(Bj, q.n_r, q.n_t);
    for (size_t a = 0; a < X.x.size(); ++a)
      for (size_t b = 0; b < Y.x.size(); ++b) {
        const Vec2 d = Y.x[b] - X.x[a];
        const double L = d.norm();
        const Vec2 v = d / L;
        const double E = L * detail::mean_sigma(c, X.x[a], Y.x[b], v, gs) - shift;
        acc += X.w[a] * Y.w[b] * std::exp(E) * s(X.x[a], v) * s(Y.x[b], v) / L;
      }
    return acc;
  }
  // polar coordinates around x: the 1/|y - x| factor cancels the Jacobian
  const auto gr = gauss_legendre(q.n_rho);
  for (size_t a = 0; a < X.x.size(); ++a) {
    const Vec2 y0 = X.x[a] - Bi.c;
    double inner = 0;
    for (int m = 0; m < q.n_theta; ++m) {
      const Vec2 v = unit_dir(kTwoPi * (m + 0.5) / q.n_theta);
      const double b = y0.dot(v);
      const double rmax = -b + std::sqrt(std::max(b * b - (y0.squaredNorm() - Bi.r * Bi.r), 0.0));
      const double sx = s(X.x[a], v);
      double line = 0;
      for (int i = 0; i < q.n_rho; ++i) {
        const double rho = 0.5 * rmax * (1 + gr.x[i]);
        const Vec2 y = X.x[a] + rho * v;
        const double E = rho * detail::mean_sigma(c, X.x[a], y, v, gs) - shift;
        line += 0.5 * rmax * gr.w[i] * std::exp(E) * s(y, v);
      }
      inner += line * sx;
    }
    acc += X.w[a] * inner * kTwoPi / q.n_theta;
  }
  return acc;
}

// sigma_s'(x, v) = int k(x, v', v) dv' on the velocity set of n_v points.
inline ScatterFn scatter_fn(const Coefficients& c, int n_v = 64) {
  if (c.isotropic()) return [c](const Vec2& x, const Vec2&) { return kTwoPi * c.k_iso(x); };
  const auto V = VelocitySphere::uniform(n_v);
  return [c, V](const Vec2& x, const Vec2& v) { return sigma_s_prime(c, V, x, v); };
}

// ---- test functions and Rayleigh quotients -----------------------------------

struct TestFunctionPair {
  Vec2 x0 = Vec2::Zero(), y0 = Vec2::Zero();
  double eta = 0.0;
};

inline void validate_pair(const Domain& D, const TestFunctionPair& P) {
  if (D.kind != DomainKind::disk) throw ValidationError("Rayleigh quotients need a convex disk domain");
  const double d = (P.x0 - P.y0).norm();
  if (!(P.eta > 0)) throw ValidationError("ball radius must be positive");
  if (!(P.eta < d / 4)) throw ValidationError("balls overlap: eta must be below |x0 - y0|/4");
  for (const Vec2& c : {P.x0, P.y0})
    if ((c - D.center).norm() + P.eta > D.r_out) throw ValidationError("test ball leaves the domain");
}

struct BallBounds {
  double sig_inf = 0, sig_sup = 0, s_inf = 0, s_sup = 0;
};

inline BallBounds ball_bounds(const Coefficients& c, const ScatterFn& s, const std::vector<Ball>& balls, int n_v = 32) {
  BallBounds b{std::numeric_limits<double>::infinity(), 0.0, std::numeric_limits<double>::infinity(), 0.0};
  const auto V = VelocitySphere::uniform(n_v);
  for (const Ball& B : balls) {
    const auto R = detail::ball_rule(B, 4, 8);
    std::vector<Vec2> pts = R.x;
    pts.push_back(B.c);
    for (const Vec2& x : pts)
      for (int j = 0; j < V.n; ++j) {
        const double sg = c.sigma(x, V.dir[j]), sv = std::abs(s(x, V.dir[j]));
        b.sig_inf = std::min(b.sig_inf, sg);
        b.sig_sup = std::max(b.sig_sup, std::abs(sg));
        b.s_inf = std::min(b.s_inf, sv);
        b.s_sup = std::max(b.s_sup, sv);
      }
  }
  return b;
}

// Lower bound for <T^{-1} psi, psi> in d = 2 as printed (c_d = pi).
inline double tinv_lower_bound(double dist, double eta, const BallBounds& b) {
  const double pre = 4.0 * kUnitBallArea * kUnitBallArea * std::pow(eta, 4) / dist * std::exp(dist * b.sig_inf / 2) * b.s_inf * b.s_inf;
  const double corr = dist * b.s_sup * b.s_sup / (kUnitBallArea * eta * b.s_inf * b.s_inf) * std::exp(2 * eta * b.sig_sup - dist * b.sig_inf / 2);
  return pre * (1.0 - corr);
}

// Lower bound for <R T^{-1} R phi, phi>/|phi|^2 in d = 2 as printed.
inline double r_lower_bound(double dist, double eta, const BallBounds& b) {
  const double pre = 2.0 * kUnitBallArea * eta * eta / dist * std::exp(dist * b.sig_inf / 2) * b.s_inf * b.s_inf / b.s_sup;
  const double corr = dist * b.s_sup * b.s_sup / (kUnitBallArea * eta * b.s_inf * b.s_inf) * std::exp(2 * eta * b.sig_sup - dist * b.sig_inf / 2);
  return pre * (1.0 - corr);
}

struct RayleighTinv {
  double value = 0.0;       // <T^{-1} psi, psi>
  double log_abs = 0.0;
  double bound = 0.0;       // lower bound for <T^{-1} psi, psi>
  bool bound_positive = false;
  bool exceeds_bound = false;
  BallBounds bounds;
};

inline RayleighTinv rayleigh_Tinv(const Domain& D, const Coefficients& c, const TestFunctionPair& P,
                                  const QuadOptions& q = {}, ScatterFn s = {}) {
  validate_pair(D, P);
  if (!s) s = scatter_fn(c);
  const Ball B0{P.x0, P.eta}, B1{P.y0, P.eta};
  RayleighTinv r;
  r.bounds = ball_bounds(c, s, {B0, B1});
  const double dist = (P.x0 - P.y0).norm();
  const double shift = std::max(0.0, r.bounds.sig_sup * (dist + 2 * P.eta) - kLogGuard / 2);
  const double m = -(ball_pair_integral(c, s, B0, B0, shift, q) + ball_pair_integral(c, s, B1, B1, shift, q)) +
                   ball_pair_integral(c, s, B0, B1, shift, q) + ball_pair_integral(c, s, B1, B0, shift, q);
  const Scaled v{m, shift};
  r.value = v.value();
  r.log_abs = m != 0 ? v.log_abs() : -std::numeric_limits<double>::infinity();
  r.bound = tinv_lower_bound(dist, P.eta, r.bounds);
  r.bound_positive = r.bound > 0;
  r.exceeds_bound = r.value >= r.bound;
  return r;
}

struct McEstimate {
  double mean = 0.0, stderr_ = 0.0;
  long samples = 0;
};

// Stratified Monte Carlo for <T^{-1} psi, psi>: the four ball-pair blocks are
// sampled separately; coincident blocks in polar coordinates around x.
inline McEstimate mc_rayleigh_Tinv(const Domain& D, const Coefficients& c, const TestFunctionPair& P, long n = 1000000,
                                   std::uint64_t seed = 42, ScatterFn s = {}) {
  validate_pair(D, P);
  if (!s) s = scatter_fn(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto gs = gauss_legendre(4);
  const double area = kUnitBallArea * P.eta * P.eta;
  auto in_ball = [&](const Vec2& cc) -> Vec2 { return cc + P.eta * std::sqrt(U(rng)) * unit_dir(kTwoPi * U(rng)); };
  const long m = std::max<long>(n / 4, 2);
  McEstimate out;
  double var = 0;
  const Vec2 cs[2] = {P.x0, P.y0};
  for (int blk = 0; blk < 4; ++blk) {
    const int i = blk / 2, j = blk % 2;
    const double sign = i == j ? -1.0 : 1.0;
    double s1 = 0, s2 = 0;
    for (long t = 0; t < m; ++t) {
      const Vec2 x = in_ball(cs[i]);
      double f = 0;
      if (i == j) {
        const Vec2 v = unit_dir(kTwoPi * U(rng));
        const double rho = 2 * P.eta * U(rng);
        const Vec2 y = x + rho * v;
        if ((y - cs[i]).norm() < P.eta)
          f = area * kTwoPi * 2 * P.eta * std::exp(rho * detail::mean_sigma(c, x, y, v, gs)) * s(x, v) * s(y, v);
      } else {
        const Vec2 y = in_ball(cs[j]);
        const Vec2 d = y - x;
        const double L = d.norm();
        const Vec2 v = d / L;
        f = area * area * std::exp(L * detail::mean_sigma(c, x, y, v, gs)) * s(x, v) * s(y, v) / L;
      }
      s1 += f;
      s2 += f * f;
    }
    const double mean = s1 / m;
    out.mean += sign * mean;
    var += (s2 / m - mean * mean) / (m - 1);
  }
  out.stderr_ = std::sqrt(var);
  out.samples = 4 * m;
  return out;
}

struct RayleighR {
  double quotient = 0.0;       // <R T^{-1} R phi, phi>/|phi|^2 by double quadrature
  double phi_norm2 = 0.0;      // <K chi, chi>
  double bound = 0.0;          // lower bound for the R quotient as printed
  double bound_with_V = 0.0;   // the same with the |V| factor of |phi|^2
  bool bound_positive = false;
  bool exceeds_bound = false;
  // discrete phase-grid values
  double discrete_matrix = 0.0;  // psi = R (R chi)
  double discrete_kernel = 0.0;  // psi = K chi
  double forms_gap = 0.0;        // relative difference of the two
};

// |phi|^2 = <K chi, chi> = int_{B0 u B1} int_V sigma_s'(x, v) dv dx
inline double phi_norm2(const Coefficients& c, const TestFunctionPair& P, int n_v = 64) {
  const auto V = VelocitySphere::uniform(n_v);
  const ScatterFn s = scatter_fn(c, n_v);
  double acc = 0;
  for (const Vec2& x0 : {P.x0, P.y0}) {
    const auto R = detail::ball_rule({x0, P.eta}, 10, 24);
    for (size_t a = 0; a < R.x.size(); ++a)
      for (int j = 0; j < V.n; ++j) acc += R.w[a] * V.w[j] * s(R.x[a], V.dir[j]);
  }
  return acc;
}

inline RayleighR rayleigh_R(const Domain& D, const Coefficients& c, const TestFunctionPair& P, const QuadOptions& q = {},
                            std::shared_ptr<const PhaseGrid> g = nullptr) {
  validate_pair(D, P);
  const auto T = rayleigh_Tinv(D, c, P, q);
  RayleighR r;
  r.phi_norm2 = phi_norm2(c, P);
  if (!(r.phi_norm2 > 0)) throw ValidationError("test function has zero norm");
  r.quotient = T.value / r.phi_norm2;
  const double dist = (P.x0 - P.y0).norm();
  r.bound = r_lower_bound(dist, P.eta, T.bounds);
  r.bound_with_V = r.bound / kTwoPi;
  r.bound_positive = r.bound > 0;
  r.exceeds_bound = r.quotient >= r.bound;
  if (g) {
    const auto sq = sqrt_K(c, *g);
    TransportOps ops(g, c);
    const int nv = g->V.n;
    std::vector<Eigen::VectorXd> r1, rr1, k1;
    for (size_t b = 0; b < sq.R.size(); ++b) {
      const Eigen::VectorXd one = Eigen::VectorXd::Ones(nv);
      r1.push_back(sq.R[b] * one);
      rr1.push_back(sq.R[b] * r1.back());
      k1.push_back(sq.K[b] * one);
    }
    Eigen::VectorXd phi(g->n_nodes()), psiR(g->n_nodes()), psiK(g->n_nodes());
    for (int n = 0; n < g->n_nodes(); ++n) {
      const Vec2 x = g->node_pos(n);
      const double chi = ((x - P.x0).norm() < P.eta ? 1.0 : 0.0) - ((x - P.y0).norm() < P.eta ? 1.0 : 0.0);
      const int j = g->segs[g->node_seg[n]].vel;
      int cell = 0;
      if (sq.R.size() > 1) {
        const auto st = g->cells.stencil(x);
        cell = st.idx[static_cast<int>(std::max_element(st.w.begin(), st.w.end()) - st.w.begin())];
      }
      const size_t b = sq.R.size() == 1 ? 0 : cell;
      phi[n] = chi * r1[b][j];
      psiR[n] = chi * rr1[b][j];
      psiK[n] = chi * k1[b][j];
    }
    const auto Gp = BoundarySet::outgoing(*g);
    const double den = ops.inner(phi, phi);
    if (!(den > 0)) throw ValidationError("test function vanishes on the grid");
    r.discrete_matrix = ops.inner(ops.Tinv(Gp, psiR).val, psiR) / den;
    r.discrete_kernel = ops.inner(ops.Tinv(Gp, psiK).val, psiK) / den;
    r.forms_gap = std::abs(r.discrete_matrix - r.discrete_kernel) / std::max(std::abs(r.discrete_kernel), 1e-300);
  }
  return r;
}

// ---- point family and eigenvalue count ------------------------------------

struct ZFamily {
  Vec2 x0 = Vec2::Zero();
  double r = 0.0;
  int N = 0;
  std::vector<Vec2> z;  // z_1..z_N then z_{N+1}..z_{2N}
  double alpha = 0.0;   // numerical alpha(N, r)
  double min_dist = 0.0;
  double antipodal_gap = 0.0;  // 2r - max non-antipodal distance
};

// alpha(N, r) is the largest value satisfying both separation conditions,
// capped at r.
inline ZFamily make_z_family(const Vec2& x0, double r, int N, Vec2 v1 = {1, 0}, Vec2 v2 = {0, 1}) {
  if (N < 1) throw ValidationError("family size must be >= 1");
  if (!(r > 0)) throw ValidationError("family radius must be positive");
  ZFamily F;
  F.x0 = x0;
  F.r = r;
  F.N = N;
  for (int l = 1; l <= N; ++l)
    F.z.push_back(x0 + r * std::cos(l * std::numbers::pi / N) * v1 + r * std::sin(l * std::numbers::pi / N) * v2);
  for (int l = 0; l < N; ++l) F.z.push_back(2.0 * x0 - F.z[l]);
  F.min_dist = std::numeric_limits<double>::infinity();
  double far = 0;
  for (int m = 0; m < 2 * N; ++m)
    for (int n = 0; n < 2 * N; ++n) {
      if (m == n) continue;
      const double d = (F.z[m] - F.z[n]).norm();
      F.min_dist = std::min(F.min_dist, d);
      if (std::abs(m - n) != N) far = std::max(far, d);
    }
  F.antipodal_gap = 2 * r - far;
  F.alpha = std::min({F.min_dist, F.antipodal_gap, r});
  return F;
}

// gamma_1, gamma_2 of the N-eigenvalue argument in d = 2.
inline double gamma1(double C, double alpha, double r, double M1, double M2, double M3) {
  const double pre = std::pow(2.0, -4) * kUnitBallArea * alpha * alpha * std::exp(C * r) / r * M1 * M1 / M2;
  return pre * (1.0 - 2.0 * r * M2 * M2 / (kUnitBallArea * alpha * M1 * M1) * std::exp((alpha - 4 * r) / 4 * C + M3 * alpha / 2));
}
inline double gamma2(double C, double alpha, double r, double M1, double M2, double M3) {
  const double pre = 0.5 * alpha * std::exp(-M3 * r + alpha / 4 * (C + M3)) * std::pow(M1, 3) / (r * std::pow(M2, 3));
  return pre * (1.0 - 2.0 * r * M2 * M2 * std::exp((alpha - 4 * r) / 4 * C + M3 * alpha / 2) / (kUnitBallArea * alpha * M1 * M1));
}
// Off-diagonal Rayleigh bound (normalized test functions), d = 2.
inline double offdiag_bound(double C, double alpha, double r, double M1, double M2, double M3) {
  return kUnitBallArea / 8 * std::exp((r - alpha / 4) * (C + M3)) * alpha * M2 * M2 / M1;
}

// Normalized Rayleigh matrix <R T^{-1} R phi_l, phi_k>/(|phi_l||phi_k|) for
// phi_l = R(chi_{B(z_{l+N})} - chi_{B(z_l)}), balls of radius alpha/4.
inline Eigen::MatrixXd z_rayleigh_matrix(const Domain& D, const Coefficients& c, const ZFamily& F, const QuadOptions& q = {}) {
  const int N = F.N;
  const double rb = F.alpha / 4;
  std::vector<Ball> B;
  for (const Vec2& z : F.z) {
    if ((z - D.center).norm() + rb > D.r_out) throw ValidationError("family ball of radius alpha/4 leaves the domain");
    B.push_back({z, rb});
  }
  const ScatterFn s = scatter_fn(c);
  const auto bb = ball_bounds(c, s, B);
  const double shift = std::max(0.0, bb.sig_sup * (2 * F.r + 2 * rb) - kLogGuard / 2);
  Eigen::MatrixXd J(2 * N, 2 * N);
  for (int i = 0; i < 2 * N; ++i)
    for (int j = 0; j < 2 * N; ++j) J(i, j) = ball_pair_integral(c, s, B[i], B[j], shift, q);
  std::vector<double> nrm(N);
  for (int l = 0; l < N; ++l) nrm[l] = std::sqrt(phi_norm2(c, {F.z[l + N], F.z[l], rb}));
  Eigen::MatrixXd M(N, N);
  const double scale = std::exp(shift);
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k) {
      // psi_l(y) psi_k(x): + on z_{l+N}, - on z_l
      const int la[2] = {l + N, l}, ka[2] = {k + N, k};
      const double sg[2] = {1.0, -1.0};
      double acc = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) acc += sg[a] * sg[b] * J(ka[b], la[a]);
      M(l, k) = -acc * scale / (nrm[l] * nrm[k]);
    }
  return M;
}

struct EigencountRow {
  double C = 0.0;
  int eigencount = 0;        // real eigenvalues of K T_{Gamma_+}^{-1} >= 1
  double mu_max = 0.0;       // largest real eigenvalue
  std::vector<double> crossing;  // eigenvalues >= 1, descending
  double gamma1 = 0.0, gamma2 = 0.0;
  double rayleigh_min = 0.0;     // min diagonal of the normalized Rayleigh matrix
  double offdiag_max = 0.0;
  double offdiag_bound = 0.0;
  double tinv_lower_bound = 0.0;
};

struct EigencountSweep {
  std::vector<EigencountRow> rows;
  ZFamily family;
  double k0 = 0.0;
  double M1 = 0.0, M2 = 0.0, M3 = 0.0;
  bool reached_target = false;
  int target = 0;
};

struct SweepOptions {
  int N_target = 2;
  double C_max = 200.0;  // cap for the automatic grid
  double growth = 1.25;
  GridSpec grid;         // n_v, n_r for the eigen-solves
  QuadOptions quad{6, 16, 32, 8, 2};
  bool rayleigh = true;
};

inline EigencountRow eigencount_at(const Domain& D, double C, double k0, const GridSpec& gs) {
  GridSpec sp = gs;
  sp.sigma_bound = C;
  const auto g = PhaseGrid::build(D, sp);
  TransportProblem pb;
  pb.grid = g;
  pb.coeffs = Coefficients::constant(C, k0);
  pb.set = BoundarySet::incoming(*g);
  Solver S(pb);
  Eigen::MatrixXd Gm;
  S.assemble_G(BoundarySet::outgoing(*g), false, Gm);
  Eigen::EigenSolver<Eigen::MatrixXd> es(Gm, false);
  if (es.info() != Eigen::Success) throw NumericalFailure("eigensolve failed");
  EigencountRow row;
  row.C = C;
  row.mu_max = -std::numeric_limits<double>::infinity();
  const double nrm = Gm.norm();
  for (int i = 0; i < Gm.rows(); ++i) {
    const auto e = es.eigenvalues()[i];
    if (std::abs(e.imag()) > 1e-8 * std::max(1.0, std::abs(e))) continue;
    row.mu_max = std::max(row.mu_max, e.real());
    // eigenvalues within roundoff of the matrix norm are not resolved
    if (e.real() >= 1.0 && e.real() > 1e-10 * nrm) row.crossing.push_back(e.real());
  }
  std::sort(row.crossing.rbegin(), row.crossing.rend());
  row.eigencount = static_cast<int>(row.crossing.size());
  return row;
}

// Sweep constant absorption C with a fixed isotropic kernel k0 (sigma_s =
// 2 pi k0 = M1 = M2). An empty C grid sweeps geometrically from M2 until the
// target count is reached or C_max is passed.
inline EigencountSweep eigencount_vs_C(const Domain& D, double k0, std::vector<double> Cs, const Vec2& x0, double r,
                                       const SweepOptions& opt = {}) {
  if (D.kind != DomainKind::disk) throw ValidationError("eigencount sweep needs a disk domain");
  if (!(k0 > 0)) throw ValidationError("kernel constant must be positive");
  if ((x0 - D.center).norm() + 2 * r > D.r_out + 1e-12) throw ValidationError("B(x0, 2r) must lie in the domain");
  EigencountSweep S;
  S.k0 = k0;
  S.M1 = S.M2 = kTwoPi * k0;
  S.M3 = 0.0;
  S.target = opt.N_target;
  S.family = make_z_family(x0, r, opt.N_target);
  const ZFamily& F = S.family;
  const bool automatic = Cs.empty();
  double C = S.M2;
  for (size_t i = 0;; ++i) {
    if (automatic) {
      if (C > opt.C_max) break;
    } else {
      if (i >= Cs.size()) break;
      C = Cs[i];
    }
    if (!(C > 0)) throw ValidationError("absorption values must be positive");
    EigencountRow row = eigencount_at(D, C, k0, opt.grid);
    row.gamma1 = gamma1(C, F.alpha, r, S.M1, S.M2, S.M3);
    row.gamma2 = gamma2(C, F.alpha, r, S.M1, S.M2, S.M3);
    row.offdiag_bound = offdiag_bound(C, F.alpha, r, S.M1, S.M2, S.M3);
    const auto cf = Coefficients::constant(C, k0);
    BallBounds bb{C, C, S.M1, S.M2};
    row.tinv_lower_bound = tinv_lower_bound(2 * r, F.alpha / 4, bb);
    if (opt.rayleigh) {
      const auto M = z_rayleigh_matrix(D, cf, F, opt.quad);
      row.rayleigh_min = M.diagonal().minCoeff();
      for (int a = 0; a < M.rows(); ++a)
        for (int b = 0; b < M.cols(); ++b)
          if (a != b) row.offdiag_max = std::max(row.offdiag_max, std::abs(M(a, b)));
    }
    S.rows.push_back(row);
    if (row.eigencount >= opt.N_target) S.reached_target = true;
    if (automatic) {
      if (S.reached_target) break;
      C *= opt.growth;
    }
  }
  return S;
}

}  // namespace boltzctl
