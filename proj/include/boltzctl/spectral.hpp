#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "solver.hpp"

namespace boltzctl {

// Radial reduction of F f(x) = -int_X e^{sigma |x-y|} |x-y|^{1-d} f(y) dy on
// the unit ball: F (g Y_l) = (F_l g) Y_l for spherical harmonics Y_l of
// degree l, with F_l an integral operator on L^2([0,1], r^{d-1} dr).

// Gegenbauer polynomial G_l^{(d-2)/2} normalized by G(1) = 1. Values come
// from the normalized three-term recurrence
//   G_{n+1} = (2 (n + lambda) t G_n - n G_{n-1}) / (n + 2 lambda),
// which is exact at t = +-1; the monomial coefficients follow the same
// recurrence.
struct GegenbauerPoly {
  int l = 0;
  int d = 2;
  std::vector<double> coeffs;  // ascending powers

  // value, first and second derivative at t
  std::array<double, 3> eval(double t) const {
    const double lam = 0.5 * (d - 2);
    std::array<double, 3> a{1.0, 0.0, 0.0}, b{t, 1.0, 0.0};
    if (l == 0) return a;
    for (int n = 1; n < l; ++n) {
      const double c1 = 2 * (n + lam), den = n + 2 * lam;
      std::array<double, 3> c{(c1 * t * b[0] - n * a[0]) / den, (c1 * (b[0] + t * b[1]) - n * a[1]) / den,
                              (c1 * (2 * b[1] + t * b[2]) - n * a[2]) / den};
      a = b;
      b = c;
    }
    return b;
  }
  double operator()(double t) const { return eval(t)[0]; }
  double from_coeffs(double t) const {
    double s = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) s = s * t + *it;
    return s;
  }
  // (1 - t^2) G'' - (d - 1) t G' + l (l + d - 2) G
  double ode_residual(double t) const {
    const auto e = eval(t);
    return (1 - t * t) * e[2] - (d - 1) * t * e[1] + l * (l + d - 2.0) * e[0];
  }
};

inline GegenbauerPoly gegenbauer(int l, int d) {
  if (l < 0 || d < 2) throw ValidationError("gegenbauer needs l >= 0 and d >= 2");
  const double lam = 0.5 * (d - 2);
  GegenbauerPoly G;
  G.l = l;
  G.d = d;
  std::vector<double> a{1.0}, b{0.0, 1.0};
  if (l == 0) {
    G.coeffs = a;
    return G;
  }
  for (int n = 1; n < l; ++n) {
    const double c1 = 2 * (n + lam), den = n + 2 * lam;
    std::vector<double> c(n + 2, 0.0);
    for (int k = 0; k <= n; ++k) c[k + 1] += c1 * b[k] / den;
    for (int k = 0; k < n; ++k) c[k] -= n * a[k] / den;
    a = std::move(b);
    b = std::move(c);
  }
  G.coeffs = std::move(b);
  return G;
}

// dim H_l on S^{d-1}
inline long long multiplicity_Nl(int l, int d) {
  if (l < 0 || d < 2) throw ValidationError("multiplicity needs l >= 0 and d >= 2");
  auto binom = [](long long n, long long k) -> long long {
    if (k < 0 || n < k) return 0;
    long long r = 1;
    for (long long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  };
  if (l == 0) return 1;
  if (l == 1) return d;
  return binom(d + l - 1, d - 1) - binom(d + l - 3, d - 1);
}

// |S^{m}|
inline double sphere_area(int m) { return 2 * std::pow(std::numbers::pi, 0.5 * (m + 1)) / std::tgamma(0.5 * (m + 1)); }

// Integrand of f_l in the t variable.
inline double fl_integrand(const GegenbauerPoly& G, double sigma, double s, double r, double t) {
  const int d = G.d;
  const double rho2 = s * s + r * r - 2 * r * s * t, rho = std::sqrt(rho2);
  return -sphere_area(d - 2) * std::pow(1 - t * t, 0.5 * (d - 3)) * G(t) * std::exp(sigma * rho) / std::pow(rho, d - 1);
}

namespace detail {

// Angular rule for t = cos(theta): geometric panels toward theta = 0 down to
// the near-diagonal scale |s - r| / sqrt(rs), then uniform panels resolving
// the polynomial and the exponential.
inline std::vector<Node1D> theta_rule(int l, double sigma, double s, double r) {
  static const GaussRule g16 = gauss_legendre(16);
  const double pi = std::numbers::pi;
  const int nb = std::max({16, 2 * l + 8, static_cast<int>(std::ceil(2 * sigma))});
  const double hb = pi / nb;
  std::vector<double> e{0.0};
  double h = std::min(hb, 0.25 * std::abs(s - r) / std::sqrt(r * s));
  while (e.back() + h < hb) {
    e.push_back(e.back() + h);
    h *= 2;
  }
  const int nu = static_cast<int>(std::ceil((pi - e.back()) / hb - 1e-9));
  const double x0 = e.back(), hu = (pi - x0) / nu;
  for (int i = 1; i <= nu; ++i) e.push_back(x0 + i * hu);
  e.back() = pi;
  return composite_rule(e, g16);
}

inline void check_sigma(double sigma) {
  if (!std::isfinite(sigma) || sigma < 0) throw ValidationError("sigma must be finite and nonnegative");
  if (2 * sigma > kLogGuard) throw NumericalFailure("exponent e^{2 sigma} exceeds the log guard");
}

}  // namespace detail

// f_l(s, r) = -|S^{d-2}| int_{-1}^{1} (1-t^2)^{(d-3)/2} G_l(t) e^{sigma rho} rho^{1-d} dt,
// rho^2 = s^2 + r^2 - 2 r s t, computed in theta with t = cos(theta) so the
// endpoint weight becomes sin^{d-2}(theta) and rho^2 = (s-r)^2 + 4 r s sin^2(theta/2).
inline double kernel_fl(const GegenbauerPoly& G, double sigma, double s, double r) {
  if (!(s > 0 && s <= 1 && r > 0 && r <= 1)) throw ValidationError("kernel_fl needs s, r in (0, 1]");
  if (s == r) throw ValidationError("kernel_fl is singular at s = r");
  detail::check_sigma(sigma);
  const int d = G.d;
  double acc = 0.0;
  for (const auto& nd : detail::theta_rule(G.l, sigma, s, r)) {
    const double sh = std::sin(0.5 * nd.x);
    const double rho = std::sqrt((s - r) * (s - r) + 4 * r * s * sh * sh);
    const double wt = d == 2 ? 1.0 : std::pow(std::sin(nd.x), d - 2);
    acc += nd.w * wt * G(std::cos(nd.x)) * std::exp(sigma * rho) / std::pow(rho, d - 1);
  }
  return -sphere_area(d - 2) * acc;
}

inline double kernel_fl(int l, int d, double sigma, double s, double r) { return kernel_fl(gegenbauer(l, d), sigma, s, r); }

// Nystrom discretization of F_l g(s) = int_0^1 g(r) f_l(s, r) r^{d-1} dr on
// composite Gauss-Legendre nodes. M acts on nodal values; S = D^{1/2} M D^{-1/2}
// with D = diag(r_i^{d-1} w_i) is the symmetric form.
struct RadialOperatorMatrix {
  int l = 0, d = 2;
  double sigma = 0.0;
  Eigen::VectorXd r, w;
  Eigen::MatrixXd M, S;
  double raw_asymmetry = 0.0;  // |S - S^T| / |S| before symmetrizing

  Eigen::VectorXd apply(const Eigen::VectorXd& g) const { return M * g; }
  double symmetry_error() const { return (S - S.transpose()).norm() / std::max(S.norm(), 1e-300); }
};

inline constexpr int kFlPanelOrder = 8;

// Rows use product integration on the panel holding r_i and its neighbours:
// the density is the panel's Lagrange interpolant and the log singularity is
// integrated on panels graded toward r_i. Other panels use the plain rule.
// The product-integration matrix is symmetric up to discretization error and
// its symmetric part is kept.
inline RadialOperatorMatrix assemble_Fl(int l, int d, double sigma, int n_quad = 64) {
  if (n_quad < 16 || n_quad % kFlPanelOrder != 0) throw ValidationError("n_quad must be a multiple of 8 and >= 16");
  detail::check_sigma(sigma);
  const auto G = gegenbauer(l, d);
  const int np = n_quad / kFlPanelOrder, q = kFlPanelOrder;
  const auto gl = gauss_legendre(q);
  RadialOperatorMatrix R;
  R.l = l;
  R.d = d;
  R.sigma = sigma;
  R.r.resize(n_quad);
  R.w.resize(n_quad);
  const double h = 1.0 / np;
  for (int p = 0; p < np; ++p)
    for (int k = 0; k < q; ++k) {
      R.r[p * q + k] = (p + 0.5) * h + 0.5 * h * gl.x[k];
      R.w[p * q + k] = 0.5 * h * gl.w[k];
    }
  auto rw = [&](double x) { return std::pow(x, d - 1); };
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n_quad, n_quad);
  for (int i = 0; i < n_quad; ++i) {
    const double s = R.r[i];
    const int pi = i / q;
    for (int p = 0; p < np; ++p) {
      if (std::abs(p - pi) > 1) {
        for (int k = 0; k < q; ++k) {
          const int j = p * q + k;
          W(i, j) = kernel_fl(G, sigma, s, R.r[j]) * rw(R.r[j]) * R.w[j];
        }
        continue;
      }
      const double a = p * h, b = (p + 1) * h;
      std::vector<double> e;
      if (p == pi) {
        e = graded_edges(a, s, false, 1e-7, 2.0);
        const auto e2 = graded_edges(s, b, true, 1e-7, 2.0);
        e.insert(e.end(), e2.begin() + 1, e2.end());
      } else {
        e = graded_edges(a, b, p > pi, 1e-7, 2.0);
      }
      std::vector<double> xs(R.r.data() + p * q, R.r.data() + (p + 1) * q);
      for (const auto& nd : composite_rule(e, gl)) {
        const double f = kernel_fl(G, sigma, s, nd.x) * rw(nd.x) * nd.w;
        const auto L = lagrange_basis(xs, nd.x);
        for (int k = 0; k < q; ++k) W(i, p * q + k) += f * L[k];
      }
    }
  }
  const Eigen::VectorXd dh = (R.r.array().pow(d - 1) * R.w.array()).sqrt();
  const Eigen::MatrixXd S = dh.asDiagonal() * W * dh.cwiseInverse().asDiagonal();
  R.raw_asymmetry = (S - S.transpose()).norm() / std::max(S.norm(), 1e-300);
  R.S = 0.5 * (S + S.transpose());
  R.M = dh.cwiseInverse().asDiagonal() * R.S * dh.asDiagonal();
  return R;
}

// Eigenvalues of F_l, descending.
inline Eigen::VectorXd eig_Fl(const RadialOperatorMatrix& R) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R.S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalFailure("F_l eigensolve failed");
  return es.eigenvalues().reverse();
}

inline Eigen::VectorXd eig_Fl(int l, int d, double sigma, int n_quad = 64) { return eig_Fl(assemble_Fl(l, d, sigma, n_quad)); }

// ---- d = 2 cross-checks against the unreduced operator ----

struct DecompositionCheck {
  Eigen::VectorXd s;        // radial nodes
  Eigen::VectorXd full;     // cos(l theta) coefficient of F f at s
  Eigen::VectorXd radial;   // F_l g at s
  double rel_error = 0.0;   // weighted L^2, relative to |radial|
  double orth_fraction = 0.0;
};

struct DecompositionOptions {
  int n_quad = 32;    // Nystrom nodes (also the radial sample points)
  int n_phi = 0;      // angular samples, 0 -> max(16, 4 l + 4)
  int n_alpha = 256;  // directions around x
  int n_rho = 24;     // GL points per distance panel
  int rho_panels = 2;
  long long budget = 200000000;  // kernel evaluations
};

// Applies F to f = g(r) cos(l theta) in polar coordinates around each sample
// point x (the Jacobian cancels the 1/|x-y| singularity), projects onto
// cos(l theta) and compares with the Nystrom F_l g.
inline DecompositionCheck disk_decomposition_check(int l, double sigma, const std::function<double(double)>& g,
                                                   const DecompositionOptions& o = {}) {
  if (l < 1 || l % 2 == 0) throw ValidationError("decomposition check needs odd l");
  detail::check_sigma(sigma);
  const int n_phi = o.n_phi > 0 ? o.n_phi : std::max(16, 4 * l + 4);
  if (static_cast<long long>(o.n_quad) * n_phi * o.n_alpha * o.n_rho * o.rho_panels > o.budget)
    throw NumericalFailure("decomposition check exceeds its quadrature budget");
  const auto R = assemble_Fl(l, 2, sigma, o.n_quad);
  const int n = o.n_quad;
  DecompositionCheck C;
  C.s = R.r;
  Eigen::VectorXd gv(n);
  for (int j = 0; j < n; ++j) gv[j] = g(R.r[j]);
  C.radial = R.apply(gv);
  C.full.resize(n);
  const auto gr = gauss_legendre(o.n_rho);
  double orth2 = 0.0, tot2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = R.r[i];
    std::vector<double> vals(n_phi);
    for (int m = 0; m < n_phi; ++m) {
      const double phi = kTwoPi * m / n_phi;
      const Vec2 x = s * unit_dir(phi);
      double acc = 0.0;
      for (int a = 0; a < o.n_alpha; ++a) {
        const Vec2 om = unit_dir(kTwoPi * (a + 0.5) / o.n_alpha);
        const double xo = x.dot(om);
        const double rho_max = -xo + std::sqrt(std::max(0.0, xo * xo - (s * s - 1)));
        const double hp = rho_max / o.rho_panels;
        for (int pp = 0; pp < o.rho_panels; ++pp)
          for (int k = 0; k < o.n_rho; ++k) {
            const double rho = (pp + 0.5) * hp + 0.5 * hp * gr.x[k];
            const Vec2 y = x + rho * om;
            const double ry = y.norm();
            const double fy = ry > 0 ? g(ry) * std::cos(l * std::atan2(y.y(), y.x())) : 0.0;
            acc += 0.5 * hp * gr.w[k] * std::exp(sigma * rho) * fy;
          }
      }
      vals[m] = -acc * kTwoPi / o.n_alpha;
    }
    double c = 0.0;
    for (int m = 0; m < n_phi; ++m) c += vals[m] * std::cos(l * kTwoPi * m / n_phi);
    c *= 2.0 / n_phi;
    C.full[i] = c;
    const double wi = s * R.w[i];
    for (int m = 0; m < n_phi; ++m) {
      const double res = vals[m] - c * std::cos(l * kTwoPi * m / n_phi);
      orth2 += wi * res * res;
      tot2 += wi * vals[m] * vals[m];
    }
  }
  const Eigen::VectorXd wt = (R.r.array() * R.w.array()).matrix();
  const double num = (wt.array() * (C.full - C.radial).array().square()).sum();
  const double den = (wt.array() * C.radial.array().square()).sum();
  C.rel_error = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
  C.orth_fraction = tot2 > 0 ? std::sqrt(orth2 / tot2) : 0.0;
  return C;
}

// Odd part (f(-x) = -f(x)) of the spectrum of F on the unit disk from the
// transport discretization: F = K T_{Gamma_+}^{-1} with k = 1 acting on
// functions of x, so its eigenvalues are those of the dense moment matrix.
// The point reflection maps scattering cells to cells, so the odd block is
// Q^T G Q with Q spanning antisymmetric cell pairs. Each eigenvector is
// labelled by its dominant angular frequency; modes near the angular Nyquist
// frequency are grid artefacts and only resolved labels should be compared.
struct DiskOddSpectrum {
  std::vector<double> eig;
  std::vector<int> freq;
  std::vector<double> freq_share;  // fraction of angular power at freq
  int n_theta = 0;
};

inline DiskOddSpectrum disk_odd_spectrum(double sigma, GridSpec gs) {
  detail::check_sigma(sigma);
  const auto D = Domain::disk({0, 0}, 1.0);
  if (gs.n_theta == 0) gs.n_theta = gs.n_v;
  if (gs.n_theta % 2 != 0 || gs.n_v % 2 != 0) throw ValidationError("odd spectrum needs even angular counts");
  gs.sigma_bound = sigma;
  const auto grid = PhaseGrid::build(D, gs);
  TransportProblem pb;
  pb.grid = grid;
  pb.coeffs = Coefficients::constant(sigma, 1.0);
  pb.set = BoundarySet::incoming(*grid);
  Solver S(pb);
  Eigen::MatrixXd Gm;
  S.assemble_G(BoundarySet::outgoing(*grid), false, Gm);
  const auto& cg = grid->cells;
  if (Gm.rows() != cg.n_cells) throw NumericalFailure("moment matrix is not cell-indexed");
  const int nt = cg.n_theta, i0 = cg.center_node ? 1 : 0;
  std::vector<std::pair<int, int>> pairs;
  for (int i = i0; i <= cg.n_r; ++i)
    for (int m = 0; m < nt / 2; ++m) pairs.emplace_back(cg.index(i, m), cg.index(i, m + nt / 2));
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(cg.n_cells, static_cast<int>(pairs.size()));
  for (int c = 0; c < static_cast<int>(pairs.size()); ++c) {
    Q(pairs[c].first, c) = std::sqrt(0.5);
    Q(pairs[c].second, c) = -std::sqrt(0.5);
  }
  const Eigen::MatrixXd B = Q.transpose() * Gm * Q;
  Eigen::EigenSolver<Eigen::MatrixXd> es(B, true);
  if (es.info() != Eigen::Success) throw NumericalFailure("odd-block eigensolve failed");
  DiskOddSpectrum out;
  out.n_theta = nt;
  std::vector<int> order(B.rows());
  for (int i = 0; i < B.rows(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return es.eigenvalues()[a].real() > es.eigenvalues()[b].real(); });
  for (int i : order) {
    Eigen::VectorXd u = Q * es.eigenvectors().col(i).real();
    if (u.norm() < 1e-8) u = Q * es.eigenvectors().col(i).imag();
    std::vector<double> pw(nt / 2 + 1, 0.0);
    for (int ir = i0; ir <= cg.n_r; ++ir)
      for (int l = 0; l <= nt / 2; ++l) {
        double c = 0, s = 0;
        for (int m = 0; m < nt; ++m) {
          c += u[cg.index(ir, m)] * std::cos(l * kTwoPi * m / nt);
          s += u[cg.index(ir, m)] * std::sin(l * kTwoPi * m / nt);
        }
        pw[l] += c * c + s * s;
      }
    const auto it = std::max_element(pw.begin(), pw.end());
    double tot = 0;
    for (double x : pw) tot += x;
    out.eig.push_back(es.eigenvalues()[i].real());
    out.freq.push_back(static_cast<int>(it - pw.begin()));
    out.freq_share.push_back(tot > 0 ? *it / tot : 0.0);
  }
  return out;
}

struct SpectrumMatch {
  int l = 0;
  double mu = 0.0;       // eigenvalue of F_l
  int matches = 0;       // full-disk eigenvalues with frequency l within tol
  double nearest = 0.0;  // relative distance to the closest one
};

// Match the n_top largest-magnitude eigenvalues of F_l (l odd up to l_max)
// against the full-disk odd spectrum; each should appear twice (cos and sin).
inline std::vector<SpectrumMatch> disk_spectrum_match(double sigma, int l_max, int n_top, const GridSpec& gs,
                                                      int n_quad = 64, double tol = 1e-2) {
  const auto full = disk_odd_spectrum(sigma, gs);
  std::vector<SpectrumMatch> out;
  for (int l = 1; l <= l_max; l += 2) {
    const auto e = eig_Fl(l, 2, sigma, n_quad);
    std::vector<double> v(e.data(), e.data() + e.size());
    std::sort(v.begin(), v.end(), [](double a, double b) { return std::abs(a) > std::abs(b); });
    for (int k = 0; k < std::min<int>(n_top, static_cast<int>(v.size())); ++k) {
      SpectrumMatch m;
      m.l = l;
      m.mu = v[k];
      m.nearest = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < full.eig.size(); ++i) {
        if (full.freq[i] != l) continue;
        const double rel = std::abs(full.eig[i] - m.mu) / std::abs(m.mu);
        m.nearest = std::min(m.nearest, rel);
        if (rel < tol) ++m.matches;
      }
      out.push_back(m);
    }
  }
  return out;
}

// ---- sigma sweep ----

struct SpectralRow {
  int l = 0, d = 2;
  double sigma = 0.0;
  double eig_max = 0.0;
  int eig_count_gt1 = 0;
  long long N_l = 0;
};

struct SigmaThreshold {
  int l = 0, d = 2;
  long long N_l = 0;
  std::vector<SpectralRow> rows;  // the sigma grid, then bisection points
  std::optional<double> sigma_star;
  double eig_first = 0.0, eig_at_star = 0.0;
};

inline SpectralRow spectral_row(int l, int d, double sigma, int n_quad) {
  const auto e = eig_Fl(l, d, sigma, n_quad);
  SpectralRow r;
  r.l = l;
  r.d = d;
  r.sigma = sigma;
  r.eig_max = e[0];
  r.eig_count_gt1 = static_cast<int>((e.array() > 1.0).count());
  r.N_l = multiplicity_Nl(l, d);
  return r;
}

// First grid point with max eig F_l > 1, refined by bisection to tol. No
// crossing below sigma_max leaves sigma_star empty.
inline SigmaThreshold sigma_threshold(int l, int d, double sigma_max, double tol = 1e-3, double step = 1.0,
                                      int n_quad = 32) {
  if (!(sigma_max > 0) || !(step > 0) || !(tol > 0)) throw ValidationError("sigma sweep needs positive sigma_max, step, tol");
  SigmaThreshold T;
  T.l = l;
  T.d = d;
  T.N_l = multiplicity_Nl(l, d);
  const int n = static_cast<int>(std::floor(sigma_max / step + 1e-9));
  double lo = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double sg = i * step;
    T.rows.push_back(spectral_row(l, d, sg, n_quad));
    if (i == 0) T.eig_first = T.rows.back().eig_max;
    if (T.rows.back().eig_max > 1.0) {
      double hi = sg;
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        T.rows.push_back(spectral_row(l, d, mid, n_quad));
        (T.rows.back().eig_max > 1.0 ? hi : lo) = mid;
      }
      T.sigma_star = hi;
      T.eig_at_star = spectral_row(l, d, hi, n_quad).eig_max;
      break;
    }
    lo = sg;
  }
  return T;
}

}  // namespace boltzctl
