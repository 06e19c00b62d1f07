#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "coefficients.hpp"
#include "errors.hpp"
#include "phase_grid.hpp"

namespace boltzctl {

// Elementary operators on a PhaseGrid for a fixed coefficient pair.
//
// Along a segment with optical depth S(t) = int_0^t sigma, the solution
// operators are swept panel by panel: inside a panel the integrand
// e^{+-S} f is replaced by its Lagrange interpolant at the GL points, so the
// discrete T^{-1} and its adjoint are exact transposes in the phase measure.
class TransportOps {
 public:
  std::shared_ptr<const PhaseGrid> grid;
  Coefficients coeffs;
  std::vector<double> sig;       // sigma at nodes
  std::vector<double> Sig;       // optical depth from the segment entry, at nodes
  std::vector<double> Sig_edge;  // same at panel edges
  double max_panel_depth = 0.0;
  double max_tau_sigma = 0.0;

  std::vector<double> kc;              // isotropic kernel at cells
  std::vector<Eigen::MatrixXd> kmat;   // (j, j') -> w_j' k(x_c, v_j', v_j)

  TransportOps(std::shared_ptr<const PhaseGrid> g, Coefficients c) : grid(std::move(g)), coeffs(std::move(c)) {
    const PhaseGrid& G = *grid;
    const int q = G.rule.q;
    sig.resize(G.n_nodes());
    Sig.resize(G.n_nodes());
    Sig_edge.resize(G.edges.size());
    for (int si = 0; si < G.n_segs(); ++si) {
      const Segment& s = G.segs[si];
      const Vec2 v = G.V.dir[s.vel];
      for (int n = s.node_begin; n < s.node_begin + s.n_nodes; ++n) sig[n] = coeffs.sigma(G.node_pos(n), v);
      double acc = 0.0;
      Sig_edge[s.panel_begin] = 0.0;
      for (int p = 0; p < s.n_panels; ++p) {
        const double h = G.edges[s.panel_begin + p + 1] - G.edges[s.panel_begin + p];
        const int n0 = s.node_begin + p * q;
        for (int i = 0; i < q; ++i) {
          double a = 0.0;
          for (int k = 0; k < q; ++k) a += G.rule.S(i, k) * sig[n0 + k];
          Sig[n0 + i] = acc + 0.5 * h * a;
        }
        double b = 0.0;
        for (int k = 0; k < q; ++k) b += G.rule.gl.w[k] * sig[n0 + k];
        max_panel_depth = std::max(max_panel_depth, std::abs(0.5 * h * b));
        acc += 0.5 * h * b;
        Sig_edge[s.panel_begin + p + 1] = acc;
      }
      if (std::abs(acc) > kLogGuard) throw NumericalFailure("optical depth along a line exceeds the log guard");
      for (int n = s.node_begin; n < s.node_begin + s.n_nodes; ++n)
        max_tau_sigma = std::max(max_tau_sigma, s.len() * std::abs(sig[n]));
    }
    const CellGrid& C = G.cells;
    if (coeffs.isotropic()) {
      kc.resize(C.n_cells);
      for (int c2 = 0; c2 < C.n_cells; ++c2) kc[c2] = coeffs.k_iso(C.position(c2));
    } else if (coeffs.kernel) {
      const int nv = G.V.n;
      const int count = coeffs.kernel_x_independent ? 1 : C.n_cells;
      if (static_cast<double>(count) * nv * nv > 4e7) throw ValidationError("anisotropic kernel table too large");
      kmat.resize(count);
      for (int c2 = 0; c2 < count; ++c2) {
        const Vec2 x = C.position(c2);
        kmat[c2].resize(nv, nv);
        for (int j = 0; j < nv; ++j)
          for (int jp = 0; jp < nv; ++jp) kmat[c2](j, jp) = G.V.w[jp] * coeffs.kernel(x, G.V.dir[jp], G.V.dir[j]);
      }
    }
  }

  const PhaseGrid& g() const { return *grid; }
  bool isotropic() const { return !kc.empty(); }
  bool scattering() const { return !kc.empty() || !kmat.empty(); }
  int moment_size() const {
    if (isotropic()) return g().cells.n_cells;
    if (!kmat.empty()) return g().cells.n_cells * g().V.n;
    return 0;
  }
  double seg_depth(int s) const { return Sig_edge[g().segs[s].panel_begin + g().segs[s].n_panels]; }
  const Eigen::MatrixXd& kernel_matrix(int cell) const { return kmat.size() == 1 ? kmat[0] : kmat[cell]; }

  // out(t) = int_0^t e^{eta (S(t) - S(s))} f(s) ds, returns the exit value.
  double sweep_fwd(int si, double eta, const double* f, double* out) const {
    const PhaseGrid& G = g();
    const Segment& s = G.segs[si];
    const int q = G.rule.q;
    std::array<double, 32> E{};
    double I = 0.0;
    for (int p = 0; p < s.n_panels; ++p) {
      const double h = G.edges[s.panel_begin + p + 1] - G.edges[s.panel_begin + p];
      const double a = Sig_edge[s.panel_begin + p], b = Sig_edge[s.panel_begin + p + 1];
      const int n0 = p * q;
      const int g0 = s.node_begin + p * q;
      for (int k = 0; k < q; ++k) E[k] = std::exp(eta * (Sig[g0 + k] - a));
      for (int i = 0; i < q; ++i) {
        double acc = 0.0;
        for (int k = 0; k < q; ++k) acc += G.rule.S(i, k) * f[n0 + k] / E[k];
        out[n0 + i] = E[i] * (I + 0.5 * h * acc);
      }
      double acc = 0.0;
      for (int k = 0; k < q; ++k) acc += G.rule.gl.w[k] * f[n0 + k] / E[k];
      I = std::exp(eta * (b - a)) * (I + 0.5 * h * acc);
    }
    return I;
  }

  // out(t) = int_t^L e^{eta (S(s) - S(t))} f(s) ds, returns the entry value.
  double sweep_bwd(int si, double eta, const double* f, double* out) const {
    const PhaseGrid& G = g();
    const Segment& s = G.segs[si];
    const int q = G.rule.q;
    std::array<double, 32> F{};
    double J = 0.0;
    for (int p = s.n_panels - 1; p >= 0; --p) {
      const double h = G.edges[s.panel_begin + p + 1] - G.edges[s.panel_begin + p];
      const double a = Sig_edge[s.panel_begin + p], b = Sig_edge[s.panel_begin + p + 1];
      const int n0 = p * q;
      const int g0 = s.node_begin + p * q;
      for (int k = 0; k < q; ++k) F[k] = std::exp(eta * (Sig[g0 + k] - b));
      for (int i = 0; i < q; ++i) {
        double acc = 0.0;
        for (int k = 0; k < q; ++k) acc += G.rule.St(i, k) * F[k] * f[n0 + k];
        out[n0 + i] = (J + 0.5 * h * acc) / F[i];
      }
      double acc = 0.0;
      for (int k = 0; k < q; ++k) acc += G.rule.gl.w[k] * F[k] * f[n0 + k];
      J = (J + 0.5 * h * acc) * std::exp(eta * (b - a));
    }
    return J;
  }

  // T_C^{-1} (adjoint = false) or (T_C^{-1})^* on one segment; f and out are
  // local to the segment. Writes both traces.
  void tinv_segment(int si, bool exit_selected, bool adjoint, const double* f, double* out, double& tin,
                    double& tout) const {
    const int nn = g().segs[si].n_nodes;
    if (!adjoint) {
      if (!exit_selected) {
        tin = 0.0;
        tout = sweep_fwd(si, -1.0, f, out);
      } else {
        tout = 0.0;
        tin = -sweep_bwd(si, +1.0, f, out);
        for (int i = 0; i < nn; ++i) out[i] = -out[i];
      }
    } else {
      if (!exit_selected) {
        tout = 0.0;
        tin = sweep_bwd(si, -1.0, f, out);
      } else {
        tin = 0.0;
        tout = -sweep_fwd(si, +1.0, f, out);
        for (int i = 0; i < nn; ++i) out[i] = -out[i];
      }
    }
  }

  PhaseField Tinv(const BoundarySet& C, const Eigen::VectorXd& f, bool adjoint = false) const {
    const PhaseGrid& G = g();
    PhaseField u = PhaseField::zeros(G);
    for (int s = 0; s < G.n_segs(); ++s) {
      const int b = G.segs[s].node_begin;
      tinv_segment(s, C.exit_selected(s), adjoint, f.data() + b, u.val.data() + b, u.in[s], u.out[s]);
    }
    return u;
  }
  PhaseField Tinv_adj(const BoundarySet& C, const Eigen::VectorXd& f) const { return Tinv(C, f, true); }

  // L_C g: decays from a C_- entry, grows backward from a C_+ exit.
  PhaseField L(const BoundarySet& C, const BoundaryField& gb) const {
    const PhaseGrid& G = g();
    PhaseField u = PhaseField::zeros(G);
    for (int s = 0; s < G.n_segs(); ++s) {
      const Segment& sg = G.segs[s];
      const double tot = seg_depth(s);
      if (!C.exit_selected(s)) {
        const double gv = gb.in[s];
        for (int n = sg.node_begin; n < sg.node_begin + sg.n_nodes; ++n) u.val[n] = gv * std::exp(-Sig[n]);
        u.in[s] = gv;
        u.out[s] = gv * std::exp(-tot);
      } else {
        const double gv = gb.out[s];
        for (int n = sg.node_begin; n < sg.node_begin + sg.n_nodes; ++n) u.val[n] = gv * std::exp(tot - Sig[n]);
        u.out[s] = gv;
        u.in[s] = gv * std::exp(tot);
      }
    }
    return u;
  }

  // L_{Gamma \ C, -sigma} psi: the lifting used by the backward problem.
  PhaseField L_back(const BoundarySet& C, const BoundaryField& psi) const {
    const PhaseGrid& G = g();
    PhaseField u = PhaseField::zeros(G);
    for (int s = 0; s < G.n_segs(); ++s) {
      const Segment& sg = G.segs[s];
      const double tot = seg_depth(s);
      if (!C.exit_selected(s)) {
        const double pv = psi.out[s];
        for (int n = sg.node_begin; n < sg.node_begin + sg.n_nodes; ++n) u.val[n] = pv * std::exp(-(tot - Sig[n]));
        u.out[s] = pv;
        u.in[s] = pv * std::exp(-tot);
      } else {
        const double pv = psi.in[s];
        for (int n = sg.node_begin; n < sg.node_begin + sg.n_nodes; ++n) u.val[n] = pv * std::exp(Sig[n]);
        u.in[s] = pv;
        u.out[s] = pv * std::exp(tot);
      }
    }
    return u;
  }

  // Lifting J_C g: constant along each segment.
  PhaseField J(const BoundarySet& C, const BoundaryField& gb) const {
    const PhaseGrid& G = g();
    PhaseField u = PhaseField::zeros(G);
    for (int s = 0; s < G.n_segs(); ++s) {
      const Segment& sg = G.segs[s];
      const double gv = C.exit_selected(s) ? gb.out[s] : gb.in[s];
      u.val.segment(sg.node_begin, sg.n_nodes).setConstant(gv);
      u.in[s] = u.out[s] = gv;
    }
    return u;
  }

  // Cell moments: scalar flux (isotropic) or per-velocity averages.
  Eigen::VectorXd restrict(const Eigen::VectorXd& u) const {
    const PhaseGrid& G = g();
    const int nc = G.cells.n_cells;
    if (isotropic()) {
      Eigen::VectorXd y = Eigen::VectorXd::Zero(nc);
      for (int n = 0; n < G.n_nodes(); ++n) {
        const double a = G.node_mu[n] * u[n];
        const Stencil& st = G.stencil[n];
        for (int e = 0; e < 4; ++e) y[st.idx[e]] += st.w[e] * a;
      }
      for (int c = 0; c < nc; ++c) y[c] = G.cell_mass[c] > 0 ? kTwoPi * y[c] / G.cell_mass[c] : 0.0;
      return y;
    }
    const int nv = G.V.n;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nc) * nv);
    for (int n = 0; n < G.n_nodes(); ++n) {
      const int j = G.segs[G.node_seg[n]].vel;
      const double a = G.node_mu[n] * u[n];
      const Stencil& st = G.stencil[n];
      for (int e = 0; e < 4; ++e) y[static_cast<Eigen::Index>(st.idx[e]) * nv + j] += st.w[e] * a;
    }
    for (int c = 0; c < nc; ++c)
      for (int j = 0; j < nv; ++j) {
        auto& yy = y[static_cast<Eigen::Index>(c) * nv + j];
        yy = G.cell_mass[c] > 0 ? nv * yy / G.cell_mass[c] : 0.0;
      }
    return y;
  }

  // Node values of K applied through the moments y (or K^* when adjoint).
  Eigen::VectorXd expand(const Eigen::VectorXd& y, bool adjoint = false) const {
    const PhaseGrid& G = g();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(G.n_nodes());
    if (!scattering()) return out;
    if (isotropic()) {
      for (int n = 0; n < G.n_nodes(); ++n) {
        const Stencil& st = G.stencil[n];
        double a = 0;
        for (int e = 0; e < 4; ++e) a += st.w[e] * kc[st.idx[e]] * y[st.idx[e]];
        out[n] = a;
      }
      return out;
    }
    const int nc = G.cells.n_cells, nv = G.V.n;
    Eigen::MatrixXd Z(nv, nc);  // Z(j, c) = sum_j' M_c(j, j') y_{c, j'}
    for (int c = 0; c < nc; ++c) {
      const auto yc = y.segment(static_cast<Eigen::Index>(c) * nv, nv);
      const auto& M = kernel_matrix(c);
      Z.col(c) = adjoint ? Eigen::VectorXd(M.transpose() * yc) : Eigen::VectorXd(M * yc);
    }
    for (int n = 0; n < G.n_nodes(); ++n) {
      const int j = G.segs[G.node_seg[n]].vel;
      const Stencil& st = G.stencil[n];
      double a = 0;
      for (int e = 0; e < 4; ++e) a += st.w[e] * Z(j, st.idx[e]);
      out[n] = a;
    }
    return out;
  }

  Eigen::VectorXd K(const Eigen::VectorXd& u) const {
    if (!scattering()) return Eigen::VectorXd::Zero(u.size());
    return expand(restrict(u), false);
  }
  Eigen::VectorXd Kadj(const Eigen::VectorXd& u) const {
    if (!scattering()) return Eigen::VectorXd::Zero(u.size());
    return expand(restrict(u), true);
  }

  // v . grad u at nodes by differentiating the panel interpolant.
  Eigen::VectorXd derivative(const Eigen::VectorXd& u) const {
    const PhaseGrid& G = g();
    const int q = G.rule.q;
    Eigen::VectorXd d(G.n_nodes());
    for (const auto& s : G.segs)
      for (int p = 0; p < s.n_panels; ++p) {
        const double h = G.edges[s.panel_begin + p + 1] - G.edges[s.panel_begin + p];
        const int n0 = s.node_begin + p * q;
        for (int i = 0; i < q; ++i) {
          double a = 0;
          for (int k = 0; k < q; ++k) a += G.rule.D(i, k) * u[n0 + k];
          d[n0 + i] = 2.0 / h * a;
        }
      }
    return d;
  }

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    double s = 0;
    for (int n = 0; n < g().n_nodes(); ++n) s += g().node_mu[n] * a[n] * b[n];
    return s;
  }
  Eigen::VectorXd sigma_times(const Eigen::VectorXd& u) const {
    Eigen::VectorXd r(u.size());
    for (int n = 0; n < u.size(); ++n) r[n] = sig[n] * u[n];
    return r;
  }
};

// ---- norms ---------------------------------------------------------------

enum class NormKind { W, Wtilde, Lp_dxi, Lp_taudxi, Lstar_d2, Lp };
enum class BoundaryPart { C, complement, all };

inline constexpr double kTauClip = 1e-10;

inline double phase_lp(const PhaseGrid& G, const Eigen::VectorXd& u, double p,
                       const std::vector<double>* nodal_weight = nullptr) {
  if (std::isinf(p)) {
    double m = 0;
    for (int n = 0; n < G.n_nodes(); ++n) m = std::max(m, std::abs(u[n] * (nodal_weight ? (*nodal_weight)[n] : 1.0)));
    return m;
  }
  double s = 0;
  for (int n = 0; n < G.n_nodes(); ++n) {
    const double a = std::abs(u[n] * (nodal_weight ? (*nodal_weight)[n] : 1.0));
    s += G.node_mu[n] * std::pow(a, p);
  }
  return std::pow(s, 1.0 / p);
}

inline std::vector<double> tau_power(const PhaseGrid& G, double e) {
  std::vector<double> w(G.n_nodes());
  for (int n = 0; n < G.n_nodes(); ++n) w[n] = std::pow(std::max(G.segs[G.node_seg[n]].len(), kTauClip), e);
  return w;
}

inline double compute_norm(const TransportOps& ops, const PhaseField& u, NormKind which, double p) {
  const PhaseGrid& G = ops.g();
  if (!(p == 1 || p == 2 || std::isinf(p))) throw ValidationError("unsupported p");
  switch (which) {
    case NormKind::Lp:
      return phase_lp(G, u.val, p);
    case NormKind::W: {
      const double ip = std::isinf(p) ? 0.0 : 1.0 / p;
      const auto w1 = tau_power(G, 1.0 - ip), w0 = tau_power(G, -ip);
      return phase_lp(G, ops.derivative(u.val), p, &w1) + phase_lp(G, u.val, p, &w0);
    }
    case NormKind::Wtilde: {
      const auto w1 = tau_power(G, 1.0);
      return phase_lp(G, ops.derivative(u.val), p, &w1) + phase_lp(G, u.val, p);
    }
    default:
      throw ValidationError("boundary norm requested for a phase field");
  }
}

inline double boundary_norm(const PhaseGrid& G, const BoundarySet& C, const BoundaryField& b, NormKind which,
                            double p, BoundaryPart part = BoundaryPart::C) {
  if (!(p == 1 || p == 2 || std::isinf(p))) throw ValidationError("unsupported p");
  double s = 0, m = 0;
  auto add = [&](double val, const Segment& sg) {
    double w = sg.dxi;
    if (which == NormKind::Lp_taudxi) w *= std::max(sg.len(), kTauClip);
    m = std::max(m, std::abs(val));
    if (!std::isinf(p)) s += w * std::pow(std::abs(val), p);
  };
  for (int si = 0; si < G.n_segs(); ++si) {
    const Segment& sg = G.segs[si];
    const bool ex = C.exit_selected(si);
    if (which == NormKind::Lstar_d2 || part == BoundaryPart::all) {
      add(b.in[si], sg);
      add(b.out[si], sg);
    } else if (part == BoundaryPart::C) {
      add(ex ? b.out[si] : b.in[si], sg);
    } else {
      add(ex ? b.in[si] : b.out[si], sg);
    }
  }
  if (which == NormKind::Lstar_d2 && p != 1) throw ValidationError("Lstar_d2 is an L1 norm");
  return std::isinf(p) ? m : std::pow(s, 1.0 / p);
}

// ---- smallness ---------------------------------------------------------

struct SmallnessResult {
  bool certified = false;
  double margin = 0.0;
  double kappa = 0.0;  // kappa_p^{1/p} (p > 1) or sup sigma_s (p = 1)
  double tau_sup = 0.0;
  double tau_sigma_sup = 0.0;
};

inline SmallnessResult smallness_check(const TransportOps& ops, double p) {
  if (!(p >= 1)) throw ValidationError("smallness_check: p >= 1 required");
  const PhaseGrid& G = ops.g();
  const VelocitySphere& V = G.V;
  SmallnessResult r;
  r.tau_sup = G.max_chord();
  r.tau_sigma_sup = ops.max_tau_sigma;
  double kap = 0.0;
  if (ops.scattering()) {
    const bool xind = ops.coeffs.kernel_x_independent;
    const int ncell = xind ? 1 : G.cells.n_cells;
    for (int c = 0; c < ncell; ++c) {
      const Vec2 x = G.cells.position(c);
      if (p == 1.0) {
        for (int j = 0; j < V.n; ++j) kap = std::max(kap, sigma_s(ops.coeffs, V, x, V.dir[j]));
      } else {
        const double e = p / (p - 1.0);
        double outer = 0;
        for (int j = 0; j < V.n; ++j) {
          double inner = 0;
          for (int jp = 0; jp < V.n; ++jp) inner += V.w[jp] * std::pow(std::abs(ops.coeffs.k(x, V.dir[jp], V.dir[j])), e);
          outer += V.w[j] * std::pow(inner, p - 1.0);
        }
        kap = std::max(kap, std::pow(outer, 1.0 / p));
      }
    }
  }
  r.kappa = kap;
  const double rhs = std::exp(-r.tau_sigma_sup) / r.tau_sup;
  r.margin = rhs - kap;
  r.certified = r.margin > 0;
  return r;
}

}  // namespace boltzctl
