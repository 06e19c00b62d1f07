#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "solver.hpp"

namespace boltzctl {

// Exact control by layer peeling on an annulus B(c, r1) \ B(c, r0) cut into N
// concentric layers. All layers share one impact-parameter set, so the trace
// of layer k-1 on its outer circle is handed to layer k node for node.

using PhaseFn = std::function<double(const Vec2&, const Vec2&)>;
using GrazingFn = std::function<double(int layer, const Vec2&, const Vec2&)>;

struct LayerSpec {
  int n_v = 32;
  int n_r = 2;        // radial scattering cells per layer
  int n_theta = 0;    // 0 -> n_v
  int q = 4;
  int p_center = 32;  // lines through the hole
  int p_per_panel = 8;
  int p_source = 16;  // lines in the first layer panel (carries the diffusive source); 0 -> p_per_panel
  Strategy strategy = Strategy::automatic;
};

// Symmetric impact parameters with panels (rho_{k-1}, rho_k) and (-r0, r0).
inline std::vector<PNode> layer_p_nodes(const std::vector<double>& radii, const LayerSpec& sp) {
  if (sp.p_center < 2 || sp.p_per_panel < 2) throw ValidationError("layer line counts must be >= 2");
  std::vector<PNode> pos;
  for (size_t k = 1; k < radii.size(); ++k) {
    const int n = (k == 1 && sp.p_source > 0) ? sp.p_source : sp.p_per_panel;
    for (auto& nd : cosine_panel(radii[k - 1], radii[k], n)) pos.push_back({nd.x, nd.w});
  }
  const auto center = cosine_panel(-radii[0], radii[0], sp.p_center);
  std::vector<PNode> out;
  for (auto it = pos.rbegin(); it != pos.rend(); ++it) out.push_back({-it->p, it->dp});
  for (auto& nd : center) out.push_back({nd.x, nd.w});
  for (auto& p : pos) out.push_back(p);
  const size_t n = out.size();
  for (size_t i = 0; i < n / 2; ++i) {
    out[n - 1 - i].p = -out[i].p;
    out[n - 1 - i].dp = out[i].dp;
  }
  if (n % 2) out[n / 2].p = 0.0;
  return out;
}

struct LayerInfo {
  int k = 0;
  double r_in = 0.0, r_out = 0.0;
  SmallnessResult small;
  double tau_max = 0.0;    // longest discrete chord
  double tau_bound = 0.0;  // 2 sqrt(r_out^2 - r_in^2)
};

struct PeelPlan {
  int N = 1;
  Vec2 center = Vec2::Zero();
  std::vector<double> radii;
  std::vector<PNode> pnodes;
  LayerSpec spec;
  Coefficients coeffs;
  std::vector<LayerInfo> layers;
  bool all_certified = false;
  bool auto_N = false;

  std::shared_ptr<const PhaseGrid> layer_grid(int k) const {
    GridSpec g;
    g.n_v = spec.n_v;
    g.n_r = spec.n_r;
    g.n_theta = spec.n_theta;
    g.q = spec.q;
    g.sigma_bound = coeffs.sigma_sup;
    return PhaseGrid::build(Domain::annulus(center, radii[k - 1], radii[k]), g, {}, &pnodes);
  }
  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (auto& l : layers) m = std::min(m, l.small.margin);
    return m;
  }
};

inline PeelPlan make_peel_plan(double r0, double r1, const Coefficients& c, const LayerSpec& spec, int N,
                               Vec2 center = Vec2::Zero()) {
  if (N < 1) throw ValidationError("layer count must be >= 1");
  PeelPlan P;
  P.N = N;
  P.center = center;
  P.radii = annulus_layer_radii(r0, r1, N);
  P.spec = spec;
  P.coeffs = c;
  P.pnodes = layer_p_nodes(P.radii, spec);
  P.all_certified = true;
  for (int k = 1; k <= N; ++k) {
    const auto g = P.layer_grid(k);
    TransportOps ops(g, c);
    LayerInfo L;
    L.k = k;
    L.r_in = P.radii[k - 1];
    L.r_out = P.radii[k];
    L.small = smallness_check(ops, 1.0);
    L.tau_max = g->max_chord();
    L.tau_bound = annulus_sup_tau(L.r_in, L.r_out);
    P.all_certified = P.all_certified && L.small.certified;
    P.layers.push_back(L);
  }
  return P;
}

// Smallest N with every layer certified, starting from the guess
// kappa < sqrt(N) e^{-C sigma / sqrt(N)} / C with C = 2 sqrt(2 r1 (r1 - r0)).
inline PeelPlan auto_peel_plan(double r0, double r1, const Coefficients& c, const LayerSpec& spec, int cap = 4096,
                               Vec2 center = Vec2::Zero()) {
  const auto V = VelocitySphere::uniform(spec.n_v);
  double kappa = 0, sig = 0;
  for (int i = 0; i <= 8; ++i)
    for (int m = 0; m < 16; ++m) {
      const Vec2 x = center + (r0 + (r1 - r0) * i / 8.0) * unit_dir(kTwoPi * m / 16);
      for (int j = 0; j < V.n; ++j) {
        kappa = std::max(kappa, sigma_s(c, V, x, V.dir[j]));
        sig = std::max(sig, std::abs(c.sigma(x, V.dir[j])));
      }
    }
  const double C = 2.0 * std::sqrt(2.0 * r1 * (r1 - r0));
  int N = 1;
  while (N <= cap && !(kappa < std::sqrt(N) * std::exp(-C * sig / std::sqrt(N)) / C)) ++N;
  if (N > cap) N = cap;
  PeelPlan P = make_peel_plan(r0, r1, c, spec, N, center);
  while (!P.all_certified) {
    if (N >= cap)
      throw NumericalFailure("layer count cap reached; smallest layer margin " + std::to_string(P.min_margin()));
    P = make_peel_plan(r0, r1, c, spec, ++N, center);
  }
  while (N > 1) {
    PeelPlan Q = make_peel_plan(r0, r1, c, spec, N - 1, center);
    if (!Q.all_certified) break;
    P = std::move(Q);
    --N;
  }
  P.auto_N = true;
  return P;
}

enum class SegKind { inner_exit, inner_entry, grazing };

inline SegKind seg_kind(const Segment& s) {
  if (s.exit_circle == 0) return SegKind::inner_exit;
  if (s.entry_circle == 0) return SegKind::inner_entry;
  return SegKind::grazing;
}

// Layer boundary set: C_+ = exits on the inner circle.
inline BoundarySet layer_set(const PhaseGrid& g) {
  BoundarySet b;
  b.at_exit.resize(g.n_segs());
  for (int s = 0; s < g.n_segs(); ++s) b.at_exit[s] = g.segs[s].exit_circle == 0 ? 1 : 0;
  return b;
}

struct LayerSolution {
  std::shared_ptr<const PhaseGrid> grid;
  PhaseField u;
  PdeResidual residual;
  double solve_residual = 0.0;
};

inline LayerSolution solve_layer(std::shared_ptr<const PhaseGrid> g, const Coefficients& c, const BoundaryField& data,
                                 Strategy st) {
  TransportProblem pb;
  pb.grid = g;
  pb.coeffs = c;
  pb.set = layer_set(*g);
  pb.strategy = st;
  Solver S(pb);
  LayerSolution out;
  out.grid = g;
  auto sol = S.forward(data);
  out.u = std::move(sol.u);
  out.solve_residual = sol.residual;
  out.residual = pde_residual(S.ops, out.u.val);
  return out;
}

// Data for a layer given functions on its inner circle (both directions) and
// on the grazing entries.
inline BoundaryField layer_data(const PhaseGrid& g, const PhaseFn& inner, const PhaseFn& grazing) {
  auto b = BoundaryField::zeros(g);
  for (int s = 0; s < g.n_segs(); ++s) {
    const Vec2 v = g.V.dir[g.segs[s].vel];
    switch (seg_kind(g.segs[s])) {
      case SegKind::inner_exit: b.out[s] = inner(g.exit_pos(s), v); break;
      case SegKind::inner_entry: b.in[s] = inner(g.entry_pos(s), v); break;
      case SegKind::grazing: b.in[s] = grazing ? grazing(g.entry_pos(s), v) : 0.0; break;
    }
  }
  return b;
}

struct ExtensionResult {
  LayerSolution layer;
  double continuity_defect = 0.0;  // |u - u0| at inner-circle nodes
};

// Extend a solution known through its traces on the inner circle of an
// annular ring Y to Y itself, with data gamma on the grazing entries.
inline ExtensionResult extend_solution(const Domain& Y, const Coefficients& c, const GridSpec& spec, const PhaseFn& u0_trace,
                                       const PhaseFn& gamma, Strategy st = Strategy::automatic) {
  if (Y.kind != DomainKind::annulus) throw ValidationError("extension ring must be an annulus");
  const auto g = PhaseGrid::build(Y, spec);
  ExtensionResult r;
  r.layer = solve_layer(g, c, layer_data(*g, u0_trace, gamma), st);
  for (int s = 0; s < g->n_segs(); ++s) {
    const Vec2 v = g->V.dir[g->segs[s].vel];
    const auto k = seg_kind(g->segs[s]);
    if (k == SegKind::inner_exit) r.continuity_defect = std::max(r.continuity_defect, std::abs(r.layer.u.out[s] - u0_trace(g->exit_pos(s), v)));
    if (k == SegKind::inner_entry) r.continuity_defect = std::max(r.continuity_defect, std::abs(r.layer.u.in[s] - u0_trace(g->entry_pos(s), v)));
  }
  return r;
}

struct PeelResult {
  int N = 0;
  std::vector<LayerInfo> layers;
  std::vector<LayerSolution> solutions;  // kept when requested
  PdeResidual residual;
  double inner_defect = 0.0;     // max |u - beta| on the inner circle
  double interface_jump = 0.0;   // max trace mismatch between consecutive layers
  double l2_norm = 0.0;          // ||u||_{L^2(X x V)}
  bool all_certified = false;
};

using LayerCallback = std::function<void(int k, const LayerSolution&)>;

inline PeelResult layer_peel(const PeelPlan& P, const PhaseFn& beta, const GrazingFn& grazing, bool keep = true,
                             const LayerCallback& cb = {}) {
  PeelResult R;
  R.N = P.N;
  R.layers = P.layers;
  R.all_certified = P.all_certified;
  const int nl = static_cast<int>(P.pnodes.size());
  std::shared_ptr<const PhaseGrid> prev_g;
  PhaseField prev_u;
  double l2 = 0;
  for (int k = 1; k <= P.N; ++k) {
    const auto g = P.layer_grid(k);
    auto data = BoundaryField::zeros(*g);
    for (int s = 0; s < g->n_segs(); ++s) {
      const Segment& sg = g->segs[s];
      const Vec2 v = g->V.dir[sg.vel];
      const auto kind = seg_kind(sg);
      if (kind == SegKind::grazing) {
        data.in[s] = grazing ? grazing(k, g->entry_pos(s), v) : 0.0;
        continue;
      }
      if (k == 1) {
        if (kind == SegKind::inner_exit) data.out[s] = beta ? beta(g->exit_pos(s), v) : 0.0;
        else data.in[s] = beta ? beta(g->entry_pos(s), v) : 0.0;
        continue;
      }
      const int f = prev_g->line_first[static_cast<size_t>(sg.vel) * nl + sg.line];
      if (f < 0) throw std::logic_error("interface line missing in the previous layer");
      const int pieces = std::abs(sg.p) < prev_g->r_in() ? 2 : 1;
      if (kind == SegKind::inner_exit) data.out[s] = prev_u.in[f];
      else data.in[s] = prev_u.out[f + pieces - 1];
    }
    LayerSolution L = solve_layer(g, P.coeffs, data, P.spec.strategy);
    R.residual += L.residual;
    for (int n = 0; n < g->n_nodes(); ++n) l2 += g->node_mu[n] * L.u.val[n] * L.u.val[n];
    for (int s = 0; s < g->n_segs(); ++s) {
      const Segment& sg = g->segs[s];
      const auto kind = seg_kind(sg);
      if (kind == SegKind::grazing) continue;
      const double tr = kind == SegKind::inner_exit ? L.u.out[s] : L.u.in[s];
      if (k == 1) {
        const Vec2 v = g->V.dir[sg.vel];
        const double b = beta ? (kind == SegKind::inner_exit ? beta(g->exit_pos(s), v) : beta(g->entry_pos(s), v)) : 0.0;
        R.inner_defect = std::max(R.inner_defect, std::abs(tr - b));
      } else {
        const int f = prev_g->line_first[static_cast<size_t>(sg.vel) * nl + sg.line];
        const int pieces = std::abs(sg.p) < prev_g->r_in() ? 2 : 1;
        const double other = kind == SegKind::inner_exit ? prev_u.in[f] : prev_u.out[f + pieces - 1];
        R.interface_jump = std::max(R.interface_jump, std::abs(tr - other));
      }
    }
    if (cb) cb(k, L);
    prev_g = g;
    prev_u = L.u;
    if (keep) R.solutions.push_back(std::move(L));
  }
  R.l2_norm = std::sqrt(l2);
  return R;
}

struct UcpResult {
  double inner_trace_norm = 0.0;  // max |w| on the inner circle, both directions
  double l2_norm = 0.0;           // ||w||_{L^2(X x V)}
  double zero_extension_residual = 0.0;
  int N = 0;
};

// w = u_1 - u_2 for two peels with beta = 0 and outer grazing data gamma_1,
// gamma_2; w extended by zero into the hole.
inline UcpResult ucp_violation(const PeelPlan& P, const PhaseFn& gamma1, const PhaseFn& gamma2) {
  auto graze = [&](const PhaseFn& g) -> GrazingFn {
    return [&P, g](int k, const Vec2& x, const Vec2& v) { return k == P.N ? g(x, v) : 0.0; };
  };
  const auto R1 = layer_peel(P, nullptr, graze(gamma1));
  const auto R2 = layer_peel(P, nullptr, graze(gamma2));
  UcpResult out;
  out.N = P.N;
  PdeResidual res;
  double l2 = 0;
  for (int k = 0; k < P.N; ++k) {
    const auto& g = R1.solutions[k].grid;
    PhaseField w = R1.solutions[k].u;
    w -= R2.solutions[k].u;
    TransportOps ops(g, P.coeffs);
    res += pde_residual(ops, w.val);
    for (int n = 0; n < g->n_nodes(); ++n) l2 += g->node_mu[n] * w.val[n] * w.val[n];
    if (k == 0)
      for (int s = 0; s < g->n_segs(); ++s) {
        const auto kind = seg_kind(g->segs[s]);
        if (kind == SegKind::inner_exit) out.inner_trace_norm = std::max(out.inner_trace_norm, std::abs(w.out[s]));
        if (kind == SegKind::inner_entry) out.inner_trace_norm = std::max(out.inner_trace_norm, std::abs(w.in[s]));
      }
  }
  out.l2_norm = std::sqrt(l2);
  // zero extension: the hole contributes no residual, the interface only its
  // trace jump
  out.zero_extension_residual = std::max(res.relative(), out.inner_trace_norm);
  return out;
}

// ---- layer chords ----------------------------------------------------------

struct TauCheck {
  std::vector<double> tau_max;
  std::vector<double> bound;
  std::vector<bool> ok;
  bool all_ok = true;
};

inline TauCheck layer_tau_check(const PeelPlan& P) {
  TauCheck t;
  for (auto& L : P.layers) {
    t.tau_max.push_back(L.tau_max);
    const double b = (P.radii[0] == 1.0 && P.radii.back() == 2.0) ? annulus_layer_tau_bound(P.N, L.k) : L.tau_bound;
    t.bound.push_back(b);
    t.ok.push_back(L.tau_max <= b * (1 + 1e-12));
    t.all_ok = t.all_ok && t.ok.back();
  }
  return t;
}

// Longest chord of each layer {s_{k-1} < rho < s_k} of a convex level
// function, sampled over n_dir directions and n_p offsets per direction.
inline std::vector<double> levelset_layer_tau(const LevelSetFn& f, const std::vector<double>& levels, int n_dir = 32,
                                              int n_p = 400) {
  std::vector<double> out;
  for (size_t k = 1; k < levels.size(); ++k) {
    const auto Dhi = Domain::levelset(f, levels[k]);
    const bool has_inner = levels[k - 1] > -1.0;
    const auto Dlo = has_inner ? Domain::levelset(f, levels[k - 1]) : Dhi;
    double m = 0;
    for (int i = 0; i < n_dir; ++i) {
      const Vec2 v = unit_dir(std::numbers::pi * i / n_dir);
      const Vec2 n = perp(v);
      // offsets up to the support line of the outer level set
      double lo = 0.0, hi = 1.0;
      while (f.rho(hi * n) < levels[k]) hi *= 2.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f.rho(mid * n) < levels[k]) lo = mid;
        else hi = mid;
      }
      for (int sgn : {-1, 1})
        for (int a = 0; a < n_p; ++a) {
          Vec2 y = sgn * lo * (a + 0.5) / n_p * n;
          // move to the minimum of rho along the line (convex in t)
          double ta = -detail::levelset_exit(Dhi, y, -v), tb = detail::levelset_exit(Dhi, y, v);
          for (int it = 0; it < 100; ++it) {
            const double t1 = ta + (tb - ta) / 3, t2 = tb - (tb - ta) / 3;
            if (f.rho(y + t1 * v) < f.rho(y + t2 * v)) tb = t2;
            else ta = t1;
          }
          y += 0.5 * (ta + tb) * v;
          const double tp = detail::levelset_exit(Dhi, y, v), tm = detail::levelset_exit(Dhi, y, -v);
          double len = tp + tm;
          if (has_inner && f.rho(y) < levels[k - 1]) {
            const double ap = detail::levelset_exit(Dlo, y, v), am = detail::levelset_exit(Dlo, y, -v);
            len = std::max(tp - ap, tm - am);
          }
          m = std::max(m, len);
        }
    }
    out.push_back(m);
  }
  return out;
}

// ---- diffusive experiment --------------------------------------------------

// rho(s) = c exp(-1/(1 - s^2)) on (-1, 1), unit mass.
inline double mollifier(double s) {
  static const double c = [] {
    boost::math::quadrature::tanh_sinh<double> ts;
    return 1.0 / ts.integrate([](double t) { return std::exp(-1.0 / (1.0 - t * t)); }, -1.0, 1.0);
  }();
  if (std::abs(s) >= 1.0) return 0.0;
  return c * std::exp(-1.0 / (1.0 - s * s));
}

struct DiffusiveRow {
  int k = 0;
  double layer_margin = 0.0;
  double tau_max = 0.0;
  double f0_norm = 0.0;
  double f1_norm = 0.0;
  double observable = 0.0;
};

struct DiffusiveRun {
  double eps = 1.0, eta = 0.0;
  int N = 0;
  int N_formula = 0;
  bool override_warning = false;
  bool scattering = true;
  double phi_norm = 0.0;
  double phi_lo = 0.0, phi_hi = 0.0;  // |V||S^0| bracket, equal in d = 2
  double observable = 0.0;            // int_{U_eta} u dxi on the outer circle
  double ballistic_bound = 0.0;       // e^{(1 - 1/N)/eps} |V| |S^0|
  double ratio = 0.0;
  double delta_grid = 0.2;
  double residual = 0.0;
  bool all_certified = false;
  std::vector<DiffusiveRow> rows;
};

inline int diffusive_layer_count(double eps) { return static_cast<int>(std::floor(16.0 / (eps * eps))) + 1; }

inline DiffusiveRun diffusive_experiment(double eps, double eta, LayerSpec spec, int N_override = 0,
                                         bool zero_kernel = false) {
  if (!(eps > 0)) throw ValidationError("eps must be positive");
  DiffusiveRun run;
  run.eps = eps;
  run.N_formula = diffusive_layer_count(eps);
  run.N = N_override > 0 ? N_override : run.N_formula;
  run.override_warning = N_override > 0 && N_override < run.N_formula;
  if (eta <= 0) eta = 1.0 / (2.0 * run.N);
  run.eta = eta;
  if (eta > 1.0 / (2.0 * run.N) * (1 + 1e-12)) throw ValidationError("eta must not exceed 1/(2N)");
  run.scattering = !zero_kernel;
  const Coefficients c = zero_kernel ? Coefficients::constant(1.0 / eps, 0.0) : Coefficients::diffusive(eps);
  const int N = run.N;
  const PeelPlan P = make_peel_plan(1.0, 2.0, c, spec, N);
  run.all_certified = P.all_certified;
  const double r1 = P.radii[1];
  const double mid = 1.0 + 1.0 / (2.0 * N);
  auto rho_eta = [&](double p) { return mollifier((mid - std::abs(p)) / eta) / eta; };
  int resolved = 0;
  for (auto& nd : P.pnodes)
    if (nd.p > mid - eta && nd.p < mid + eta) ++resolved;
  if (resolved < 4) throw ValidationError("impact-parameter grid does not resolve eta (fewer than 4 lines)");

  auto in_source = [&](double p) { return std::abs(p) > 1.0 && std::abs(p) < r1; };
  run.rows.resize(N);
  auto cb = [&](int k, const LayerSolution& L) {
    const PhaseGrid& g = *L.grid;
    const double rk = P.radii[k];
    DiffusiveRow& row = run.rows[k - 1];
    row.k = k;
    row.layer_margin = P.layers[k - 1].small.margin;
    row.tau_max = P.layers[k - 1].tau_max;
    const int nl = g.n_lines();
    for (int j = 0; j < g.V.n; ++j)
      for (int a = 0; a < nl; ++a) {
        const int f = g.line_first[static_cast<size_t>(j) * nl + a];
        if (f < 0) continue;
        const double p = g.pnodes[a].p;
        const int pieces = std::abs(p) < g.r_in() ? 2 : 1;
        const int lst = f + pieces - 1;
        const double dxi = g.segs[f].dxi;
        // ballistic part on the circle of radius rk
        double f0_in = 0, f0_out = 0;
        if (in_source(p)) {
          const double a1 = std::sqrt(r1 * r1 - p * p), ak = std::sqrt(rk * rk - p * p);
          const double ph = rho_eta(p);
          const double e_in = (ak - a1) / eps, e_out = -(ak + a1) / eps;
          if (e_in > kLogGuard) throw NumericalFailure("ballistic exponent beyond the log guard");
          f0_in = std::exp(e_in) * ph;
          f0_out = std::exp(e_out) * ph;
          row.observable += L.u.in[f] * dxi;
        }
        const double t_in = L.u.in[f], t_out = L.u.out[lst];
        row.f0_norm += (std::abs(f0_in) + std::abs(f0_out)) * dxi;
        row.f1_norm += (std::abs(t_in - f0_in) + std::abs(t_out - f0_out)) * dxi;
      }
    if (k == 1) {
      for (int s = 0; s < g.n_segs(); ++s)
        if (seg_kind(g.segs[s]) == SegKind::grazing) run.phi_norm += std::abs(rho_eta(g.segs[s].p)) * g.segs[s].dxi;
    }
  };
  GrazingFn graze = [&](int k, const Vec2& x, const Vec2& v) {
    if (k != 1) return 0.0;
    const double p = impact_parameter(x, v, P.center);
    return rho_eta(p);
  };
  const PeelResult R = layer_peel(P, nullptr, graze, false, cb);
  run.residual = R.residual.relative();
  run.observable = run.rows.back().observable;
  run.phi_lo = run.phi_hi = kTwoPi * 2.0;
  run.ballistic_bound = std::exp((1.0 - 1.0 / N) / eps) * kTwoPi * 2.0;
  run.ratio = run.observable / run.ballistic_bound;
  return run;
}

}  // namespace boltzctl
