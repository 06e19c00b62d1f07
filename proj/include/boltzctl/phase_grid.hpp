#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "geometry.hpp"
#include "quadrature.hpp"

namespace boltzctl {

// Discretization of X x V for radial domains by straight characteristics.
//
// Lines are indexed by a velocity v_j and an impact parameter p_a shared by
// all velocities: {c + p_a v_j^perp + s v_j}. Each line is clipped to the
// domain (two pieces when it crosses the hole of an annulus); each piece is a
// Segment carrying composite Gauss-Legendre panels. Boundary phase points are
// the segment endpoints, with d xi = dp_a w_j at both ends. Scattering acts
// through a polar node grid (r, theta) with bilinear hat functions.

struct GridSpec {
  int n_v = 32;
  int n_p = 0;       // lines per velocity; 0 -> 4 r_out n_r / (r_out - r_in)
  int n_r = 16;      // radial cells of the scattering grid
  int n_theta = 0;   // angular cells; 0 -> n_v
  int q = 4;         // GL points per panel
  double panel_len = 0.0;  // 0 -> 2 (r_out - r_in) / n_r
  double sigma_bound = 0.0;  // panels keep optical depth <= max_depth
  double max_depth = 0.5;
  int p_min_per_panel = 2;
};

struct PNode {
  double p;
  double dp;
};

struct Segment {
  int vel = 0;
  int line = 0;   // impact parameter index
  int piece = 0;  // 0 or 1 along the line
  double p = 0.0;
  double s0 = 0.0, s1 = 0.0;  // line coordinates of entry and exit
  int entry_circle = 1, exit_circle = 1;  // 0 inner, 1 outer
  int node_begin = 0, n_nodes = 0;
  int panel_begin = 0, n_panels = 0;  // into edge array (n_panels + 1 edges)
  double dxi = 0.0;
  double len() const { return s1 - s0; }
};

struct Stencil {
  std::array<int, 4> idx;
  std::array<double, 4> w;
};

// Polar node grid carrying the hat functions used by the scattering operator.
struct CellGrid {
  Vec2 c = Vec2::Zero();
  double r_min = 0.0, r_max = 1.0;
  int n_r = 1, n_theta = 4;
  bool center_node = false;
  int n_cells = 0;

  CellGrid() = default;
  CellGrid(Vec2 c_, double r0, double r1, int nr, int nt) : c(c_), r_min(r0), r_max(r1), n_r(nr), n_theta(nt) {
    center_node = r0 == 0.0;
    n_cells = center_node ? n_r * n_theta + 1 : (n_r + 1) * n_theta;
  }
  int index(int i, int m) const {
    m = ((m % n_theta) + n_theta) % n_theta;
    if (center_node) return i == 0 ? 0 : 1 + (i - 1) * n_theta + m;
    return i * n_theta + m;
  }
  Vec2 position(int cell) const {
    int i, m;
    if (center_node) {
      if (cell == 0) return c;
      i = 1 + (cell - 1) / n_theta;
      m = (cell - 1) % n_theta;
    } else {
      i = cell / n_theta;
      m = cell % n_theta;
    }
    const double r = r_min + (r_max - r_min) * i / n_r;
    return c + r * unit_dir(kTwoPi * m / n_theta);
  }
  Stencil stencil(const Vec2& x) const {
    const Vec2 y = x - c;
    const double r = y.norm();
    double t = (r - r_min) / (r_max - r_min) * n_r;
    t = std::clamp(t, 0.0, static_cast<double>(n_r));
    int i = std::min(static_cast<int>(t), n_r - 1);
    const double a = t - i;
    double th = std::atan2(y.y(), y.x());
    if (th < 0) th += kTwoPi;
    double u = th / kTwoPi * n_theta;
    int m = std::min(static_cast<int>(u), n_theta - 1);
    const double b = u - m;
    Stencil s;
    s.idx = {index(i, m), index(i, m + 1), index(i + 1, m), index(i + 1, m + 1)};
    s.w = {(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b};
    return s;
  }
};

// Impact parameters on (-R, R) with panel breaks at +-(each radius), cosine
// clustering inside panels, exactly symmetric under p -> -p.
inline std::vector<PNode> make_p_nodes(double r_out, std::vector<double> radii, int n_p, int min_per_panel = 2) {
  std::vector<double> br;
  std::sort(radii.begin(), radii.end());
  for (double r : radii)
    if (r > 0 && r < r_out) br.push_back(r);
  br.erase(std::unique(br.begin(), br.end()), br.end());
  std::vector<double> edges;
  edges.push_back(-r_out);
  for (auto it = br.rbegin(); it != br.rend(); ++it) edges.push_back(-*it);
  for (double r : br) edges.push_back(r);
  edges.push_back(r_out);
  std::vector<PNode> nodes;
  for (size_t e = 0; e + 1 < edges.size(); ++e) {
    const double a = edges[e], b = edges[e + 1];
    int cnt = std::max(min_per_panel, static_cast<int>(std::lround(n_p * (b - a) / (2 * r_out))));
    for (auto& nd : cosine_panel(a, b, cnt)) nodes.push_back({nd.x, nd.w});
  }
  const size_t n = nodes.size();
  for (size_t i = 0; i < n / 2; ++i) {
    nodes[n - 1 - i].p = -nodes[i].p;
    nodes[n - 1 - i].dp = nodes[i].dp;
  }
  if (n % 2) nodes[n / 2].p = 0.0;
  return nodes;
}

class PhaseGrid {
 public:
  Domain domain;
  GridSpec spec;
  VelocitySphere V;
  std::vector<PNode> pnodes;
  std::vector<Segment> segs;
  std::vector<double> edges;    // panel edges, relative to the segment entry
  std::vector<double> node_t;   // node coordinate relative to the segment entry
  std::vector<double> node_mu;  // phase measure weight
  std::vector<int> node_seg;
  std::vector<Stencil> stencil;
  CellGrid cells;
  std::vector<double> cell_mass;
  std::vector<std::vector<int>> cell_segs;
  std::vector<int> rev_seg;  // segment traversed in the opposite direction
  std::vector<int> line_first;  // per (vel, line): first segment index, or -1
  PanelRule rule;

  int n_nodes() const { return static_cast<int>(node_t.size()); }
  int n_segs() const { return static_cast<int>(segs.size()); }
  int n_lines() const { return static_cast<int>(pnodes.size()); }
  double r_in() const { return domain.kind == DomainKind::annulus ? domain.r_in : 0.0; }
  double r_out() const { return domain.r_out; }

  Vec2 normal_dir(int j) const { return perp(V.dir[j]); }
  Vec2 point(const Segment& s, double t) const {
    return domain.center + s.p * normal_dir(s.vel) + (s.s0 + t) * V.dir[s.vel];
  }
  Vec2 node_pos(int n) const { return point(segs[node_seg[n]], node_t[n]); }
  Vec2 entry_pos(int s) const { return point(segs[s], 0.0); }
  Vec2 exit_pos(int s) const { return point(segs[s], segs[s].len()); }
  int rev_node(int n) const {
    const Segment& s = segs[node_seg[n]];
    const Segment& r = segs[rev_seg[node_seg[n]]];
    return r.node_begin + (s.n_nodes - 1 - (n - s.node_begin));
  }
  double max_chord() const {
    double m = 0;
    for (auto& s : segs) m = std::max(m, s.len());
    return m;
  }

  static std::shared_ptr<PhaseGrid> build(const Domain& D, const GridSpec& spec_in,
                                          const std::vector<double>& interfaces = {},
                                          const std::vector<PNode>* p_override = nullptr) {
    if (D.kind == DomainKind::levelset) throw std::invalid_argument("phase grids need a disk or annulus");
    auto g = std::make_shared<PhaseGrid>();
    g->domain = D;
    GridSpec sp = spec_in;
    if (sp.n_r < 1 || sp.n_v < 4) throw std::invalid_argument("grid resolution too small");
    if (sp.n_theta <= 0) sp.n_theta = sp.n_v;
    const double R = D.r_out, r0 = g->r_in();
    // line spacing about half the radial cell width
    if (sp.n_p <= 0) sp.n_p = static_cast<int>(std::ceil(4.0 * R * sp.n_r / (R - r0)));
    if (sp.panel_len <= 0) sp.panel_len = 2.0 * (R - r0) / sp.n_r;
    g->spec = sp;
    g->V = VelocitySphere::uniform(sp.n_v);
    g->rule = PanelRule(sp.q);
    if (p_override) {
      g->pnodes = *p_override;
    } else {
      std::vector<double> radii = interfaces;
      if (r0 > 0) radii.push_back(r0);
      g->pnodes = make_p_nodes(R, radii, sp.n_p, sp.p_min_per_panel);
    }
    g->cells = CellGrid(D.center, r0, R, sp.n_r, sp.n_theta);
    g->assemble_segments();
    g->assemble_nodes();
    return g;
  }

 private:
  void assemble_segments() {
    const int nl = n_lines();
    const double R = r_out(), r0 = r_in();
    line_first.assign(static_cast<size_t>(V.n) * nl, -1);
    for (int j = 0; j < V.n; ++j)
      for (int a = 0; a < nl; ++a) {
        const double p = pnodes[a].p;
        if (std::abs(p) >= R) continue;
        const double so = std::sqrt(R * R - p * p);
        line_first[static_cast<size_t>(j) * nl + a] = static_cast<int>(segs.size());
        Segment s;
        s.vel = j;
        s.line = a;
        s.p = p;
        s.dxi = pnodes[a].dp * V.w[j];
        if (r0 > 0 && std::abs(p) < r0) {
          const double si = std::sqrt(r0 * r0 - p * p);
          s.piece = 0;
          s.s0 = -so;
          s.s1 = -si;
          s.entry_circle = 1;
          s.exit_circle = 0;
          segs.push_back(s);
          s.piece = 1;
          s.s0 = si;
          s.s1 = so;
          s.entry_circle = 0;
          s.exit_circle = 1;
          segs.push_back(s);
        } else {
          s.piece = 0;
          s.s0 = -so;
          s.s1 = so;
          segs.push_back(s);
        }
      }
    rev_seg.assign(segs.size(), -1);
    for (size_t i = 0; i < segs.size(); ++i) {
      const Segment& s = segs[i];
      const int jr = V.opposite(s.vel), ar = nl - 1 - s.line;
      const int f = line_first[static_cast<size_t>(jr) * nl + ar];
      const int pieces = (r0 > 0 && std::abs(s.p) < r0) ? 2 : 1;
      if (f < 0 || pnodes[ar].p != -s.p) throw std::logic_error("impact parameters not symmetric");
      rev_seg[i] = f + (pieces - 1 - s.piece);
    }
  }

  void assemble_nodes() {
    const int q = rule.q;
    const double depth = spec.max_depth;
    for (auto& s : segs) {
      const double L = s.len();
      int P = std::max(1, static_cast<int>(std::ceil(L / spec.panel_len - 1e-9)));
      if (spec.sigma_bound > 0) P = std::max(P, static_cast<int>(std::ceil(L * spec.sigma_bound / depth - 1e-9)));
      s.panel_begin = static_cast<int>(edges.size());
      s.n_panels = P;
      for (int i = 0; i <= P; ++i) edges.push_back(L * i / P);
      s.node_begin = static_cast<int>(node_t.size());
      s.n_nodes = P * q;
      const int sid = static_cast<int>(&s - segs.data());
      for (int i = 0; i < P; ++i) {
        const double a = edges[s.panel_begin + i], b = edges[s.panel_begin + i + 1];
        for (int k = 0; k < q; ++k) {
          node_t.push_back(0.5 * (a + b) + 0.5 * (b - a) * rule.gl.x[k]);
          node_mu.push_back(s.dxi * 0.5 * (b - a) * rule.gl.w[k]);
          node_seg.push_back(sid);
        }
      }
    }
    const int nn = n_nodes();
    stencil.resize(nn);
    cell_mass.assign(cells.n_cells, 0.0);
    for (int n = 0; n < nn; ++n) {
      stencil[n] = cells.stencil(node_pos(n));
      for (int e = 0; e < 4; ++e) cell_mass[stencil[n].idx[e]] += node_mu[n] * stencil[n].w[e];
    }
    cell_segs.assign(cells.n_cells, {});
    std::vector<int> touched;
    for (int si = 0; si < n_segs(); ++si) {
      touched.clear();
      const Segment& s = segs[si];
      for (int n = s.node_begin; n < s.node_begin + s.n_nodes; ++n)
        for (int e = 0; e < 4; ++e)
          if (stencil[n].w[e] != 0.0) touched.push_back(stencil[n].idx[e]);
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (int c : touched) cell_segs[c].push_back(si);
    }
  }
};

// Boundary set: for every segment, whether its data point is the exit
// (C_+) or the entry (C_-).
struct BoundarySet {
  std::vector<std::uint8_t> at_exit;

  static BoundarySet incoming(const PhaseGrid& g) { return {std::vector<std::uint8_t>(g.n_segs(), 0)}; }
  static BoundarySet outgoing(const PhaseGrid& g) { return {std::vector<std::uint8_t>(g.n_segs(), 1)}; }
  BoundarySet complement() const {
    BoundarySet b = *this;
    for (auto& a : b.at_exit) a = !a;
    return b;
  }
  bool exit_selected(int s) const { return at_exit[s] != 0; }
};

// C_- = Gamma_- minus lines whose outgoing endpoint is in C_+.
template <class Pred>
BoundarySet derive_Cminus(const PhaseGrid& g, Pred cplus) {
  BoundarySet b;
  b.at_exit.resize(g.n_segs());
  for (int s = 0; s < g.n_segs(); ++s) b.at_exit[s] = cplus(g.exit_pos(s), g.V.dir[g.segs[s].vel]) ? 1 : 0;
  return b;
}

inline BoundarySet random_boundary_set(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BoundarySet b;
  b.at_exit.resize(g.n_segs());
  for (auto& a : b.at_exit) a = static_cast<std::uint8_t>(rng() & 1u);
  return b;
}

// Exactly one endpoint of every discrete line lies in C, checked from the
// geometric classification of both endpoints.
inline bool check_one_endpoint(const PhaseGrid& g, const BoundarySet& b) {
  for (int s = 0; s < g.n_segs(); ++s) {
    const Vec2 v = g.V.dir[g.segs[s].vel];
    const Vec2 xe = g.entry_pos(s), xo = g.exit_pos(s);
    const bool entry_in = classify(g.domain, xe, v) == BoundaryClass::incoming;
    const bool exit_out = classify(g.domain, xo, v) == BoundaryClass::outgoing;
    if (!entry_in || !exit_out) return false;
    const bool in_cplus = b.exit_selected(s);
    const bool in_cminus = entry_in && !in_cplus;
    if (static_cast<int>(in_cplus) + static_cast<int>(in_cminus) != 1) return false;
  }
  return true;
}

struct BoundaryNode {
  Vec2 x, v, nu;
  double dxi, dmu;
  BoundaryClass cls;
  int seg;
  bool is_exit;
};

// Boundary phase points induced by the line family.
inline std::vector<BoundaryNode> boundary_nodes(const PhaseGrid& g) {
  std::vector<BoundaryNode> out;
  out.reserve(2 * g.n_segs());
  for (int s = 0; s < g.n_segs(); ++s) {
    const Segment& sg = g.segs[s];
    const Vec2 v = g.V.dir[sg.vel];
    for (int e = 0; e < 2; ++e) {
      BoundaryNode b;
      b.x = e ? g.exit_pos(s) : g.entry_pos(s);
      b.v = v;
      b.nu = g.domain.normal(b.x);
      b.cls = classify(g.domain, b.x, v);
      const double c = std::abs(b.nu.dot(v));
      b.dxi = b.cls == BoundaryClass::tangential ? 0.0 : sg.dxi;
      b.dmu = c > 0 ? b.dxi / (c * g.V.w[sg.vel]) : 0.0;
      b.seg = s;
      b.is_exit = e == 1;
      out.push_back(b);
    }
  }
  return out;
}

// Values at interior nodes plus one-sided traces at both segment endpoints.
struct PhaseField {
  Eigen::VectorXd val, in, out;

  static PhaseField zeros(const PhaseGrid& g) {
    return {Eigen::VectorXd::Zero(g.n_nodes()), Eigen::VectorXd::Zero(g.n_segs()), Eigen::VectorXd::Zero(g.n_segs())};
  }
  PhaseField& operator+=(const PhaseField& o) {
    val += o.val;
    in += o.in;
    out += o.out;
    return *this;
  }
  PhaseField& operator-=(const PhaseField& o) {
    val -= o.val;
    in -= o.in;
    out -= o.out;
    return *this;
  }
  PhaseField& operator*=(double a) {
    val *= a;
    in *= a;
    out *= a;
    return *this;
  }
};

// Values at segment entry/exit points; only the entries relevant to the
// selected subset are read by consumers.
struct BoundaryField {
  Eigen::VectorXd in, out;

  static BoundaryField zeros(const PhaseGrid& g) {
    return {Eigen::VectorXd::Zero(g.n_segs()), Eigen::VectorXd::Zero(g.n_segs())};
  }
  template <class F>
  static BoundaryField sample(const PhaseGrid& g, F f) {
    BoundaryField b = zeros(g);
    for (int s = 0; s < g.n_segs(); ++s) {
      const Vec2 v = g.V.dir[g.segs[s].vel];
      b.in[s] = f(g.entry_pos(s), v);
      b.out[s] = f(g.exit_pos(s), v);
    }
    return b;
  }
  static BoundaryField from_trace(const PhaseField& u) { return {u.in, u.out}; }
};

template <class F>
Eigen::VectorXd sample_nodes(const PhaseGrid& g, F f) {
  Eigen::VectorXd u(g.n_nodes());
  for (int n = 0; n < g.n_nodes(); ++n) u[n] = f(g.node_pos(n), g.V.dir[g.segs[g.node_seg[n]].vel]);
  return u;
}

}  // namespace boltzctl
