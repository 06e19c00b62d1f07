// Runs the thirteen acceptance checks and prints one PASS/FAIL line each.
// Exit status is the number of failing checks.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "boltzctl/cli.hpp"

using namespace boltzctl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::shared_ptr<const PhaseGrid> grid(const Domain& D, int nv, int nr, int nth, double sb = 0.0) {
  GridSpec sp;
  sp.n_v = nv;
  sp.n_r = nr;
  sp.n_theta = nth;
  sp.sigma_bound = sb;
  return PhaseGrid::build(D, sp);
}

TransportProblem problem(std::shared_ptr<const PhaseGrid> g, Coefficients c, BoundarySet C, Strategy st = Strategy::automatic) {
  TransportProblem p;
  p.grid = std::move(g);
  p.coeffs = std::move(c);
  p.set = std::move(C);
  p.strategy = st;
  return p;
}

BoundaryField random_boundary(const PhaseGrid& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  auto b = BoundaryField::zeros(g);
  for (int s = 0; s < g.n_segs(); ++s) {
    b.in[s] = N(rng);
    b.out[s] = N(rng);
  }
  return b;
}

Outcome free_streaming() {
  const auto t0 = Clock::now();
  const auto D = Domain::disk({0, 0}, 2.0);
  const double sig = 0.8;
  auto gfun = [](const Vec2& x, const Vec2& v) { return 1.5 + std::sin(x.x() + 2 * x.y()) * (1 + 0.5 * v.x()); };
  const auto g = grid(D, 64, 64, 64, sig);
  Solver S(problem(g, Coefficients::constant(sig, 0.0), BoundarySet::incoming(*g)));
  const auto sol = S.forward(BoundaryField::sample(*g, gfun));
  double err = 0;
  for (int n = 0; n < g->n_nodes(); ++n) {
    const Vec2 x = g->node_pos(n), v = g->V.dir[g->segs[g->node_seg[n]].vel];
    const double tm = travel_time(D, x, v, Side::minus);
    const double ref = gfun(x - tm * v, v) * std::exp(-sig * tm);
    err = std::max(err, std::abs(sol.u.val[n] - ref) / std::abs(ref));
  }
  const double t = seconds_since(t0);
  return {err < 1e-6 && t < 10, fmt::format("max rel err {:.2e} (< 1e-6), {} nodes, {:.1f} s (< 10 s)", err, g->n_nodes(), t)};
}

Outcome conservative() {
  const auto g = grid(Domain::disk({0, 0}, 2.0), 64, 64, 64);
  Solver S(problem(g, Coefficients::constant(1.0, 1.0 / kTwoPi), BoundarySet::incoming(*g)));
  auto one = BoundaryField::zeros(*g);
  one.in.setOnes();
  one.out.setOnes();
  const auto sol = S.forward(one);
  const double err = (sol.u.val.array() - 1.0).abs().maxCoeff();
  return {err < 1e-5, fmt::format("||u - 1||_inf = {:.2e} (< 1e-5), method {}", err, sol.method)};
}

Outcome lifting() {
  const auto g = grid(Domain::annulus({0, 0}, 1.0, 2.0), 32, 16, 0);
  TransportOps ops(g, Coefficients::constant(0, 0));
  double worst = 0;
  int cases = 0;
  std::vector<BoundarySet> sets{BoundarySet::incoming(*g), BoundarySet::outgoing(*g), random_boundary_set(*g, 3)};
  for (const auto& C : sets)
    for (int trial = 0; trial < 20; ++trial) {
      const auto b = random_boundary(*g, 1000 + trial);
      const auto u = ops.J(C, b);
      for (double p : {1.0, 2.0}) {
        const double lhs = compute_norm(ops, u, NormKind::W, p), rhs = boundary_norm(*g, C, b, NormKind::Lp_dxi, p);
        worst = std::max(worst, std::abs(lhs - rhs) / rhs);
        ++cases;
      }
    }
  return {worst < 1e-8, fmt::format("max rel gap {:.2e} (< 1e-8) over {} cases", worst, cases)};
}

Outcome green() {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  const auto c = Coefficients::constant(1.0, 0.5 / kTwoPi);
  auto worst_at = [&](int n_r, int n_th) {
    const auto g = grid(D, 64, n_r, n_th, 1.0);
    Solver S(problem(g, c, BoundarySet::incoming(*g)));
    double worst = 0;
    for (int t = 0; t < 10; ++t)
      worst = std::max(worst, green_residual(S, random_boundary(*g, 50 + t), random_boundary(*g, 80 + t)).residual);
    return worst;
  };
  const double coarse = worst_at(48, 48), fine = worst_at(96, 96);
  const bool refine_ok = fine > 0 ? coarse / fine >= 1.5 : false;
  return {coarse < 1e-5 && fine < 1e-5 && refine_ok,
          fmt::format("residual {:.2e} at 48x48x64, {:.2e} at 96x96x64 (< 1e-5); refinement ratio {:.2f} (>= 1.5)", coarse,
                      fine, fine > 0 ? coarse / fine : 0.0)};
}

Outcome travel() {
  const auto D = Domain::annulus({0, 0}, 1.0, 2.0);
  const double formula = annulus_sup_tau(1.0, 2.0), exact = 2 * std::sqrt(3.0);
  // chords of lines x = (t, p) missing the hole; the supremum is approached as p -> 1
  double sampled = 0;
  for (int k = 0; k <= 4000; ++k) {
    const double p = 1.0 + 1e-12 + (1.0 - 2e-12) * std::pow(k / 4000.0, 2);
    const Vec2 x(0.0, p), v(1.0, 0.0);
    sampled = std::max(sampled, chord_tau(D, x, v));
  }
  const double e1 = std::abs(formula - exact), e2 = std::abs(sampled - exact);
  return {e1 < 1e-9 && e2 < 1e-9, fmt::format("formula {:.12f}, sampled sup {:.12f}, 2 sqrt 3 = {:.12f}", formula, sampled, exact)};
}

Outcome fredholm() {
  const auto disk = Domain::disk({0, 0}, 1.0);
  SweepOptions o;
  o.grid.n_v = 16;
  o.grid.n_r = 6;
  o.N_target = 1;
  o.rayleigh = false;
  const auto S = eigencount_vs_C(disk, 1.0 / kTwoPi, {}, {0, 0}, 0.5, o);
  if (!S.reached_target) return {false, "eigensweep found no eigenvalue above 1"};
  const auto& hit = S.rows.back();
  const double mu = hit.crossing.front();
  GridSpec sp = o.grid;
  sp.sigma_bound = hit.C;
  const auto g = PhaseGrid::build(disk, sp);
  auto diag = [&](double lam) {
    return Solver(problem(g, Coefficients::constant(hit.C, lam / kTwoPi), BoundarySet::incoming(*g), Strategy::direct))
        .kernel_diagnostics();
  };
  const auto at = diag(1.0 / mu), half = diag(0.5 / mu);
  const double drop = half.singular_values[0] / at.singular_values[0];
  const bool ok = drop >= 10 && at.unit_eig_count == at.small_sv_count && at.unit_eig_count >= 1;
  return {ok, fmt::format("C = {:.3f}, mu0 = {:.4f}; smallest sv {:.2e} at 1/mu0 vs {:.2e} at 0.5/mu0 (drop >= 10); unit eigs {} "
                          "vs small svs {}",
                          hit.C, mu, at.singular_values[0], half.singular_values[0], at.unit_eig_count, at.small_sv_count)};
}

Outcome peeling() {
  const auto t0 = Clock::now();
  const auto c = Coefficients::constant(1.0, 1.0 / kTwoPi);
  const auto P = make_peel_plan(1.0, 2.0, c, LayerSpec{}, diffusive_layer_count(1.0));
  auto beta = [](const Vec2& x, const Vec2& v) { return 1.0 + 0.3 * x.x() * v.y() + 0.2 * std::sin(3 * std::atan2(x.y(), x.x())); };
  const auto R = layer_peel(P, beta, {}, false);
  const double t = seconds_since(t0);
  const double res = R.residual.relative();
  int negative = 0;
  for (const auto& L : P.layers) negative += L.small.margin > 0 ? 0 : 1;
  const bool ok = R.inner_defect == 0.0 && res < 5e-3 && negative == 0 && t < 120;
  return {ok, fmt::format("N = {}; inner defect {:.1e}; residual {:.2e} (< 5e-3); {} of {} layer margins not positive "
                          "(min {:.3f}); {:.1f} s (< 120 s)",
                          P.N, R.inner_defect, res, negative, P.N, P.min_margin(), t)};
}

Outcome ucp() {
  const auto c = Coefficients::constant(1.0, 0.1 / kTwoPi);
  LayerSpec sp;
  const auto P = auto_peel_plan(1.0, 2.0, c, sp);
  const auto U = ucp_violation(P, [](const Vec2&, const Vec2&) { return 1.0; },
                               [](const Vec2& x, const Vec2&) { return 1.0 + 0.5 * x.x(); });
  const bool ok = U.l2_norm > 1e-3 && U.inner_trace_norm < 1e-8 && U.zero_extension_residual < 5e-3;
  return {ok, fmt::format("N = {}; ||w||_L2 = {:.3e} (> 1e-3); inner trace {:.1e} (< 1e-8); zero-extension residual {:.2e} "
                          "(< 5e-3)",
                          U.N, U.l2_norm, U.inner_trace_norm, U.zero_extension_residual)};
}

Outcome diffusive() {
  const auto t0 = Clock::now();
  const auto run = diffusive_experiment(1.0, 0.0, LayerSpec{});
  const double t = seconds_since(t0);
  const double target = 2 * kTwoPi, rel = std::abs(run.phi_norm - target) / target;
  const double bound = 0.8 * std::exp(1.0 - 1.0 / 17.0) * 2 * kTwoPi;
  const bool ok = run.N == 17 && rel < 1e-3 && run.observable >= bound && t < 300;
  return {ok, fmt::format("N = {}; ||phi||_1 rel err {:.2e} (< 1e-3); observable {:.4f} (>= {:.4f}); {:.1f} s (< 300 s)", run.N,
                          rel, run.observable, bound, t)};
}

Outcome rayleigh() {
  const auto disk = Domain::disk({0, 0}, 1.0);
  int positive = 0, held = 0;
  for (double sig : {5.0, 10.0, 20.0})
    for (double eta : {0.1, 0.2}) {
      const auto c = Coefficients::constant(sig, 0.7 / kTwoPi);
      const TestFunctionPair P{{-0.55, 0}, {0.55, 0}, eta};
      const auto t = rayleigh_Tinv(disk, c, P);
      if (t.bound_positive) {
        ++positive;
        held += t.value >= t.bound;
      }
      const auto r = rayleigh_R(disk, c, P);
      if (r.bound_positive) {
        ++positive;
        held += r.quotient >= r.bound;
      }
    }
  const auto c0 = Coefficients::constant(0.0, 1.0 / kTwoPi);
  const TestFunctionPair P{{-0.5, 0.1}, {0.45, -0.1}, 0.2};
  const auto q = rayleigh_Tinv(disk, c0, P);
  const auto mc = mc_rayleigh_Tinv(disk, c0, P, 1000000, 7);
  const double z = std::abs(q.value - mc.mean) / mc.stderr_;
  return {positive > 0 && held == positive && z < 3,
          fmt::format("{} of {} positive bounds exceeded; MC at sigma = 0: quadrature {:.6f}, MC {:.6f} +- {:.1e} ({:.2f} se, < 3)",
                      held, positive, q.value, mc.mean, mc.stderr_, z)};
}

Outcome eigencount() {
  const auto disk = Domain::disk({0, 0}, 1.0);
  SweepOptions o;
  o.grid.n_v = 16;
  o.grid.n_r = 6;
  o.N_target = 2;
  o.growth = 1.15;
  const auto S = eigencount_vs_C(disk, 1.0 / kTwoPi, {}, {0, 0}, 0.5, o);
  double c1 = -1, c2 = -1;
  for (const auto& r : S.rows) {
    if (c1 < 0 && r.eigencount >= 1) c1 = r.C;
    if (c2 < 0 && r.eigencount >= 2) c2 = r.C;
  }
  const bool ok = c1 > 0 && c2 > 0 && c2 <= o.C_max;
  return {ok, fmt::format("C from {:.3f}: count >= 1 at C = {:.3f}, >= 2 at C = {:.3f} (C_max {})", S.rows.front().C, c1, c2, o.C_max)};
}

Outcome spectral() {
  double ode = 0;
  bool ends = true;
  for (int d = 2; d <= 6; ++d)
    for (int l = 0; l <= 20; ++l) {
      const auto G = gegenbauer(l, d);
      for (int k = 0; k < 50; ++k) ode = std::max(ode, std::abs(G.ode_residual(std::cos(std::numbers::pi * (k + 0.5) / 50))));
      ends = ends && G(1.0) == 1.0 && G(-1.0) == (l % 2 ? -1.0 : 1.0);
    }
  bool mult = multiplicity_Nl(3, 3) == 7;
  for (int d = 2; d <= 6; ++d) mult = mult && multiplicity_Nl(0, d) == 1 && multiplicity_Nl(1, d) == d;

  double stab = 0;
  for (auto [l, d, sg] : std::vector<std::tuple<int, int, double>>{{1, 2, 0.0}, {1, 2, 5.0}, {3, 3, 10.0}}) {
    auto top = [](Eigen::VectorXd e) {
      std::vector<double> v(e.data(), e.data() + e.size());
      std::sort(v.begin(), v.end(), [](double a, double b) { return std::abs(a) > std::abs(b); });
      return v;
    };
    const auto a = top(eig_Fl(l, d, sg, 64)), b = top(eig_Fl(l, d, sg, 128));
    for (int k = 0; k < 5; ++k) stab = std::max(stab, std::abs(a[k] - b[k]) / std::abs(b[k]));
  }

  GridSpec gs;
  gs.n_v = 96;
  gs.n_r = 16;
  const auto m = disk_spectrum_match(1.6, 3, 1, gs);
  bool paired = m.size() == 2;
  for (const auto& x : m) paired = paired && x.matches == 2;

  std::string stars;
  bool crossings = true;
  for (auto [d, l] : std::vector<std::pair<int, int>>{{2, 1}, {3, 1}, {3, 3}}) {
    const auto T = sigma_threshold(l, d, 20.0, 1e-2);
    crossings = crossings && T.sigma_star.has_value();
    stars += T.sigma_star ? fmt::format(" ({},{}) {:.3f}", d, l, *T.sigma_star) : fmt::format(" ({},{}) none", d, l);
  }
  const bool ok = ode < 1e-10 && ends && mult && stab < 1e-4 && paired && crossings;
  std::string pairs;
  for (const auto& x : m) pairs += fmt::format(" l={} mu={:.4f} x{}", x.l, x.mu, x.matches);
  return {ok, fmt::format("ode {:.1e}; endpoints {}; N_l {}; top-5 drift {:.1e} (< 1e-4); disk pairs{}; sigma*{}", ode,
                          ends ? "exact" : "wrong", mult ? "ok" : "wrong", stab, pairs, stars)};
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / fmt::format("boltzctl_acceptance_{}", ::getpid());
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> runs{
      {"diffusive", {{"eps", "1.0"}, {"N_override", "4"}, {"n_v", "16"}, {"p_center", "16"}, {"p_per_panel", "6"}}},
      {"obstruct", {{"n_r", "4"}, {"mc_samples", "20000"}}},
      {"spectral", {{"l", "1"}, {"sigma_max", "3"}}}};
  int files = 0;
  std::string diff;
  for (const auto& [cmd, flags] : runs) {
    std::vector<std::string> bytes[2];
    for (int rep = 0; rep < 2; ++rep) {
      auto f = flags;
      f["out"] = nlohmann::json((base / fmt::format("{}_{}", cmd, rep)).string()).dump();
      const auto cfg = cli::make_config(cmd, nullptr, f);
      auto o = cli::execute(cfg);
      write_outputs(cfg.out_dir, o.tables, o.manifest);
      for (const auto& [name, t] : o.tables) bytes[rep].push_back(read_file(cfg.out_dir / name));
    }
    for (size_t i = 0; i < bytes[0].size(); ++i) {
      ++files;
      if (bytes[0][i] != bytes[1][i]) diff += " " + cmd;
    }
  }
  fs::remove_all(base);
  return {diff.empty() && files > 0, fmt::format("{} CSV files compared across reruns{}", files, diff.empty() ? ", identical" : "; differ:" + diff)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"free-streaming exactness", free_streaming},
      {"conservative constant solution", conservative},
      {"lifting isometry", lifting},
      {"Green adjointness", green},
      {"travel-time closed form", travel},
      {"Fredholm kernel identity", fredholm},
      {"layer peeling", peeling},
      {"UCP violation", ucp},
      {"diffusive instability", diffusive},
      {"Rayleigh bounds", rayleigh},
      {"eigencount growth", eigencount},
      {"spectral module", spectral},
      {"determinism", determinism}};
  int failed = 0;
  for (size_t i = 0; i < checks.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    fmt::print("{} {:2d} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", i + 1, checks[i].first, o.detail, seconds_since(t0));
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", checks.size() - failed, checks.size());
  return failed;
}
