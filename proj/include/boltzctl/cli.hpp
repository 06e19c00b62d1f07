#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/opensslv.h>

#include "control.hpp"
#include "io.hpp"
#include "obstruction.hpp"
#include "spectral.hpp"

namespace boltzctl::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

enum class Kind { number, integer, text, flag, list };

struct Param {
  std::string key;
  Kind kind;
  json def;
  std::string help;
};

struct CommandSpec {
  std::string name;
  std::string help;
  std::vector<Param> params;
};

namespace detail {

inline std::vector<Param> problem_params(int n_v, int n_r) {
  return {{"domain", Kind::text, "disk", "disk or annulus"},
          {"r_in", Kind::number, 0.5, "inner radius (annulus)"},
          {"r_out", Kind::number, 1.0, "outer radius"},
          {"sigma", Kind::number, 1.0, "constant absorption"},
          {"sigma_s", Kind::number, 0.5, "scattering rate; isotropic k = sigma_s / 2 pi"},
          {"n_v", Kind::integer, n_v, "velocities"},
          {"n_r", Kind::integer, n_r, "radial scattering cells"},
          {"set", Kind::text, "incoming", "boundary set: incoming or outgoing"},
          {"strategy", Kind::text, "auto", "auto, iterate, direct or krylov"}};
}

inline std::vector<Param> layer_params(int N, double sigma_s) {
  return {{"r0", Kind::number, 1.0, "inner radius"},
          {"r1", Kind::number, 2.0, "outer radius"},
          {"sigma", Kind::number, 1.0, "constant absorption"},
          {"sigma_s", Kind::number, sigma_s, "scattering rate; isotropic k = sigma_s / 2 pi"},
          {"N", Kind::integer, N, "layer count, 0 picks the smallest certified count"},
          {"n_v", Kind::integer, 32, "velocities"},
          {"n_r", Kind::integer, 2, "radial cells per layer"},
          {"p_center", Kind::integer, 32, "lines through the hole"},
          {"p_per_panel", Kind::integer, 8, "lines per layer panel"},
          {"strategy", Kind::text, "auto", "auto, iterate, direct or krylov"}};
}

}  // namespace detail

inline const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> cmds = [] {
    std::vector<CommandSpec> c;
    auto solve = detail::problem_params(32, 16);
    solve.push_back({"data", Kind::text, "one", "boundary data: one or linear (1 + x.v / 2)"});
    c.push_back({"solve", "forward solve with constant coefficients; writes the free boundary trace", solve});
    auto alb = detail::problem_params(16, 4);
    alb.push_back({"tol_eig", Kind::number, 1e-2, "distance to 1 counted as a unit eigenvalue"});
    c.push_back({"albedo", "dense albedo: singular values and eigenvalues of K T^{-1}", alb});
    auto peel = detail::layer_params(0, 1.0);
    peel.push_back({"beta", Kind::text, "test", "inner data: one or test"});
    c.push_back({"peel", "layer peeling on an annulus", peel});
    c.push_back({"ucp", "difference of two peels with equal inner data", detail::layer_params(0, 0.1)});
    c.push_back({"diffusive",
                 "diffusive-regime boundary control experiment",
                 {{"eps", Kind::number, 1.0, "mean free path"},
                  {"eta", Kind::number, 0.0, "source half width, 0 -> 1/(2N)"},
                  {"N_override", Kind::integer, 0, "layer count instead of floor(16/eps^2) + 1"},
                  {"n_v", Kind::integer, 32, "velocities"},
                  {"n_r", Kind::integer, 2, "radial cells per layer"},
                  {"p_center", Kind::integer, 32, "lines through the hole"},
                  {"p_per_panel", Kind::integer, 8, "lines per layer panel"},
                  {"p_source", Kind::integer, 16, "lines in the source panel"},
                  {"zero_kernel", Kind::flag, false, "drop scattering (ballistic check)"}}});
    c.push_back({"obstruct",
                 "eigenvalues of K T_{Gamma_+}^{-1} above 1 as absorption grows (unit disk)",
                 {{"sigma_s", Kind::number, 1.0, "scattering rate; isotropic k = sigma_s / 2 pi"},
                  {"r", Kind::number, 0.5, "point-family radius"},
                  {"N_target", Kind::integer, 2, "stop once this many eigenvalues exceed 1"},
                  {"C", Kind::list, "", "absorption grid, empty -> geometric from sigma_s"},
                  {"C_max", Kind::number, 200.0, "cap for the geometric grid"},
                  {"growth", Kind::number, 1.25, "geometric grid ratio"},
                  {"n_v", Kind::integer, 16, "velocities"},
                  {"n_r", Kind::integer, 6, "radial cells"},
                  {"rayleigh", Kind::flag, true, "evaluate the point-family Rayleigh matrix"},
                  {"mc_samples", Kind::integer, 0, "Monte Carlo check of the Rayleigh quotient at sigma = 0 (uses seed)"},
                  {"eta", Kind::number, 0.2, "test-function radius for the Monte Carlo check"}}});
    c.push_back({"spectral",
                 "sigma sweep of the radial operators F_l",
                 {{"d", Kind::integer, 2, "dimension"},
                  {"l", Kind::list, "1", "degrees"},
                  {"sigma_max", Kind::number, 20.0, "sweep end"},
                  {"step", Kind::number, 1.0, "sweep step"},
                  {"tol", Kind::number, 1e-3, "bisection tolerance"},
                  {"n_quad", Kind::integer, 32, "Nystrom nodes (multiple of 8)"}}});
    return c;
  }();
  return cmds;
}

inline const CommandSpec& command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw ValidationError("unknown subcommand '" + name + "'");
}

// Validated parameter set. Precedence: defaults, then the config file, then flags.
struct ExperimentConfig {
  std::string subcommand;
  std::map<std::string, json> values;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 42;

  const json& at(const std::string& k) const {
    const auto it = values.find(k);
    if (it == values.end()) throw std::logic_error("missing parameter " + k);
    return it->second;
  }
  double num(const std::string& k) const { return at(k).get<double>(); }
  int integer(const std::string& k) const { return at(k).get<int>(); }
  std::string text(const std::string& k) const { return at(k).get<std::string>(); }
  bool flag(const std::string& k) const { return at(k).get<bool>(); }
  std::vector<double> list(const std::string& k) const {
    std::vector<double> out;
    for (const auto& x : at(k)) out.push_back(x.get<double>());
    return out;
  }
};

namespace detail {

inline json parse_flag_text(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::parse_error&) {
    return json(s);
  }
}

inline json coerce(const Param& p, const json& v) {
  auto bad = [&](const std::string& want) {
    return ValidationError("parameter '" + p.key + "' must be " + want + ", got " + v.dump());
  };
  switch (p.kind) {
    case Kind::number:
      if (!v.is_number()) throw bad("a number");
      if (!std::isfinite(v.get<double>())) throw bad("finite");
      return v.get<double>();
    case Kind::integer:
      if (v.is_number_integer()) return v;
      if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()) && std::abs(v.get<double>()) < 1e9)
        return static_cast<long long>(v.get<double>());
      throw bad("an integer");
    case Kind::text:
      if (!v.is_string()) throw bad("a string");
      return v;
    case Kind::flag:
      if (!v.is_boolean()) throw bad("true or false");
      return v;
    case Kind::list: {
      json arr = json::array();
      if (v.is_array()) {
        for (const auto& x : v) {
          if (!x.is_number()) throw bad("a list of numbers");
          arr.push_back(x.get<double>());
        }
        return arr;
      }
      if (v.is_number()) return json::array({v.get<double>()});
      if (!v.is_string()) throw bad("a list of numbers");
      const std::string s = v.get<std::string>();
      size_t pos = 0;
      while (pos < s.size()) {
        const size_t end = std::min(s.find(',', pos), s.size());
        const std::string item = s.substr(pos, end - pos);
        char* stop = nullptr;
        const double x = std::strtod(item.c_str(), &stop);
        if (item.empty() || *stop != '\0' || !std::isfinite(x)) throw bad("a comma-separated list of numbers");
        arr.push_back(x);
        pos = end + 1;
      }
      return arr;
    }
  }
  return v;
}

}  // namespace detail

// file: flat JSON object (may be null); flags: key -> raw text from the
// command line. Unknown keys in either are rejected.
inline ExperimentConfig make_config(const std::string& subcommand, const json& file,
                                    const std::map<std::string, std::string>& flags) {
  const auto& spec = command(subcommand);
  ExperimentConfig cfg;
  cfg.subcommand = subcommand;
  std::map<std::string, const Param*> known;
  for (const auto& p : spec.params) {
    known[p.key] = &p;
    cfg.values[p.key] = detail::coerce(p, p.def);
  }
  const Param out_p{"out", Kind::text, ".", ""}, seed_p{"seed", Kind::integer, 42, ""};
  json out = ".", seed = 42;
  auto assign = [&](const std::string& k, const json& v) {
    if (k == "out") out = detail::coerce(out_p, v);
    else if (k == "seed") seed = detail::coerce(seed_p, v);
    else if (k == "subcommand") {
      if (!v.is_string() || v.get<std::string>() != subcommand)
        throw ValidationError("config names subcommand " + v.dump() + " but '" + subcommand + "' was requested");
    } else if (const auto it = known.find(k); it != known.end()) {
      cfg.values[k] = detail::coerce(*it->second, v);
    } else {
      throw ValidationError("unknown key '" + k + "' for subcommand " + subcommand);
    }
  };
  if (!file.is_null()) {
    if (!file.is_object()) throw ValidationError("config must be a flat JSON object");
    for (const auto& [k, v] : file.items()) {
      if (v.is_object()) throw ValidationError("config must be flat; '" + k + "' is an object");
      assign(k, v);
    }
  }
  for (const auto& [k, v] : flags) assign(k, detail::parse_flag_text(v));
  if (seed.get<long long>() < 0) throw ValidationError("seed must be nonnegative");
  cfg.out_dir = out.get<std::string>();
  cfg.seed = static_cast<std::uint64_t>(seed.get<long long>());
  return cfg;
}

struct RunOutput {
  std::vector<std::pair<std::string, Table>> tables;
  RunManifest manifest;
};

namespace detail {

inline Strategy strategy(const std::string& s) {
  if (s == "auto") return Strategy::automatic;
  if (s == "iterate") return Strategy::iterate;
  if (s == "direct") return Strategy::direct;
  if (s == "krylov") return Strategy::krylov;
  throw ValidationError("unknown strategy '" + s + "'");
}

inline void positive(const ExperimentConfig& c, const std::string& k) {
  if (!(c.num(k) > 0)) throw ValidationError("'" + k + "' must be positive");
}

inline void nonnegative(const ExperimentConfig& c, const std::string& k) {
  if (!(c.num(k) >= 0)) throw ValidationError("'" + k + "' must be nonnegative");
}

inline Table summary_table() { return Table({"quantity", "value"}); }

inline TransportProblem problem(const ExperimentConfig& c) {
  const std::string dom = c.text("domain");
  positive(c, "r_out");
  nonnegative(c, "sigma");
  nonnegative(c, "sigma_s");
  Domain D;
  if (dom == "disk") {
    D = Domain::disk({0, 0}, c.num("r_out"));
  } else if (dom == "annulus") {
    positive(c, "r_in");
    if (!(c.num("r_in") < c.num("r_out"))) throw ValidationError("r_in must be below r_out");
    D = Domain::annulus({0, 0}, c.num("r_in"), c.num("r_out"));
  } else {
    throw ValidationError("domain must be disk or annulus");
  }
  GridSpec gs;
  gs.n_v = c.integer("n_v");
  gs.n_r = c.integer("n_r");
  if (gs.n_v < 4 || gs.n_v % 2 || gs.n_r < 1) throw ValidationError("n_v must be even and >= 4, n_r >= 1");
  gs.sigma_bound = c.num("sigma");
  TransportProblem pb;
  pb.grid = PhaseGrid::build(D, gs);
  pb.coeffs = c.num("sigma_s") > 0 ? Coefficients::constant(c.num("sigma"), c.num("sigma_s") / kTwoPi)
                                   : Coefficients::constant(c.num("sigma"), 0.0);
  const std::string set = c.text("set");
  if (set == "incoming") pb.set = BoundarySet::incoming(*pb.grid);
  else if (set == "outgoing") pb.set = BoundarySet::outgoing(*pb.grid);
  else throw ValidationError("set must be incoming or outgoing");
  pb.strategy = strategy(c.text("strategy"));
  return pb;
}

inline LayerSpec layer_spec(const ExperimentConfig& c) {
  LayerSpec sp;
  sp.n_v = c.integer("n_v");
  sp.n_r = c.integer("n_r");
  sp.p_center = c.integer("p_center");
  sp.p_per_panel = c.integer("p_per_panel");
  if (c.values.count("strategy")) sp.strategy = strategy(c.text("strategy"));
  return sp;
}

inline PeelPlan peel_plan(const ExperimentConfig& c) {
  positive(c, "r0");
  if (!(c.num("r1") > c.num("r0"))) throw ValidationError("r1 must exceed r0");
  nonnegative(c, "sigma");
  nonnegative(c, "sigma_s");
  if (c.integer("N") < 0) throw ValidationError("N must be nonnegative");
  const auto coeffs = Coefficients::constant(c.num("sigma"), c.num("sigma_s") / kTwoPi);
  const auto sp = layer_spec(c);
  return c.integer("N") > 0 ? make_peel_plan(c.num("r0"), c.num("r1"), coeffs, sp, c.integer("N"))
                            : auto_peel_plan(c.num("r0"), c.num("r1"), coeffs, sp);
}

inline Table layer_table(const PeelPlan& P) {
  Table t({"k", "r_in", "r_out", "tau_max", "tau_bound", "margin", "certified"});
  for (const auto& L : P.layers)
    t.add({static_cast<long long>(L.k), L.r_in, L.r_out, L.tau_max, L.tau_bound, L.small.margin,
           static_cast<long long>(L.small.certified)});
  return t;
}

inline RunOutput run_solve(const ExperimentConfig& c) {
  const auto pb = problem(c);
  const std::string data = c.text("data");
  if (data != "one" && data != "linear") throw ValidationError("data must be one or linear");
  const PhaseGrid& g = *pb.grid;
  const auto bf = BoundaryField::sample(g, [&](const Vec2& x, const Vec2& v) {
    return data == "one" ? 1.0 : 1.0 + 0.5 * x.dot(v);
  });
  Solver S(pb);
  const auto sol = S.forward(bf);
  Table tr({"x", "y", "vx", "vy", "u"});
  for (int s = 0; s < g.n_segs(); ++s) {
    const Vec2 v = g.V.dir[g.segs[s].vel];
    const bool ex = pb.set.exit_selected(s);
    const Vec2 x = ex ? g.entry_pos(s) : g.exit_pos(s);
    tr.add({x.x(), x.y(), v.x(), v.y(), ex ? sol.u.in[s] : sol.u.out[s]});
  }
  Table sm = summary_table();
  sm.add({std::string("method"), sol.method});
  sm.add({std::string("iterations"), static_cast<long long>(sol.iterations)});
  sm.add({std::string("residual"), sol.residual});
  sm.add({std::string("n_nodes"), static_cast<long long>(g.n_nodes())});
  sm.add({std::string("n_segments"), static_cast<long long>(g.n_segs())});
  sm.add({std::string("smallness_margin"), S.small.margin});
  RunOutput o;
  o.tables = {{"solve_trace.csv", tr}, {"solve_summary.csv", sm}};
  o.manifest.set("tolerance.tol_resid", pb.tol_resid);
  return o;
}

inline RunOutput run_albedo(const ExperimentConfig& c) {
  auto pb = problem(c);
  positive(c, "tol_eig");
  const auto D = Solver(pb).kernel_diagnostics(c.num("tol_eig"));
  Table sv({"index", "singular_value"});
  for (int i = 0; i < D.singular_values.size(); ++i) sv.add({static_cast<long long>(i), D.singular_values[i]});
  Table ev({"index", "re", "im"});
  for (size_t i = 0; i < D.eigs.size(); ++i) ev.add({static_cast<long long>(i), D.eigs[i].real(), D.eigs[i].imag()});
  Table sm = summary_table();
  sm.add({std::string("unit_eig_count"), static_cast<long long>(D.unit_eig_count)});
  sm.add({std::string("small_sv_count"), static_cast<long long>(D.small_sv_count)});
  sm.add({std::string("rank_tolerance"), D.tol_rank});
  sm.add({std::string("counts_agree"), static_cast<long long>(D.counts_agree)});
  RunOutput o;
  o.tables = {{"albedo_singular_values.csv", sv}, {"albedo_eigenvalues.csv", ev}, {"albedo_summary.csv", sm}};
  o.manifest.set("tolerance.tol_eig", D.tol_eig);
  return o;
}

inline RunOutput run_peel(const ExperimentConfig& c) {
  const std::string b = c.text("beta");
  if (b != "one" && b != "test") throw ValidationError("beta must be one or test");
  const auto P = peel_plan(c);
  PhaseFn beta = [b](const Vec2& x, const Vec2& v) {
    return b == "one" ? 1.0 : 1.0 + 0.3 * x.x() * v.y() + 0.2 * std::sin(3 * std::atan2(x.y(), x.x()));
  };
  const auto R = layer_peel(P, beta, {}, false);
  Table sm = summary_table();
  sm.add({std::string("N"), static_cast<long long>(R.N)});
  sm.add({std::string("auto_N"), static_cast<long long>(P.auto_N)});
  sm.add({std::string("all_certified"), static_cast<long long>(R.all_certified)});
  sm.add({std::string("min_margin"), P.min_margin()});
  sm.add({std::string("inner_defect"), R.inner_defect});
  sm.add({std::string("interface_jump"), R.interface_jump});
  sm.add({std::string("pde_residual"), R.residual.relative()});
  sm.add({std::string("l2_norm"), R.l2_norm});
  RunOutput o;
  o.tables = {{"peel_layers.csv", layer_table(P)}, {"peel_summary.csv", sm}};
  return o;
}

inline RunOutput run_ucp(const ExperimentConfig& c) {
  const auto P = peel_plan(c);
  const auto U = ucp_violation(P, [](const Vec2&, const Vec2&) { return 1.0; },
                               [](const Vec2& x, const Vec2&) { return 1.0 + 0.5 * x.x(); });
  Table sm = summary_table();
  sm.add({std::string("N"), static_cast<long long>(U.N)});
  sm.add({std::string("all_certified"), static_cast<long long>(P.all_certified)});
  sm.add({std::string("inner_trace_norm"), U.inner_trace_norm});
  sm.add({std::string("l2_norm"), U.l2_norm});
  sm.add({std::string("zero_extension_residual"), U.zero_extension_residual});
  RunOutput o;
  o.tables = {{"ucp_layers.csv", layer_table(P)}, {"ucp_summary.csv", sm}};
  return o;
}

inline RunOutput run_diffusive(const ExperimentConfig& c) {
  LayerSpec sp;
  sp.n_v = c.integer("n_v");
  sp.n_r = c.integer("n_r");
  sp.p_center = c.integer("p_center");
  sp.p_per_panel = c.integer("p_per_panel");
  sp.p_source = c.integer("p_source");
  if (c.integer("N_override") < 0) throw ValidationError("N_override must be nonnegative");
  nonnegative(c, "eta");
  const auto run = diffusive_experiment(c.num("eps"), c.num("eta"), sp, c.integer("N_override"), c.flag("zero_kernel"));
  Table t({"eps", "eta", "N", "k", "layer_margin", "tau_max", "f0_norm", "f1_norm", "observable"});
  for (const auto& r : run.rows)
    t.add({run.eps, run.eta, static_cast<long long>(run.N), static_cast<long long>(r.k), r.layer_margin, r.tau_max, r.f0_norm,
           r.f1_norm, r.observable});
  Table sm = summary_table();
  sm.add({std::string("N"), static_cast<long long>(run.N)});
  sm.add({std::string("N_formula"), static_cast<long long>(run.N_formula)});
  sm.add({std::string("override_warning"), static_cast<long long>(run.override_warning)});
  sm.add({std::string("eta"), run.eta});
  sm.add({std::string("phi_norm"), run.phi_norm});
  sm.add({std::string("observable"), run.observable});
  sm.add({std::string("ballistic_bound"), run.ballistic_bound});
  sm.add({std::string("ratio"), run.ratio});
  sm.add({std::string("delta_grid"), run.delta_grid});
  sm.add({std::string("residual"), run.residual});
  sm.add({std::string("all_certified"), static_cast<long long>(run.all_certified)});
  RunOutput o;
  o.tables = {{"diffusive_run.csv", t}, {"diffusive_summary.csv", sm}};
  if (run.override_warning) o.manifest.set("warning", "N differs from floor(16/eps^2) + 1");
  return o;
}

inline RunOutput run_obstruct(const ExperimentConfig& c, std::uint64_t seed) {
  positive(c, "sigma_s");
  positive(c, "r");
  positive(c, "C_max");
  if (!(c.num("growth") > 1)) throw ValidationError("growth must exceed 1");
  if (c.integer("N_target") < 1) throw ValidationError("N_target must be positive");
  if (c.integer("mc_samples") < 0) throw ValidationError("mc_samples must be nonnegative");
  const auto disk = Domain::disk({0, 0}, 1.0);
  SweepOptions so;
  so.N_target = c.integer("N_target");
  so.C_max = c.num("C_max");
  so.growth = c.num("growth");
  so.grid.n_v = c.integer("n_v");
  so.grid.n_r = c.integer("n_r");
  so.rayleigh = c.flag("rayleigh");
  const double k0 = c.num("sigma_s") / kTwoPi;
  const auto S = eigencount_vs_C(disk, k0, c.list("C"), {0, 0}, c.num("r"), so);
  Table t({"C", "eigencount", "mu_max", "gamma1", "gamma2", "rayleigh_min", "offdiag_max", "offdiag_bound", "tinv_lower_bound"});
  for (const auto& r : S.rows)
    t.add({r.C, static_cast<long long>(r.eigencount), r.mu_max, r.gamma1, r.gamma2, r.rayleigh_min, r.offdiag_max,
           r.offdiag_bound, r.tinv_lower_bound});
  Table sm = summary_table();
  sm.add({std::string("reached_target"), static_cast<long long>(S.reached_target)});
  sm.add({std::string("alpha"), S.family.alpha});
  RunOutput o;
  o.tables = {{"eigencount.csv", t}};
  if (c.integer("mc_samples") > 0) {
    const auto cf = Coefficients::constant(0.0, k0);
    const TestFunctionPair P{{-0.5, 0.0}, {0.5, 0.0}, c.num("eta")};
    const auto q = rayleigh_Tinv(disk, cf, P);
    const auto mc = mc_rayleigh_Tinv(disk, cf, P, c.integer("mc_samples"), seed);
    sm.add({std::string("rayleigh_quadrature"), q.value});
    sm.add({std::string("rayleigh_mc_mean"), mc.mean});
    sm.add({std::string("rayleigh_mc_stderr"), mc.stderr_});
    o.manifest.set("seed", static_cast<long long>(seed));
  }
  o.tables.emplace_back("obstruct_summary.csv", sm);
  return o;
}

inline RunOutput run_spectral(const ExperimentConfig& c) {
  const int d = c.integer("d");
  if (d < 2) throw ValidationError("d must be >= 2");
  positive(c, "sigma_max");
  positive(c, "step");
  positive(c, "tol");
  const int nq = c.integer("n_quad");
  if (nq < 16 || nq % kFlPanelOrder) throw ValidationError("n_quad must be a multiple of 8 and >= 16");
  std::vector<int> ls;
  for (double x : c.list("l")) {
    if (x < 0 || x != std::floor(x)) throw ValidationError("degrees must be nonnegative integers");
    ls.push_back(static_cast<int>(x));
  }
  if (ls.empty()) throw ValidationError("no degrees given");
  Table sw({"l", "d", "sigma", "eig_max", "eig_count_gt1", "N_l"});
  Table th({"l", "d", "found", "sigma_star", "eig_at_star", "N_l", "source"});
  for (int l : ls) {
    auto T = sigma_threshold(l, d, c.num("sigma_max"), c.num("tol"), c.num("step"), nq);
    std::stable_sort(T.rows.begin(), T.rows.end(), [](const auto& a, const auto& b) { return a.sigma < b.sigma; });
    for (const auto& r : T.rows)
      sw.add({static_cast<long long>(r.l), static_cast<long long>(r.d), r.sigma, r.eig_max,
              static_cast<long long>(r.eig_count_gt1), r.N_l});
    th.add({static_cast<long long>(l), static_cast<long long>(d), static_cast<long long>(T.sigma_star.has_value()),
            T.sigma_star.value_or(0.0), T.sigma_star ? T.eig_at_star : 0.0, T.N_l, std::string("computed (no published value)")});
  }
  RunOutput o;
  o.tables = {{"spectral_sweep.csv", sw}, {"spectral_threshold.csv", th}};
  o.manifest.set("tolerance.bisection", c.num("tol"));
  return o;
}

}  // namespace detail

// Runs the experiment and returns its tables; nothing is written.
inline RunOutput execute(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput o;
  if (c.subcommand == "solve") o = detail::run_solve(c);
  else if (c.subcommand == "albedo") o = detail::run_albedo(c);
  else if (c.subcommand == "peel") o = detail::run_peel(c);
  else if (c.subcommand == "ucp") o = detail::run_ucp(c);
  else if (c.subcommand == "diffusive") o = detail::run_diffusive(c);
  else if (c.subcommand == "obstruct") o = detail::run_obstruct(c, c.seed);
  else if (c.subcommand == "spectral") o = detail::run_spectral(c);
  else throw ValidationError("unknown subcommand '" + c.subcommand + "'");
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RunManifest m;
  m.set("subcommand", c.subcommand);
  for (const auto& [k, v] : c.values) m.set("input." + k, v.is_array() ? json(v.dump()) : v);
  m.set("version", kVersion);
  m.set("version.eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION));
  m.set("version.boost", BOOST_LIB_VERSION);
  m.set("version.fmt", FMT_VERSION);
  m.set("version.openssl", OPENSSL_VERSION_TEXT);
  m.set("version.compiler", __VERSION__);
  for (const auto& [k, v] : o.manifest.j.items()) m.set(k, v);
  m.set("wall_time_s", wall);
  o.manifest = std::move(m);
  return o;
}

// Exit codes: 0 success, 2 validation or I/O error, 3 numerical failure.
inline int run(const ExperimentConfig& c, std::ostream& err = std::cerr) {
  try {
    auto o = execute(c);
    write_outputs(c.out_dir, o.tables, o.manifest);
    return 0;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace boltzctl::cli
