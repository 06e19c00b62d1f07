#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/IterativeSolvers>

#include "transport.hpp"

namespace boltzctl {
class MomentOperator;
}

namespace Eigen::internal {
template <>
struct traits<boltzctl::MomentOperator> : public Eigen::internal::traits<Eigen::SparseMatrix<double>> {};
}  // namespace Eigen::internal

namespace boltzctl {

// Matrix-free (I - G) on the moment space, for GMRES.
class MomentOperator : public Eigen::EigenBase<MomentOperator> {
 public:
  using Scalar = double;
  using RealScalar = double;
  using StorageIndex = int;
  enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic, IsRowMajor = false };

  Eigen::Index n = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> apply;

  Eigen::Index rows() const { return n; }
  Eigen::Index cols() const { return n; }
  template <typename Rhs>
  Eigen::Product<MomentOperator, Rhs, Eigen::AliasFreeProduct> operator*(const Eigen::MatrixBase<Rhs>& x) const {
    return Eigen::Product<MomentOperator, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
  }
};

}  // namespace boltzctl

namespace Eigen::internal {
template <typename Rhs>
struct generic_product_impl<boltzctl::MomentOperator, Rhs, SparseShape, DenseShape, GemvProduct>
    : generic_product_impl_base<boltzctl::MomentOperator, Rhs,
                                generic_product_impl<boltzctl::MomentOperator, Rhs>> {
  using Scalar = typename Product<boltzctl::MomentOperator, Rhs>::Scalar;
  template <typename Dest>
  static void scaleAndAddTo(Dest& dst, const boltzctl::MomentOperator& lhs, const Rhs& rhs, const Scalar& alpha) {
    dst.noalias() += alpha * lhs.apply(Eigen::VectorXd(rhs));
  }
};
}  // namespace Eigen::internal

namespace boltzctl {

enum class Strategy { automatic, iterate, direct, krylov };

struct TransportProblem {
  std::shared_ptr<const PhaseGrid> grid;
  Coefficients coeffs;
  BoundarySet set;
  Strategy strategy = Strategy::automatic;
  double tol_resid = 1e-10;
  int max_iter = 5000;
  int dense_cap = 4000;  // largest moment space assembled densely
};

struct Solution {
  PhaseField u;
  int iterations = 0;
  double residual = 0.0;
  std::string method;
};

struct AlbedoMatrix {
  Eigen::MatrixXd A;   // rows: Gamma \ C endpoint of a segment, cols: C endpoint
  Eigen::VectorXd w;   // d xi per segment (rows and columns)
  bool backward = false;
};

struct KernelDiagnostics {
  std::vector<std::complex<double>> eigs;  // sorted by real part, descending
  int unit_eig_count = 0;
  Eigen::VectorXd singular_values;  // ascending
  int small_sv_count = 0;
  double tol_eig = 1e-2;
  double tol_rank = 0.0;
  bool counts_agree = false;
};

class Solver {
 public:
  TransportProblem pb;
  TransportOps ops;
  SmallnessResult small;

  explicit Solver(TransportProblem p) : pb(std::move(p)), ops(pb.grid, pb.coeffs) {
    if (pb.tol_resid <= 0) throw ValidationError("tol_resid must be positive");
    if (static_cast<int>(pb.set.at_exit.size()) != pb.grid->n_segs()) throw ValidationError("boundary set size mismatch");
    small = smallness_check(ops, 1.0);
  }

  const PhaseGrid& grid() const { return *pb.grid; }

  // y -> restrict T^{-1} K-expand(y) for the set C (or its adjoint).
  Eigen::VectorXd apply_G(const Eigen::VectorXd& y, const BoundarySet& C, bool adjoint) const {
    return ops.restrict(ops.Tinv(C, ops.expand(y, adjoint), adjoint).val);
  }

  // Dense G and the traces of its columns on the complement endpoint.
  void assemble_G(const BoundarySet& C, bool adjoint, Eigen::MatrixXd& Gm, Eigen::MatrixXd* W = nullptr) const {
    const PhaseGrid& G = grid();
    const int ny = ops.moment_size();
    const int nv = G.V.n;
    const bool iso = ops.isotropic();
    Gm = Eigen::MatrixXd::Zero(ny, ny);
    if (W) *W = Eigen::MatrixXd::Zero(G.n_segs(), ny);
    std::vector<double> f, out;
    for (int col = 0; col < ny; ++col) {
      const int c = iso ? col : col / nv;
      const int jp = iso ? 0 : col % nv;
      for (int si : G.cell_segs[c]) {
        const Segment& s = G.segs[si];
        f.assign(s.n_nodes, 0.0);
        out.assign(s.n_nodes, 0.0);
        double kf = 0.0;
        if (iso) kf = ops.kc[c];
        else kf = adjoint ? ops.kernel_matrix(c)(jp, s.vel) : ops.kernel_matrix(c)(s.vel, jp);
        if (kf == 0.0) continue;
        for (int l = 0; l < s.n_nodes; ++l) {
          const Stencil& st = G.stencil[s.node_begin + l];
          for (int e = 0; e < 4; ++e)
            if (st.idx[e] == c) f[l] += st.w[e] * kf;
        }
        double tin = 0, tout = 0;
        ops.tinv_segment(si, C.exit_selected(si), adjoint, f.data(), out.data(), tin, tout);
        for (int l = 0; l < s.n_nodes; ++l) {
          const int n = s.node_begin + l;
          const Stencil& st = G.stencil[n];
          const double a = G.node_mu[n] * out[l];
          for (int e = 0; e < 4; ++e) {
            const int cc = st.idx[e];
            if (G.cell_mass[cc] <= 0) continue;
            if (iso) Gm(cc, col) += kTwoPi * st.w[e] * a / G.cell_mass[cc];
            else Gm(cc * nv + s.vel, col) += nv * st.w[e] * a / G.cell_mass[cc];
          }
        }
        if (W) {
          // forward: trace on Gamma \ C; adjoint: trace on C
          const bool ex = C.exit_selected(si);
          (*W)(si, col) += adjoint ? (ex ? tout : tin) : (ex ? tin : tout);
        }
      }
    }
  }

  Solution forward(const BoundaryField& g) const { return solve(g, false); }
  Solution backward(const BoundaryField& psi) const { return solve(psi, true); }

  // (I - T^{-1}K) u = L g, or (I - T^{-*}K^*) u = L_{Gamma\C,-sigma} psi.
  Solution solve(const BoundaryField& data, bool adjoint) const {
    const BoundarySet& C = pb.set;
    Solution sol;
    PhaseField lift = adjoint ? ops.L_back(C, data) : ops.L(C, data);
    if (!ops.scattering()) {
      sol.u = lift;
      sol.method = "free";
      sol.residual = 0.0;
      return sol;
    }
    const Eigen::VectorXd b = ops.restrict(lift.val);
    const int ny = ops.moment_size();
    Strategy st = pb.strategy;
    if (st == Strategy::automatic) {
      if (small.certified) st = Strategy::iterate;
      else if (ny <= pb.dense_cap) st = Strategy::direct;
      else st = Strategy::krylov;
    }
    Eigen::VectorXd y;
    if (st == Strategy::iterate) {
      y = b;
      double prev = 0;
      int it = 0;
      for (; it < pb.max_iter; ++it) {
        Eigen::VectorXd yn = b + apply_G(y, C, adjoint);
        const double d = (yn - y).lpNorm<Eigen::Infinity>() / std::max(1.0, yn.lpNorm<Eigen::Infinity>());
        y.swap(yn);
        if (d < pb.tol_resid * 1e-2) break;
        if (it > 50 && d > prev && d > 1e3) throw NumericalFailure("source iteration diverges: contraction condition violated");
        prev = d;
      }
      if (it == pb.max_iter) throw NumericalFailure("source iteration did not converge: contraction condition violated");
      sol.iterations = it + 1;
      sol.method = "iterate";
    } else if (st == Strategy::direct) {
      if (ny > pb.dense_cap) throw ValidationError("moment space exceeds the dense cap");
      Eigen::MatrixXd Gm;
      assemble_G(C, adjoint, Gm);
      Eigen::MatrixXd M = Eigen::MatrixXd::Identity(ny, ny) - Gm;
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
      y = lu.solve(b);
      sol.method = "direct";
    } else {
      MomentOperator op;
      op.n = ny;
      op.apply = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x - apply_G(x, C, adjoint); };
      Eigen::GMRES<MomentOperator, Eigen::IdentityPreconditioner> gm;
      gm.setTolerance(pb.tol_resid * 1e-2);
      gm.setMaxIterations(pb.max_iter);
      gm.set_restart(200);
      gm.compute(op);
      y = gm.solve(b);
      if (gm.info() != Eigen::Success) throw NumericalFailure("GMRES did not converge on the moment system");
      sol.iterations = static_cast<int>(gm.iterations());
      sol.method = "krylov";
    }
    sol.u = lift;
    sol.u += ops.Tinv(C, ops.expand(y, adjoint), adjoint);
    sol.residual = integral_residual(sol.u, lift, adjoint, data);
    return sol;
  }

  // ||u - T^{-1} K u - L g|| / max(1, ||g||).
  double integral_residual(const PhaseField& u, const PhaseField& lift, bool adjoint, const BoundaryField& data) const {
    const BoundarySet& C = pb.set;
    const Eigen::VectorXd Ku = adjoint ? ops.Kadj(u.val) : ops.K(u.val);
    PhaseField r = u;
    r -= lift;
    r -= ops.Tinv(C, Ku, adjoint);
    const double gn = boundary_norm(grid(), C, data, NormKind::Lp_dxi, 2.0,
                                    adjoint ? BoundaryPart::complement : BoundaryPart::C);
    return phase_lp(grid(), r.val, 2.0) / std::max(1.0, gn);
  }

  // Columns: unit data at the C endpoint of each segment (forward) or at the
  // complement endpoint (backward).
  AlbedoMatrix albedo(bool backward = false) const {
    const PhaseGrid& G = grid();
    const BoundarySet& C = pb.set;
    const int ns = G.n_segs();
    AlbedoMatrix out;
    out.backward = backward;
    out.w.resize(ns);
    for (int s = 0; s < ns; ++s) out.w[s] = G.segs[s].dxi;
    Eigen::VectorXd att(ns);
    for (int s = 0; s < ns; ++s) {
      const double tot = ops.seg_depth(s);
      const bool ex = C.exit_selected(s);
      att[s] = ex ? std::exp(tot) : std::exp(-tot);
    }
    out.A = att.asDiagonal();
    if (!ops.scattering()) return out;
    const int ny = ops.moment_size();
    if (ny > pb.dense_cap) throw ValidationError("albedo assembly exceeds the dense cap");
    Eigen::MatrixXd Gm, W;
    assemble_G(C, backward, Gm, &W);
    // Z(:, s) = restrict(L e_s)
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(ny, ns);
    const int nv = G.V.n;
    const bool iso = ops.isotropic();
    for (int s = 0; s < ns; ++s) {
      const Segment& sg = G.segs[s];
      const double tot = ops.seg_depth(s);
      const bool ex = C.exit_selected(s);
      for (int l = 0; l < sg.n_nodes; ++l) {
        const int n = sg.node_begin + l;
        double val;
        if (!backward) val = ex ? std::exp(tot - ops.Sig[n]) : std::exp(-ops.Sig[n]);
        else val = ex ? std::exp(ops.Sig[n]) : std::exp(-(tot - ops.Sig[n]));
        const Stencil& st = G.stencil[n];
        for (int e = 0; e < 4; ++e) {
          const int cc = st.idx[e];
          if (G.cell_mass[cc] <= 0) continue;
          const double a = G.node_mu[n] * st.w[e] * val / G.cell_mass[cc];
          if (iso) Z(cc, s) += kTwoPi * a;
          else Z(cc * nv + sg.vel, s) += nv * a;
        }
      }
    }
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(ny, ny) - Gm;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    out.A += W * lu.solve(Z);
    return out;
  }

  // Eigenvalues of K T_{Gamma\C}^{-1} and singular values of the albedo.
  KernelDiagnostics kernel_diagnostics(double tol_eig = 1e-2, double rank_rel = 1e-6) const {
    KernelDiagnostics d;
    d.tol_eig = tol_eig;
    if (ops.scattering()) {
      Eigen::MatrixXd Gm;
      assemble_G(pb.set.complement(), false, Gm);
      Eigen::EigenSolver<Eigen::MatrixXd> es(Gm, false);
      if (es.info() != Eigen::Success) throw NumericalFailure("eigensolve failed");
      for (int i = 0; i < Gm.rows(); ++i) d.eigs.push_back(es.eigenvalues()[i]);
      std::sort(d.eigs.begin(), d.eigs.end(), [](auto a, auto b) { return a.real() > b.real(); });
      for (auto e : d.eigs)
        if (std::abs(e - 1.0) < tol_eig) ++d.unit_eig_count;
    }
    AlbedoMatrix A = albedo(false);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A.A);
    Eigen::VectorXd sv = svd.singularValues();
    d.singular_values = sv.reverse();
    d.tol_rank = rank_rel * sv[0];
    for (int i = 0; i < sv.size(); ++i)
      if (sv[i] < d.tol_rank) ++d.small_sv_count;
    d.counts_agree = d.small_sv_count == d.unit_eig_count;
    return d;
  }
};

// ||v.grad u + sigma u - K u|| in L^2 of the phase measure, and the scale
// ||sigma u|| + ||K u|| it is compared against.
struct PdeResidual {
  double abs = 0.0;
  double scale = 0.0;
  double relative() const { return scale > 0 ? abs / scale : abs; }
  PdeResidual& operator+=(const PdeResidual& o) {
    abs = std::hypot(abs, o.abs);
    scale = std::hypot(scale, o.scale);
    return *this;
  }
};

inline PdeResidual pde_residual(const TransportOps& ops, const Eigen::VectorXd& u) {
  const Eigen::VectorXd su = ops.sigma_times(u);
  const Eigen::VectorXd Ku = ops.K(u);
  const Eigen::VectorXd r = ops.derivative(u) + su - Ku;
  PdeResidual out;
  out.abs = phase_lp(ops.g(), r, 2.0);
  out.scale = phase_lp(ops.g(), su, 2.0) + phase_lp(ops.g(), Ku, 2.0);
  return out;
}

enum class GreenWeight { dxi, tau_dxi };

struct GreenResult {
  double residual = 0.0;  // relative
  double absolute = 0.0;
  double scale = 0.0;
};

// Green pairing of a forward solution with data phi on C and a backward one
// with data psi on Gamma \ C.
inline GreenResult green_residual(const Solver& S, const BoundaryField& phi, const BoundaryField& psi,
                                  GreenWeight weight = GreenWeight::dxi) {
  const PhaseGrid& G = S.grid();
  const BoundarySet& C = S.pb.set;
  const Solution u = S.forward(phi);
  const Solution w = S.backward(psi);
  double sum = 0, scale = 0;
  for (int s = 0; s < G.n_segs(); ++s) {
    const Segment& sg = G.segs[s];
    const double wt = sg.dxi * (weight == GreenWeight::tau_dxi ? sg.len() : 1.0);
    double t1, t2;
    if (!C.exit_selected(s)) {
      t1 = psi.out[s] * u.u.out[s];   // Gamma_+ \ C_+
      t2 = -phi.in[s] * w.u.in[s];    // C_-
    } else {
      t1 = -psi.in[s] * u.u.in[s];    // Gamma_- \ C_-
      t2 = phi.out[s] * w.u.out[s];   // C_+
    }
    sum += wt * (t1 + t2);
    scale += wt * (std::abs(t1) + std::abs(t2));
  }
  GreenResult r;
  r.absolute = std::abs(sum);
  r.scale = scale;
  r.residual = scale > 0 ? r.absolute / scale : 0.0;
  return r;
}

// (sigma, k) -> (sigma - v.grad ln phi, phi(x,v)/phi(x,v') k).
inline Coefficients gauge_transform(const Coefficients& c, std::function<double(const Vec2&, const Vec2&)> phi,
                                    bool phi_velocity_independent, const Domain& D) {
  for (int i = 0; i < 64; ++i) {
    const Vec2 v = unit_dir(kTwoPi * i / 64);
    for (double r : {D.r_in, D.r_out}) {
      if (r <= 0) continue;
      const Vec2 x = D.center + r * unit_dir(kTwoPi * (i + 0.5) / 64);
      const double val = phi(x, v);
      if (!(val > 0)) throw ValidationError("gauge: nonpositive phi");
      if (std::abs(val - 1.0) > 1e-10) throw ValidationError("gauge: phi must equal 1 on the boundary");
    }
    const Vec2 xi = D.center + 0.5 * (D.r_in + D.r_out) * unit_dir(kTwoPi * i / 64);
    if (!(phi(xi, v) > 0)) throw ValidationError("gauge: nonpositive phi");
  }
  Coefficients out = c;
  const auto sig = c.sigma;
  out.sigma = [sig, phi](const Vec2& x, const Vec2& v) {
    const double h = 1e-5;
    const double d = (std::log(phi(x + h * v, v)) - std::log(phi(x - h * v, v))) / (2 * h);
    return sig(x, v) - d;
  };
  if (!phi_velocity_independent && c.scattering()) {
    auto k0 = c;
    out.k_iso = nullptr;
    out.kernel = [k0, phi](const Vec2& x, const Vec2& vp, const Vec2& v) { return phi(x, v) / phi(x, vp) * k0.k(x, vp, v); };
    out.kernel_x_independent = false;
  }
  out.label = c.label + "+gauge";
  return out;
}

}  // namespace boltzctl
