#include "cpalyap/synth.hpp"

#include "cpalyap/care.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cpalyap::synth {

using conic::AffineExpr;
using mesh::Triangulation;

// ---------------------------------------------------------------------------
// ConstraintSystem
// ---------------------------------------------------------------------------

ConstraintSystem::ConstraintSystem(const model::SystemModel& model, const Triangulation& tri,
                                   VariantSpec variant, double a)
    : model_(&model), tri_(&tri), variant_(std::move(variant)), a_(a) {
  if (tri.dim() != model.n) throw std::invalid_argument("ConstraintSystem: mesh/model dimension mismatch");
  if (variant_.pins_origin() && tri.origin_vertex() < 0)
    throw std::invalid_argument("ConstraintSystem: variant pins the origin but it is not a mesh vertex");
  if ((variant_.kind == VariantKind::reach_target || variant_.kind == VariantKind::multi_stage) &&
      !variant_.target_surface.empty() && !tri.surfaces().count(variant_.target_surface))
    throw std::invalid_argument("ConstraintSystem: target surface '" + variant_.target_surface +
                                "' is not tagged in the mesh");
  if (variant_.kind == VariantKind::multi_stage && variant_.continuity == Continuity::stitched &&
      variant_.pinned_V.empty() && variant_.pinned_u.empty())
    throw std::invalid_argument("ConstraintSystem: stitched multi-stage variant needs pinned boundary data");

  // merge origin pins into the pin maps
  if (variant_.pins_origin()) {
    const int o = tri.origin_vertex();
    variant_.pinned_V[o] = 0.0;
    variant_.pinned_u[o] = VectorXd::Zero(model.m);
  }
  if (variant_.continuity == Continuity::discontinuous_V ||
      variant_.continuity == Continuity::discontinuous_both) {
    for (auto it = variant_.pinned_V.begin(); it != variant_.pinned_V.end();)
      it = (it->first != tri.origin_vertex()) ? variant_.pinned_V.erase(it) : std::next(it);
  }
  if (variant_.continuity == Continuity::discontinuous_u ||
      variant_.continuity == Continuity::discontinuous_both) {
    for (auto it = variant_.pinned_u.begin(); it != variant_.pinned_u.end();)
      it = (it->first != tri.origin_vertex()) ? variant_.pinned_u.erase(it) : std::next(it);
  }

  consts_ = model::hessian_constants(model, tri);
  norm_pow_.resize(tri.num_vertices());
  f_vals_.resize(tri.num_vertices());
  G_vals_.resize(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) {
    const VectorXd& x = tri.vertex(v).coords;
    norm_pow_[v] = std::pow(x.norm(), a_);
    f_vals_[v] = model.f(x);
    G_vals_[v] = model.G(x);
  }
  inner_.assign(tri.num_simplexes(), 0);
  if (variant_.kind == VariantKind::reach_target && variant_.inside_target) {
    for (int i = 0; i < tri.num_simplexes(); ++i) {
      VectorXd centroid = VectorXd::Zero(tri.dim());
      for (int v : tri.simplex(i).v) centroid += tri.vertex(v).coords;
      centroid /= tri.dim() + 1;
      inner_[i] = variant_.inside_target(centroid) ? 1 : 0;
    }
  }
}

bool ConstraintSystem::v_pinned(int vertex, double* value) const {
  auto it = variant_.pinned_V.find(vertex);
  if (it == variant_.pinned_V.end()) return false;
  if (value) *value = it->second;
  return true;
}

bool ConstraintSystem::u_pinned(int vertex, VectorXd* value) const {
  auto it = variant_.pinned_u.find(vertex);
  if (it == variant_.pinned_u.end()) return false;
  if (value) *value = it->second;
  return true;
}

bool ConstraintSystem::tied_to_boundary(int vertex) const {
  if (!variant_.boundary_tie()) return false;
  if (!tri_->is_boundary_vertex(vertex)) return false;
  if (variant_.pinned_V.count(vertex)) return false;
  if (!variant_.target_surface.empty() && tri_->on_surface(variant_.target_surface, vertex)) return false;
  if (variant_.kind == VariantKind::multi_stage && tri_->on_surface("inner", vertex)) return false;
  return true;
}

VectorXd ConstraintSystem::grad_V(const DecisionVariables& y, int i) const {
  const auto& g = tri_->geometry(i);
  const auto& s = tri_->simplex(i).v;
  VectorXd bar(tri_->dim());
  for (int j = 1; j <= tri_->dim(); ++j) bar[j - 1] = y.V[s[j]] - y.V[s[0]];
  return g.X_inv * bar;
}

VectorXd ConstraintSystem::grad_u(const DecisionVariables& y, int i, int s) const {
  const auto& g = tri_->geometry(i);
  const auto& sv = tri_->simplex(i).v;
  VectorXd bar(tri_->dim());
  for (int j = 1; j <= tri_->dim(); ++j) bar[j - 1] = y.U(sv[j], s) - y.U(sv[0], s);
  return g.X_inv * bar;
}

double ConstraintSystem::dini_bound(const DecisionVariables& y, int i, int j) const {
  const auto& sv = tri_->simplex(i).v;
  const int x = sv[j];
  const VectorXd gv = grad_V(y, i);
  const double c = tri_->geometry(i).c[j];
  const double l1 = y.L.row(i).sum();
  double val = f_vals_[x].dot(gv) + c * consts_.mu[i] * l1;
  val += (G_vals_[x] * y.U.row(x).transpose()).dot(gv);
  if (!model_->constant_G && y.Z.size() > 0) val += c * consts_.eta[i] * y.Z[i] * l1;
  return val;
}

double ConstraintSystem::decrease_row(const DecisionVariables& y, int i, int j) const {
  const int x = tri_->simplex(i).v[j];
  const double b = inner_[i] ? y.b3 : y.b2;
  const double rhs = variant_.rhs == DecreaseRhs::proportional ? b * y.V[x] : b;
  return dini_bound(y, i, j) + rhs;
}

double ConstraintSystem::max_residual(const DecisionVariables& y) const {
  const Triangulation& tri = *tri_;
  double r = eps_b1_ - y.b1;

  // boundary tie: all tied values equal and dominate every vertex value
  double tie_val = 0.0;
  bool has_tie = false;
  if (variant_.boundary_tie()) {
    for (int v = 0; v < tri.num_vertices(); ++v)
      if (tied_to_boundary(v)) {
        if (!has_tie) {
          tie_val = y.V[v];
          has_tie = true;
        }
        r = std::max(r, std::abs(y.V[v] - tie_val));
      }
  }

  for (int v = 0; v < tri.num_vertices(); ++v) {
    r = std::max(r, y.b1 * norm_pow_[v] - y.V[v]);
    if (has_tie) r = std::max(r, y.V[v] - tie_val);
    // input polytope rows at every vertex
    VectorXd hu = model_->input_H * y.U.row(v).transpose() - model_->input_h;
    r = std::max(r, hu.maxCoeff());
    double pv;
    if (v_pinned(v, &pv)) r = std::max(r, std::abs(y.V[v] - pv));
    VectorXd pu;
    if (u_pinned(v, &pu)) r = std::max(r, (y.U.row(v).transpose() - pu).cwiseAbs().maxCoeff());
  }

  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const VectorXd gv = grad_V(y, i);
    for (int k = 0; k < tri.dim(); ++k) r = std::max(r, std::abs(gv[k]) - y.L(i, k));
    if (!model_->constant_G && y.Z.size() > 0) {
      for (int s = 0; s < model_->m; ++s) {
        const VectorXd gu = grad_u(y, i, s);
        for (int k = 0; k < tri.dim(); ++k) r = std::max(r, std::abs(gu[k]) - y.Z[i]);
      }
    }
    for (int j = 0; j <= tri.dim(); ++j) r = std::max(r, decrease_row(y, i, j));
  }
  return r;
}

ConstraintSystem::RowCounts ConstraintSystem::row_counts() const {
  RowCounts rc;
  const int n = tri_->dim();
  rc.v_lower = tri_->num_vertices();
  rc.l_abs = 2 * n * tri_->num_simplexes();
  rc.u_poly = static_cast<int>(model_->input_H.rows()) * tri_->num_vertices();
  rc.z_abs = model_->constant_G ? 0 : 2 * n * model_->m * tri_->num_simplexes();
  rc.decrease = (n + 1) * tri_->num_simplexes();
  rc.pins = static_cast<int>(variant_.pinned_V.size() + variant_.pinned_u.size());
  if (variant_.boundary_tie()) rc.v_tie = tri_->num_vertices();
  return rc;
}

// ---------------------------------------------------------------------------
// initializations
// ---------------------------------------------------------------------------

namespace {

// largest b2 (and b3) satisfying the decrease rows at the given point
void fit_decay(const ConstraintSystem& cs, DecisionVariables& y) {
  const Triangulation& tri = cs.tri();
  double b2 = std::numeric_limits<double>::infinity();
  double b3 = std::numeric_limits<double>::infinity();
  bool any_inner = false;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    for (int j = 0; j <= tri.dim(); ++j) {
      const int x = tri.simplex(i).v[j];
      const double d = cs.dini_bound(y, i, j);
      double& target = cs.inner_simplex(i) ? b3 : b2;
      if (cs.inner_simplex(i)) any_inner = true;
      if (cs.variant().rhs == DecreaseRhs::proportional) {
        if (y.V[x] > 1e-12) target = std::min(target, -d / y.V[x]);
        else if (d > 1e-9)
          throw std::runtime_error("fit_decay: positive decrease row at a zero-value vertex");
      } else {
        target = std::min(target, -d);
      }
    }
  }
  y.b2 = std::isfinite(b2) ? b2 : 0.0;
  y.has_b3 = any_inner;
  y.b3 = any_inner && std::isfinite(b3) ? b3 : 0.0;
}

void fill_bound_vars(const ConstraintSystem& cs, DecisionVariables& y) {
  const Triangulation& tri = cs.tri();
  const int n = tri.dim();
  y.L.resize(tri.num_simplexes(), n);
  for (int i = 0; i < tri.num_simplexes(); ++i)
    y.L.row(i) = cs.grad_V(y, i).cwiseAbs().transpose();
  if (!cs.model().constant_G) {
    y.Z.resize(tri.num_simplexes());
    for (int i = 0; i < tri.num_simplexes(); ++i) {
      double z = 0.0;
      for (int s = 0; s < cs.model().m; ++s) z = std::max(z, cs.grad_u(y, i, s).cwiseAbs().maxCoeff());
      y.Z[i] = z;
    }
  } else {
    y.Z.resize(0);
  }
}

// apply pins, boundary tie and the V-shape edits shared by both inits
void apply_variant_values(const ConstraintSystem& cs, DecisionVariables& y) {
  const Triangulation& tri = cs.tri();
  for (const auto& [v, val] : cs.variant().pinned_V) y.V[v] = val;
  if (cs.variant().boundary_tie()) {
    double vmax = y.V.maxCoeff();
    for (int v = 0; v < tri.num_vertices(); ++v)
      if (cs.tied_to_boundary(v)) vmax = std::max(vmax, y.V[v]);
    for (int v = 0; v < tri.num_vertices(); ++v)
      if (cs.tied_to_boundary(v)) y.V[v] = vmax;
  }
  for (const auto& [v, val] : cs.variant().pinned_u) y.U.row(v) = val.transpose();
}

void scale_inputs_admissible(const ConstraintSystem& cs, DecisionVariables& y) {
  const auto& H = cs.model().input_H;
  const auto& h = cs.model().input_h;
  double scale = 1.0;
  for (int v = 0; v < cs.tri().num_vertices(); ++v) {
    if (cs.u_pinned(v)) continue;
    VectorXd hu = H * y.U.row(v).transpose();
    for (int r = 0; r < hu.size(); ++r)
      if (hu[r] > h[r]) scale = std::min(scale, h[r] / hu[r]);
  }
  for (int v = 0; v < cs.tri().num_vertices(); ++v)
    if (!cs.u_pinned(v)) y.U.row(v) *= scale;
}

}  // namespace

DecisionVariables init_random(const ConstraintSystem& cs, double a, double b1,
                              std::mt19937_64& rng, double amplitude) {
  if (std::abs(a - cs.exponent()) > 1e-12)
    throw std::invalid_argument("init_random: exponent must match the constraint system");
  if (!(b1 > 0.0)) throw std::invalid_argument("init_random: b1 must be positive");
  const Triangulation& tri = cs.tri();
  const auto& md = cs.model();

  DecisionVariables y;
  y.a = a;
  y.b1 = b1;

  // multi-stage: b1 is limited by the pinned inner-boundary values
  if (cs.variant().kind == VariantKind::multi_stage) {
    for (const auto& [v, val] : cs.variant().pinned_V) {
      const double k = cs.norm_pow()[v];
      if (k > 1e-12) y.b1 = std::min(y.b1, val / k);
    }
    if (y.b1 < cs.eps_b1())
      throw std::runtime_error("init_random: pinned boundary values force b1 below its floor");
  }

  y.V.resize(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) y.V[v] = y.b1 * cs.norm_pow()[v];

  y.U = MatrixXd::Zero(tri.num_vertices(), md.m);
  if (amplitude > 0.0) {
    std::uniform_real_distribution<double> dist(-amplitude, amplitude);
    for (int v = 0; v < tri.num_vertices(); ++v) {
      if (cs.u_pinned(v)) continue;
      for (int s = 0; s < md.m; ++s) y.U(v, s) = dist(rng);
    }
    scale_inputs_admissible(cs, y);
  }

  apply_variant_values(cs, y);
  fill_bound_vars(cs, y);
  fit_decay(cs, y);
  return y;
}

DecisionVariables init_lqr(const ConstraintSystem& cs) {
  if (std::abs(cs.exponent() - 2.0) > 1e-12)
    throw std::invalid_argument("init_lqr: requires exponent a = 2");
  const Triangulation& tri = cs.tri();
  const auto& md = cs.model();

  auto [A, B] = md.linearize();
  const MatrixXd Q = 2.0 * MatrixXd::Identity(md.n, md.n);
  const MatrixXd R = MatrixXd::Identity(md.m, md.m);
  const MatrixXd P = care::solve_care(A, B, Q, R);
  const MatrixXd K = B.transpose() * P;  // R = I

  DecisionVariables y;
  y.a = 2.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P, Eigen::EigenvaluesOnly);
  y.b1 = eig.eigenvalues().minCoeff();
  if (!(y.b1 > 0)) throw std::runtime_error("init_lqr: Riccati solution not positive definite");

  if (cs.variant().kind == VariantKind::multi_stage) {
    for (const auto& [v, val] : cs.variant().pinned_V) {
      const double k = cs.norm_pow()[v];
      if (k > 1e-12) y.b1 = std::min(y.b1, val / k);
    }
    if (y.b1 < cs.eps_b1())
      throw std::runtime_error("init_lqr: pinned boundary values force b1 below its floor");
  }

  y.V.resize(tri.num_vertices());
  y.U.resize(tri.num_vertices(), md.m);
  for (int v = 0; v < tri.num_vertices(); ++v) {
    const VectorXd& x = tri.vertex(v).coords;
    y.V[v] = x.dot(P * x);
    y.U.row(v) = (-K * x).transpose();
  }
  scale_inputs_admissible(cs, y);
  apply_variant_values(cs, y);
  fill_bound_vars(cs, y);
  fit_decay(cs, y);
  return y;
}

// ---------------------------------------------------------------------------
// convex-overbounded iteration
// ---------------------------------------------------------------------------

namespace {

struct VarMap {
  std::vector<int> dV;           // per vertex; -1 pinned; tie vertices share vTie
  std::vector<std::vector<int>> dU;  // per vertex per channel; -1 pinned
  std::vector<std::vector<int>> dL;  // per simplex per component
  std::vector<int> dZ;           // per simplex (empty for constant G)
  int vTie = -1, vB1 = -1, vB2 = -1, vB3 = -1;
};

AffineExpr expr_of(int var, double coef = 1.0) {
  AffineExpr e;
  if (var >= 0) e.add(var, coef);
  return e;
}

}  // namespace

IterateResult iterate(const ConstraintSystem& cs, const DecisionVariables& current,
                      const Objective& objective, bool fix_b2, const conic::SolveOptions& solver) {
  const Triangulation& tri = cs.tri();
  const auto& md = cs.model();
  const int n = tri.dim(), m = md.m;
  const bool use_z = !md.constant_G;

  conic::ConicProgram prog;
  VarMap vm;
  vm.dV.assign(tri.num_vertices(), -1);
  vm.dU.assign(tri.num_vertices(), std::vector<int>(m, -1));
  vm.dL.assign(tri.num_simplexes(), std::vector<int>(n, -1));
  if (use_z) vm.dZ.assign(tri.num_simplexes(), -1);

  const bool tie = cs.variant().boundary_tie();
  if (tie) vm.vTie = prog.new_variable();
  for (int v = 0; v < tri.num_vertices(); ++v) {
    if (cs.v_pinned(v)) continue;
    vm.dV[v] = cs.tied_to_boundary(v) ? vm.vTie : prog.new_variable();
    if (!cs.u_pinned(v))
      for (int s = 0; s < m; ++s) vm.dU[v][s] = prog.new_variable();
  }
  // l_i / z_i only matter where the interpolation-error terms are active;
  // elsewhere their rows would force identically-zero duals and destroy the
  // central path, so those bounds are recomputed from the solution instead
  std::vector<char> l_active(tri.num_simplexes(), 0), z_active(tri.num_simplexes(), 0);
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const double cmax = tri.geometry(i).c.maxCoeff();
    l_active[i] = (cs.constants().mu[i] * cmax > 0.0) ||
                  (use_z && cs.constants().eta[i] * cmax > 0.0);
    z_active[i] = use_z && cs.constants().eta[i] * cmax > 0.0;
    if (l_active[i])
      for (int k = 0; k < n; ++k) vm.dL[i][k] = prog.new_variable();
    if (z_active[i]) vm.dZ[i] = prog.new_variable();
  }
  vm.vB1 = prog.new_variable();
  if (!fix_b2) vm.vB2 = prog.new_variable();
  if (current.has_b3) vm.vB3 = prog.new_variable();

  // (9a) b1 floor, constant across iterations
  {
    AffineExpr e;
    e.add(vm.vB1, -1.0);
    prog.add_le(std::move(e), current.b1 - cs.eps_b1());
  }
  // (9b) lower bound rows and the tie upper rows
  for (int v = 0; v < tri.num_vertices(); ++v) {
    const double kx = cs.norm_pow()[v];
    AffineExpr e;
    e.add(vm.vB1, kx);
    if (vm.dV[v] >= 0) e.add(vm.dV[v], -1.0);
    prog.add_le(std::move(e), current.V[v] - current.b1 * kx);
    if (tie && !cs.tied_to_boundary(v)) {
      double tie_val = 0.0;
      for (int w = 0; w < tri.num_vertices(); ++w)
        if (cs.tied_to_boundary(w)) {
          tie_val = current.V[w];
          break;
        }
      AffineExpr up;
      if (vm.dV[v] >= 0) up.add(vm.dV[v], 1.0);
      up.add(vm.vTie, -1.0);
      prog.add_le(std::move(up), tie_val - current.V[v]);
    }
  }
  // (9d) input rows at every vertex
  for (int v = 0; v < tri.num_vertices(); ++v) {
    if (cs.u_pinned(v)) continue;
    const VectorXd hu = md.input_H * current.U.row(v).transpose();
    for (int r = 0; r < md.input_H.rows(); ++r) {
      AffineExpr e;
      for (int s = 0; s < m; ++s) e.add(vm.dU[v][s], md.input_H(r, s));
      prog.add_le(std::move(e), md.input_h[r] - hu[r]);
    }
  }

  // per-simplex gradient expressions and bound rows
  std::vector<std::vector<AffineExpr>> dgradV(tri.num_simplexes());
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& g = tri.geometry(i);
    const auto& sv = tri.simplex(i).v;
    auto& comps = dgradV[i];
    comps.assign(n, AffineExpr());
    for (int k = 0; k < n; ++k)
      for (int j = 1; j <= n; ++j) {
        const double w = g.X_inv(k, j - 1);
        if (w == 0.0) continue;
        if (vm.dV[sv[j]] >= 0) comps[k].add(vm.dV[sv[j]], w);
        if (vm.dV[sv[0]] >= 0) comps[k].add(vm.dV[sv[0]], -w);
      }
    for (auto& e : comps) e.compress();

    if (l_active[i]) {
      const VectorXd gv = cs.grad_V(current, i);
      for (int k = 0; k < n; ++k)
        for (double sgn : {1.0, -1.0}) {
          AffineExpr e = comps[k];
          e.scale(sgn);
          e.add(vm.dL[i][k], -1.0);
          prog.add_le(std::move(e), current.L(i, k) - sgn * gv[k]);
        }
    }

    if (z_active[i]) {
      for (int s = 0; s < m; ++s) {
        const VectorXd gu = cs.grad_u(current, i, s);
        for (int k = 0; k < n; ++k)
          for (double sgn : {1.0, -1.0}) {
            AffineExpr e;
            for (int j = 1; j <= n; ++j) {
              const double w = sgn * g.X_inv(k, j - 1);
              if (vm.dU[sv[j]][s] >= 0) e.add(vm.dU[sv[j]][s], w);
              if (vm.dU[sv[0]][s] >= 0) e.add(vm.dU[sv[0]][s], -w);
            }
            e.add(vm.dZ[i], -1.0);
            prog.add_le(std::move(e), current.Z[i] - sgn * gu[k]);
          }
      }
    }
  }

  // decrease rows: convexified P / Q blocks
  const bool proportional = cs.variant().rhs == DecreaseRhs::proportional;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& sv = tri.simplex(i).v;
    const VectorXd gv = cs.grad_V(current, i);
    const double l1 = current.L.row(i).sum();
    const double mu_i = cs.constants().mu[i];
    const double eta_i = use_z ? cs.constants().eta[i] : 0.0;
    const bool inner = cs.inner_simplex(i);
    const double b_cur = inner ? current.b3 : current.b2;
    const int vB = inner ? vm.vB3 : vm.vB2;

    for (int j = 0; j <= n; ++j) {
      const int x = sv[j];
      const double c = tri.geometry(i).c[j];
      const double etac = eta_i * c;

      // phi_hat: exact row value at the current point plus all linear delta terms
      AffineExpr phi;
      phi.constant = cs.decrease_row(current, i, j);

      const VectorXd w = cs.f_at(x) + cs.G_at(x) * current.U.row(x).transpose();
      for (int k = 0; k < n; ++k) {
        AffineExpr t = dgradV[i][k];
        t.scale(w[k]);
        phi += t;
      }
      const VectorXd gvu = cs.G_at(x).transpose() * gv;  // m-vector
      for (int s = 0; s < m; ++s)
        if (vm.dU[x][s] >= 0) phi.add(vm.dU[x][s], gvu[s]);
      if (l_active[i]) {
        const double lcoef = mu_i * c + etac * (use_z ? current.Z[i] : 0.0);
        for (int k = 0; k < n; ++k)
          if (vm.dL[i][k] >= 0) phi.add(vm.dL[i][k], lcoef);
      }
      if (z_active[i] && etac > 0.0 && vm.dZ[i] >= 0) phi.add(vm.dZ[i], etac * l1);
      if (proportional) {
        if (vm.dV[x] >= 0) phi.add(vm.dV[x], b_cur);
        if (vB >= 0) phi.add(vB, current.V[x]);
      } else {
        if (vB >= 0) phi.add(vB, 1.0);
      }
      phi.compress();

      // overbounding pairs; a pair drops when one side is structurally zero
      const bool du_free = !cs.u_pinned(x);
      bool dgrad_free = false;
      for (const auto& e : dgradV[i]) dgrad_free |= e.has_variables();
      const bool pair_vu = du_free && dgrad_free;
      const bool pair_vb = proportional && vm.dV[x] >= 0 && vB >= 0;
      const bool pair_lz = z_active[i] && l_active[i] && etac > 0.0;

      if (!pair_vu && !pair_vb && !pair_lz) {
        if (phi.has_variables()) prog.add_le(std::move(phi), 0.0);
        continue;
      }

      const int dim = 1 + (pair_vu ? 2 * n : 0) + (pair_vb ? 2 : 0) + (pair_lz ? 2 : 0);
      const int blk = prog.add_psd_le_zero(dim);
      prog.set_entry(blk, 0, 0, std::move(phi));
      int row = 1;
      if (pair_vu) {
        for (int k = 0; k < n; ++k) {
          prog.set_entry(blk, row, 0, dgradV[i][k]);
          prog.set_entry(blk, row, row, AffineExpr(-2.0));
          ++row;
        }
        for (int k = 0; k < n; ++k) {
          AffineExpr e;
          for (int s = 0; s < m; ++s)
            if (vm.dU[x][s] >= 0) e.add(vm.dU[x][s], cs.G_at(x)(k, s));
          prog.set_entry(blk, row, 0, std::move(e));
          prog.set_entry(blk, row, row, AffineExpr(-2.0));
          ++row;
        }
      }
      if (pair_vb) {
        prog.set_entry(blk, row, 0, expr_of(vm.dV[x]));
        prog.set_entry(blk, row, row, AffineExpr(-2.0));
        ++row;
        prog.set_entry(blk, row, 0, expr_of(vB));
        prog.set_entry(blk, row, row, AffineExpr(-2.0));
        ++row;
      }
      if (pair_lz) {
        AffineExpr suml;
        for (int k = 0; k < n; ++k) suml.add(vm.dL[i][k], 1.0);
        prog.set_entry(blk, row, 0, std::move(suml));
        prog.set_entry(blk, row, row, AffineExpr(-2.0 / etac));
        ++row;
        prog.set_entry(blk, row, 0, expr_of(vm.dZ[i]));
        prog.set_entry(blk, row, row, AffineExpr(-2.0 / etac));
        ++row;
      }
    }
  }

  // objective
  if (objective.kind == Objective::Kind::maximize_b2) {
    if (vm.vB2 < 0) throw std::invalid_argument("iterate: cannot maximize a fixed b2");
    AffineExpr obj;
    obj.add(vm.vB2, -1.0);
    prog.minimize(std::move(obj));
  } else if (objective.kind == Objective::Kind::min_input_norm) {
    AffineExpr obj;
    for (int v = 0; v < tri.num_vertices(); ++v) {
      if (cs.u_pinned(v)) continue;
      const int t = prog.new_variable();
      obj.add(t, 1.0);
      const int blk = prog.add_psd_le_zero(m + 1);
      prog.set_entry(blk, 0, 0, expr_of(t, -1.0));
      for (int s = 0; s < m; ++s) {
        AffineExpr e(current.U(v, s));
        e.add(vm.dU[v][s], 1.0);
        prog.set_entry(blk, s + 1, 0, std::move(e));
        prog.set_entry(blk, s + 1, s + 1, AffineExpr(-1.0));
      }
    }
    prog.minimize(std::move(obj));
  } else {
    prog.minimize(AffineExpr());
  }

  conic::SolveOptions opts = solver;
  opts.assume_feasible = true;
  auto rep = prog.solve(opts);

  IterateResult result;
  result.status = rep.status;
  result.sdp_iterations = rep.iterations;
  if (rep.status != conic::SolveStatus::optimal) {
    result.vars = current;
    result.solver_ok = false;
    return result;
  }

  DecisionVariables next = current;
  for (int v = 0; v < tri.num_vertices(); ++v) {
    if (vm.dV[v] >= 0) next.V[v] += rep.values[vm.dV[v]];
    for (int s = 0; s < m; ++s)
      if (vm.dU[v][s] >= 0) next.U(v, s) += rep.values[vm.dU[v][s]];
  }
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    if (l_active[i]) {
      for (int k = 0; k < n; ++k) next.L(i, k) += rep.values[vm.dL[i][k]];
    } else {
      next.L.row(i) = cs.grad_V(next, i).cwiseAbs().transpose();
    }
    if (use_z) {
      if (z_active[i]) {
        next.Z[i] += rep.values[vm.dZ[i]];
      } else {
        double z = 0.0;
        for (int s = 0; s < m; ++s) z = std::max(z, cs.grad_u(next, i, s).cwiseAbs().maxCoeff());
        next.Z[i] = z;
      }
    }
  }
  next.b1 += rep.values[vm.vB1];
  if (vm.vB2 >= 0) next.b2 += rep.values[vm.vB2];
  if (vm.vB3 >= 0) next.b3 += rep.values[vm.vB3];

  const double resid = cs.max_residual(next);
  if (resid > 1e-6)
    throw std::runtime_error("iterate: post-check failed, residual " + std::to_string(resid));

  result.vars = std::move(next);
  result.solver_ok = true;
  result.objective = rep.objective;
  return result;
}

// ---------------------------------------------------------------------------
// Algorithm 1
// ---------------------------------------------------------------------------

FixedMeshResult run_fixed_mesh(const ConstraintSystem& cs, const DecisionVariables& init,
                               const FixedMeshOptions& opts) {
  if (cs.max_residual(init) > 1e-7)
    throw std::invalid_argument("run_fixed_mesh: initialization is not feasible");

  FixedMeshResult out;
  out.vars = init;
  out.b2_history.push_back(init.b2);

  int stall = 0;
  for (int it = 0; it < opts.max_iters; ++it) {
    if (out.vars.b2 >= opts.b2_target) {
      out.reached_target = true;
      break;
    }
    auto step = iterate(cs, out.vars, Objective::maximize_b2(), false, opts.solver);
    ++out.iterations;
    if (!step.solver_ok) break;
    const double delta = step.vars.b2 - out.vars.b2;
    out.vars = std::move(step.vars);
    out.b2_history.push_back(out.vars.b2);
    if (opts.on_iteration) opts.on_iteration(it, out.vars);
    if (out.vars.b2 >= opts.b2_target) {
      out.reached_target = true;
      break;
    }
    if (std::abs(delta) < opts.stall_tol) {
      if (++stall >= opts.stall_window) break;
    } else {
      stall = 0;
    }
  }

  if (out.vars.b2 > 0.0 && opts.max_iters_phase2 > 0) {
    double prev = std::numeric_limits<double>::infinity();
    int stall2 = 0;
    for (int it = 0; it < opts.max_iters_phase2; ++it) {
      auto step = iterate(cs, out.vars, opts.phase2, /*fix_b2=*/true, opts.solver);
      ++out.iterations;
      if (!step.solver_ok) break;
      out.vars = std::move(step.vars);
      const double obj = out.vars.U.squaredNorm();
      out.phase2_history.push_back(obj);
      if (prev - obj < opts.stall_tol) {
        if (++stall2 >= opts.stall_window) break;
      } else {
        stall2 = 0;
      }
      prev = obj;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// salvage corollaries
// ---------------------------------------------------------------------------

SalvageResult salvage(const ConstraintSystem& cs, const DecisionVariables& y) {
  const Triangulation& tri = cs.tri();
  SalvageResult out;
  double hat = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    bool keep = true;
    double local = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= tri.dim() && keep; ++j) {
      const int x = tri.simplex(i).v[j];
      if (x == tri.origin_vertex()) continue;
      const double d = cs.dini_bound(y, i, j);
      if (!(d < 0.0)) {
        keep = false;
        break;
      }
      if (y.V[x] > 1e-300) local = std::min(local, -d / y.V[x]);
    }
    if (keep) {
      out.kept.push_back(i);
      hat = std::min(hat, local);
    }
  }
  out.ok = !out.kept.empty() && std::isfinite(hat) && hat > 0.0;
  out.hat_b2 = out.ok ? hat : 0.0;
  if (cs.variant().rhs == DecreaseRhs::constant && y.b2 > 0.0) {
    double vmax = 0.0;
    for (int v = 0; v < tri.num_vertices(); ++v)
      if (v != tri.origin_vertex()) vmax = std::max(vmax, y.V[v]);
    if (vmax > 0.0) out.tilde_b2 = y.b2 / vmax;
  }
  return out;
}

// ---------------------------------------------------------------------------
// certification
// ---------------------------------------------------------------------------

std::optional<CertifiedRegion> certify(const ConstraintSystem& cs, const DecisionVariables& y,
                                       int stage) {
  if (cs.max_residual(y) > 1e-6)
    throw std::runtime_error("certify: decision variables violate the nonconvex constraints");

  const Triangulation& tri = cs.tri();
  CertifiedRegion cert;
  cert.a = y.a;
  cert.b1 = y.b1;
  cert.stage = stage;

  if (y.b2 > 0.0) {
    cpa::ScalarField V(tri, y.V);
    const bool exclude = !cs.variant().boundary_tie();
    try {
      cert.region = cpa::largest_certified_sublevel(V, exclude);
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
    cert.r = cert.region.r;
    cert.b2 = y.b2;
    cert.salvage = SalvageKind::none;
    return cert;
  }

  // fall back to the sub-triangulation where the rows are already negative
  SalvageResult s = salvage(cs, y);
  if (!s.ok) return std::nullopt;
  try {
    Triangulation sub = mesh::submesh(tri, s.kept);
    VectorXd subvals(sub.num_vertices());
    {
      // submesh() preserves first-visit ordering of vertices over s.kept
      std::vector<int> old_of_new(sub.num_vertices(), -1);
      std::vector<int> seen(tri.num_vertices(), -1);
      int next = 0;
      for (int i : s.kept)
        for (int v : tri.simplex(i).v)
          if (seen[v] < 0) {
            seen[v] = next;
            old_of_new[next] = v;
            ++next;
          }
      for (int v = 0; v < sub.num_vertices(); ++v) subvals[v] = y.V[old_of_new[v]];
    }
    cpa::ScalarField subV(sub, subvals);
    cpa::SublevelRegion region = cpa::largest_certified_sublevel(subV, true);
    // map simplex ids back to the parent mesh
    for (int& i : region.member_simplexes) i = s.kept[i];
    for (int& i : region.touched_simplexes) i = s.kept[i];
    std::sort(region.member_simplexes.begin(), region.member_simplexes.end());
    std::sort(region.touched_simplexes.begin(), region.touched_simplexes.end());
    cert.region = std::move(region);
    cert.r = cert.region.r;
    cert.b2 = s.hat_b2;
    cert.salvage = SalvageKind::hat_b2;
    return cert;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// multi-stage pipeline
// ---------------------------------------------------------------------------

namespace {

bool loop_contains(const MatrixXd& loop, const VectorXd& p) {
  int winds = 0;
  const int k = static_cast<int>(loop.rows());
  for (int i = 0; i < k; ++i) {
    const auto a = loop.row(i), b = loop.row((i + 1) % k);
    if ((a[1] <= p[1]) != (b[1] <= p[1])) {
      const double t = (p[1] - a[1]) / (b[1] - a[1]);
      if (a[0] + t * (b[0] - a[0]) > p[0]) ++winds;
    }
  }
  return winds % 2 == 1;
}

}  // namespace

std::vector<StageResult> run_multistage(const model::SystemModel& md, const StagePlan& plan) {
  std::vector<StageResult> results;
  std::mt19937_64 rng(plan.seed);

  // stage 1
  auto tri1 = std::make_shared<Triangulation>(plan.first_mesh());
  VariantSpec v1;
  v1.kind = plan.first_kind;
  ConstraintSystem cs1(md, *tri1, v1);
  DecisionVariables init =
      plan.lqr_init ? init_lqr(cs1) : init_random(cs1, 2.0, 1.0, rng, plan.init_amplitude);
  FixedMeshResult fm = run_fixed_mesh(cs1, init, plan.fixed);
  auto cert = certify(cs1, fm.vars, 1);
  if (!cert) return results;
  StageResult first;
  first.tri = tri1;
  first.vars = fm.vars;
  first.certified = *cert;
  first.achieved_b2 = fm.reached_target;
  first.b2_history = fm.b2_history;
  results.push_back(std::move(first));

  for (size_t ring_idx = 0; ring_idx < plan.rings.size(); ++ring_idx) {
    const auto& ring = plan.rings[ring_idx];
    const StageResult& prev = results.back();
    const MatrixXd inner_poly = prev.certified.region.boundary_polyline;
    if (inner_poly.rows() < 3) return results;

    for (int r = 0; r < inner_poly.rows(); ++r)
      if (!loop_contains(ring.outer, inner_poly.row(r).transpose()))
        throw std::invalid_argument("run_multistage: outer ring does not contain the previous region");

    auto tri = std::make_shared<Triangulation>(
        mesh::triangulate_annulus(ring.outer, inner_poly, ring.size));

    VariantSpec vs;
    vs.kind = VariantKind::multi_stage;
    vs.continuity = ring.continuity;
    vs.target_surface = "inner";
    cpa::VectorField prev_u(*prev.tri, prev.vars.U);
    const auto& inner_ids = tri->surfaces().at("inner");
    for (int v : inner_ids) {
      vs.pinned_V[v] = prev.certified.r;
      const VectorXd x = tri->vertex(v).coords;
      std::vector<int> at;
      if (prev.tri->try_locate(x, at, 1e-7)) vs.pinned_u[v] = prev_u.evaluate(x);
      else vs.pinned_u[v] = VectorXd::Zero(md.m);
    }

    ConstraintSystem cs(md, *tri, vs);
    DecisionVariables ini =
        plan.lqr_init ? init_lqr(cs) : init_random(cs, 2.0, 1.0, rng, plan.init_amplitude);
    FixedMeshResult ringfm = run_fixed_mesh(cs, ini, plan.fixed);
    if (cs.max_residual(ringfm.vars) > 1e-6) return results;

    StageResult stage;
    stage.tri = tri;
    stage.vars = ringfm.vars;
    stage.achieved_b2 = ringfm.reached_target;
    stage.b2_history = ringfm.b2_history;
    CertifiedRegion creg;
    creg.stage = static_cast<int>(ring_idx) + 2;

    double stage_b2 = 0.0;
    if (ringfm.vars.b2 > 0.0) {
      stage_b2 = ringfm.vars.b2;
      creg.salvage = SalvageKind::none;
      // whole annulus is certified; the boundary level is the tie value
      double tie_val = 0.0;
      for (int v = 0; v < tri->num_vertices(); ++v)
        if (cs.tied_to_boundary(v)) {
          tie_val = ringfm.vars.V[v];
          break;
        }
      creg.r = tie_val;
      creg.region.r = tie_val;
      creg.region.boundary_polyline = ring.outer;
      creg.region.member_simplexes.resize(tri->num_simplexes());
      std::iota(creg.region.member_simplexes.begin(), creg.region.member_simplexes.end(), 0);
      creg.region.touched_simplexes = creg.region.member_simplexes;
      creg.region.contains_origin = true;
    } else {
      SalvageResult s = salvage(cs, ringfm.vars);
      if (!s.ok) return results;
      Triangulation sub = mesh::submesh(*tri, s.kept);
      std::vector<int> old_of_new(sub.num_vertices(), -1);
      {
        std::vector<int> seen(tri->num_vertices(), -1);
        int next = 0;
        for (int i : s.kept)
          for (int v : tri->simplex(i).v)
            if (seen[v] < 0) {
              seen[v] = next;
              old_of_new[next] = v;
              ++next;
            }
      }
      VectorXd subvals(sub.num_vertices());
      for (int v = 0; v < sub.num_vertices(); ++v) subvals[v] = ringfm.vars.V[old_of_new[v]];
      cpa::ScalarField subV(sub, subvals);

      double rim = std::numeric_limits<double>::infinity();
      const auto& subinner = sub.surfaces().count("inner") ? sub.surfaces().at("inner") : std::set<int>{};
      for (int v : sub.boundary_vertices())
        if (!subinner.count(v)) rim = std::min(rim, subvals[v]);
      if (!std::isfinite(rim)) return results;
      const double r_new = (1.0 - 1e-6) * rim;
      if (r_new <= prev.certified.r) return results;

      std::vector<int> seeds;
      for (int i = 0; i < sub.num_simplexes(); ++i)
        for (int v : sub.simplex(i).v)
          if (subinner.count(v)) {
            seeds.push_back(i);
            break;
          }
      if (seeds.empty()) return results;
      cpa::SublevelRegion region;
      try {
        region = cpa::sublevel_from_seeds(subV, r_new, seeds);
      } catch (const std::exception&) {
        return results;
      }
      if (region.boundary_polyline.rows() < 3 ||
          !loop_contains(region.boundary_polyline, VectorXd::Zero(2)))
        return results;
      for (int& i : region.member_simplexes) i = s.kept[i];
      for (int& i : region.touched_simplexes) i = s.kept[i];
      std::sort(region.member_simplexes.begin(), region.member_simplexes.end());
      std::sort(region.touched_simplexes.begin(), region.touched_simplexes.end());
      creg.region = std::move(region);
      creg.r = r_new;
      creg.salvage = SalvageKind::hat_b2;
      stage_b2 = s.hat_b2;
    }

    creg.a = std::min(ringfm.vars.a, prev.certified.a);
    creg.b1 = std::min(ringfm.vars.b1, prev.certified.b1);
    creg.b2 = std::min(stage_b2, prev.certified.b2);
    stage.certified = std::move(creg);
    results.push_back(std::move(stage));
  }
  return results;
}

// ---------------------------------------------------------------------------
// refinement loop (Algorithm 2)
// ---------------------------------------------------------------------------

mesh::SizeField SizeSpec::field_at_level(int level) const {
  mesh::SizeField f(base_rho * std::pow(base_gamma, level));
  for (const auto& reg : regions)
    f.add_region(reg.contains, reg.rho * std::pow(reg.gamma, level));
  return f;
}

double SizeSpec::min_rho_at_level(int level) const {
  double r = base_rho * std::pow(base_gamma, level);
  for (const auto& reg : regions) r = std::min(r, reg.rho * std::pow(reg.gamma, level));
  return r;
}

mesh::Triangulation GeneratorSpec::build(const mesh::SizeField& size) const {
  if (kind == Kind::box) return mesh::triangulate_box(box, size, surfaces);
  return mesh::triangulate_polygon(polygon, size);
}

RefiningResult run_refining(const model::SystemModel& md, const GeneratorSpec& gen,
                            VariantKind kind, const SizeSpec& sizes, const RefiningOptions& opts) {
  RefiningResult out;
  std::mt19937_64 rng(opts.seed);
  double best_area = -1.0;

  for (int level = 0; level < opts.max_levels; ++level) {
    if (level > 0 && sizes.min_rho_at_level(level) < sizes.rho_min) break;
    auto tri = std::make_shared<Triangulation>(gen.build(sizes.field_at_level(level)));
    VariantSpec vs;
    vs.kind = kind;
    ConstraintSystem cs(md, *tri, vs);
    DecisionVariables init =
        opts.lqr_init ? init_lqr(cs) : init_random(cs, 2.0, 1.0, rng, opts.init_amplitude);
    FixedMeshResult fm = run_fixed_mesh(cs, init, opts.fixed);

    StageResult stage;
    stage.tri = tri;
    stage.vars = fm.vars;
    stage.achieved_b2 = fm.reached_target;
    stage.b2_history = fm.b2_history;
    auto cert = certify(cs, fm.vars, level + 1);
    if (cert) stage.certified = *cert;
    out.per_level.push_back(std::move(stage));

    const bool have_cert = cert.has_value();
    const double area = have_cert ? cert->region.area() : 0.0;
    if (have_cert && area > best_area) {
      best_area = area;
      out.best_level = level;
    }
    bool met = true;
    if (opts.fixed.b2_target > 0.0) met = met && (fm.reached_target || (have_cert && cert->b2 > 0.0));
    if (opts.min_certified_area > 0.0) met = met && have_cert && area >= opts.min_certified_area;
    if (met) {
      out.objectives_met = true;
      break;
    }
  }
  return out;
}

}  // namespace cpalyap::synth
