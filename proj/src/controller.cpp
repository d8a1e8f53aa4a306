#include "cpalyap/controller.hpp"

#include <cmath>
#include <stdexcept>

namespace cpalyap::ctrl {

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

bool on_loop(const MatrixXd& loop, const VectorXd& p, double tol) {
  const int k = static_cast<int>(loop.rows());
  for (int i = 0; i < k; ++i) {
    VectorXd a = loop.row(i).transpose(), b = loop.row((i + 1) % k).transpose();
    VectorXd ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 <= 0) continue;
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    if ((p - (a + t * ab)).norm() <= tol) return true;
  }
  return false;
}

}  // namespace

CpaController::CpaController(std::vector<Stage> stages, int m) : stages_(std::move(stages)), m_(m) {
  if (stages_.empty()) throw std::invalid_argument("CpaController: no stages");
}

CpaController CpaController::from_stage_results(const std::vector<synth::StageResult>& results,
                                                int m) {
  std::vector<Stage> stages;
  for (const auto& sr : results) {
    Stage st;
    st.tri = sr.tri;
    st.U = sr.vars.U;
    st.V = sr.vars.V;
    st.polyline = sr.certified.region.boundary_polyline;
    st.r = sr.certified.r;
    st.b2 = sr.certified.b2;
    st.b1 = sr.certified.b1;
    st.a = sr.certified.a;
    stages.push_back(std::move(st));
  }
  return CpaController(std::move(stages), m);
}

int CpaController::stage_of(const VectorXd& x) const {
  const double tol = 1e-9;
  const int K = stage_count();
  for (int k = K - 1; k >= 0; --k) {
    const bool inside = loop_contains(stages_[k].polyline, x) || on_loop(stages_[k].polyline, x, tol);
    if (!inside) continue;
    if (k == 0) return 0;
    // strictly inside the next-inner region -> belongs to a deeper stage;
    // on its boundary -> this (outer) stage wins
    const auto& inner = stages_[k - 1].polyline;
    if (loop_contains(inner, x) && !on_loop(inner, x, tol)) continue;
    return k;
  }
  return -1;
}

VectorXd CpaController::eval(const VectorXd& x) const {
  const int k = stage_of(x);
  if (k < 0) throw std::domain_error("CpaController::eval: point outside the certified region");
  const Stage& st = stages_[k];
  std::vector<int> at;
  if (!st.tri->try_locate(x, at, 1e-7)) {
    // boundary round-off: fall back to any stage mesh containing the point
    for (int alt = 0; alt < stage_count(); ++alt)
      if (stages_[alt].tri->try_locate(x, at, 1e-7)) {
        const Stage& st2 = stages_[alt];
        const int i = at.front();
        VectorXd alpha = st2.tri->barycentric(i, x);
        VectorXd u = VectorXd::Zero(m_);
        for (int j = 0; j <= st2.tri->dim(); ++j)
          u += alpha[j] * st2.U.row(st2.tri->simplex(i).v[j]).transpose();
        return u;
      }
    throw std::domain_error("CpaController::eval: point not covered by any stage mesh");
  }
  const int i = at.front();
  VectorXd alpha = st.tri->barycentric(i, x);
  VectorXd u = VectorXd::Zero(m_);
  for (int j = 0; j <= st.tri->dim(); ++j) u += alpha[j] * st.U.row(st.tri->simplex(i).v[j]).transpose();
  return u;
}

double CpaController::lyapunov(const VectorXd& x, int stage) const {
  const Stage& st = stages_[stage];
  std::vector<int> at;
  if (!st.tri->try_locate(x, at, 1e-7))
    throw std::domain_error("CpaController::lyapunov: point outside the stage mesh");
  const int i = at.front();
  VectorXd alpha = st.tri->barycentric(i, x);
  double v = 0.0;
  for (int j = 0; j <= st.tri->dim(); ++j) v += alpha[j] * st.V[st.tri->simplex(i).v[j]];
  return v;
}

double CpaController::combined_b2() const {
  double b = std::numeric_limits<double>::infinity();
  for (const auto& st : stages_) b = std::min(b, st.b2);
  return b;
}

VectorXd online_qp(const OnlineQpConfig& cfg, const model::SystemModel& md,
                   const CpaController& ctrl, const VectorXd& x) {
  const int k = ctrl.stage_of(x);
  if (k < 0) throw std::domain_error("online_qp: point outside the certified region");
  const Stage& st = ctrl.stage(k);
  const int m = md.m;

  const MatrixXd H = cfg.Hmat ? cfg.Hmat(x) : MatrixXd::Identity(m, m);
  const VectorXd h = cfg.hvec ? cfg.hvec(x) : VectorXd::Zero(m);
  const double b2 = cfg.b2 > 0.0 ? cfg.b2 : std::max(st.b2, 0.0);

  std::vector<int> at;
  if (!st.tri->try_locate(x, at, 1e-9))
    throw std::domain_error("online_qp: point not in the stage mesh");
  const double Vx = ctrl.lyapunov(x, k);
  const VectorXd fx = md.f(x);
  const MatrixXd Gx = md.G(x);

  const int p = static_cast<int>(md.input_H.rows());
  MatrixXd A(p + static_cast<int>(at.size()), m);
  VectorXd b(A.rows());
  A.topRows(p) = md.input_H;
  b.head(p) = md.input_h;
  cpa::ScalarField V(*st.tri, st.V);
  for (size_t idx = 0; idx < at.size(); ++idx) {
    const VectorXd gv = V.gradient(at[idx]);
    A.row(p + idx) = (Gx.transpose() * gv).transpose();
    b[p + idx] = -gv.dot(fx) - b2 * Vx;
  }

  VectorXd u;
  try {
    u = conic::solve_qp(H, h, A, b);
  } catch (const conic::QpInfeasible&) {
    throw std::runtime_error("online_qp: infeasible inside the certified region (broken certificate)");
  }
  const double feas = (A * u - b).maxCoeff();
  if (feas > 1e-9)
    throw std::runtime_error("online_qp: solution violates the decrease rows");
  return u;
}

MinNormResult min_norm_offline(const synth::ConstraintSystem& cs,
                               const synth::DecisionVariables& start, int max_iters,
                               const conic::SolveOptions& solver) {
  MinNormResult out;
  out.vars = start;
  out.norm_history.push_back(start.U.squaredNorm());
  int stall = 0;
  for (int it = 0; it < max_iters; ++it) {
    auto step = synth::iterate(cs, out.vars, synth::Objective::min_input_norm(), /*fix_b2=*/true,
                               solver);
    if (!step.solver_ok) break;
    const double prev = out.norm_history.back();
    out.vars = std::move(step.vars);
    const double now = out.vars.U.squaredNorm();
    out.norm_history.push_back(now);
    if (prev - now < 1e-9) {
      if (++stall >= 3) break;
    } else {
      stall = 0;
    }
  }
  out.phi = out.norm_history.back();
  return out;
}

}  // namespace cpalyap::ctrl
