#include "cpalyap/sim.hpp"

#include <cmath>
#include <stdexcept>

namespace cpalyap::sim {

namespace {

VectorXd closed_loop_rhs(const model::SystemModel& md, const VectorXd& x, const VectorXd& u) {
  return md.f(x) + md.G(x) * u;
}

VectorXd rk4_step(const model::SystemModel& md, const VectorXd& x, const VectorXd& u, double dt) {
  const VectorXd k1 = closed_loop_rhs(md, x, u);
  const VectorXd k2 = closed_loop_rhs(md, x + 0.5 * dt * k1, u);
  const VectorXd k3 = closed_loop_rhs(md, x + 0.5 * dt * k2, u);
  const VectorXd k4 = closed_loop_rhs(md, x + dt * k3, u);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Trajectory integrate(const model::SystemModel& md, const ControlLaw& u, const VectorXd& x0,
                     double T, double dt, const InsideTest& inside) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  if (!md.state_box.contains(x0, 1e-12))
    throw std::invalid_argument("integrate: x0 outside the state box");

  Trajectory tr;
  VectorXd x = x0;
  double t = 0.0;
  tr.times.push_back(t);
  tr.states.push_back(x);
  tr.inputs.push_back(u(x));

  auto in_bounds = [&](const VectorXd& p) {
    if (!md.state_box.contains(p, 1e-9)) return false;
    return !inside || inside(p);
  };

  const int steps = static_cast<int>(std::ceil(T / dt - 1e-12));
  for (int s = 0; s < steps; ++s) {
    const double h = std::min(dt, T - t);
    const VectorXd uc = tr.inputs.back();
    VectorXd xn = rk4_step(md, x, uc, h);
    if (!xn.allFinite()) {
      tr.exit_time = t;
      break;
    }
    if (!in_bounds(xn)) {
      // bisect the exit time within the step
      double lo = 0.0, hi = h;
      while (hi - lo > 1e-9 * dt) {
        const double mid = 0.5 * (lo + hi);
        if (in_bounds(rk4_step(md, x, uc, mid))) lo = mid;
        else hi = mid;
      }
      x = rk4_step(md, x, uc, lo);
      t += lo;
      tr.times.push_back(t);
      tr.states.push_back(x);
      tr.inputs.push_back(uc);
      tr.exit_time = t;
      break;
    }
    x = xn;
    t += h;
    tr.times.push_back(t);
    tr.states.push_back(x);
    VectorXd un;
    try {
      un = u(x);
    } catch (const std::domain_error&) {
      tr.exit_time = t;
      tr.inputs.push_back(tr.inputs.back());
      break;
    }
    tr.inputs.push_back(un);
  }
  return tr;
}

DecayReport verify_certificate(const model::SystemModel& md, const ctrl::CpaController& ctrl,
                               const VerifyOptions& opts) {
  DecayReport rep;
  const int K = ctrl.stage_count();
  const auto& outer = ctrl.stage(K - 1).polyline;
  if (outer.rows() < 3) {
    rep.detail = "no boundary polyline";
    rep.stayed_inside = false;
    return rep;
  }
  VectorXd lo = outer.colwise().minCoeff().transpose();
  VectorXd hi = outer.colwise().maxCoeff().transpose();

  std::vector<VectorXd> starts;
  for (int i = 0; i < opts.grid_density; ++i)
    for (int j = 0; j < opts.grid_density; ++j) {
      VectorXd p(2);
      p[0] = lo[0] + (hi[0] - lo[0]) * (i + 0.5) / opts.grid_density;
      p[1] = lo[1] + (hi[1] - lo[1]) * (j + 0.5) / opts.grid_density;
      if (ctrl.stage_of(p) >= 0 && md.state_box.contains(p, 0.0)) starts.push_back(p);
    }

  const double b2min = std::max(ctrl.combined_b2(), 1e-3);
  const double T = std::min(opts.horizon_cap, 6.0 / b2min);

  for (const auto& x0 : starts) {
    ++rep.trajectories;
    ControlLaw law = [&](const VectorXd& x) { return ctrl.eval(x); };
    InsideTest inside = [&](const VectorXd& x) { return ctrl.stage_of(x) >= 0; };
    Trajectory tr = integrate(md, law, x0, T, opts.dt, inside);
    if (tr.exit_time) {
      rep.stayed_inside = false;
      if (!rep.witness) {
        rep.witness = x0;
        rep.detail = "trajectory left the certified region at t=" + std::to_string(*tr.exit_time);
      }
      continue;
    }

    int cur_stage = ctrl.stage_of(x0);
    const int start_stage = cur_stage;
    double t_enter = 0.0;
    double v_enter = ctrl.lyapunov(x0, cur_stage);
    int deepest = cur_stage;

    for (size_t s = 0; s < tr.states.size(); ++s) {
      const VectorXd& x = tr.states[s];
      const double t = tr.times[s];

      const VectorXd hu = md.input_H * tr.inputs[s] - md.input_h;
      if (hu.maxCoeff() > opts.input_tol) {
        ++rep.input_violations;
        if (!rep.witness) {
          rep.witness = x0;
          rep.detail = "input polytope violated";
        }
      }

      int st = ctrl.stage_of(x);
      if (st < 0) st = cur_stage;  // transient round-off on a boundary
      if (st != cur_stage) {
        cur_stage = st;
        t_enter = t;
        v_enter = ctrl.lyapunov(x, st);
        deepest = std::min(deepest, st);
        continue;
      }

      const auto& stage = ctrl.stage(st);
      const double v = ctrl.lyapunov(x, st);
      const double v_bound = v_enter * std::exp(-stage.b2 * (t - t_enter)) * (1.0 + opts.tol) + 1e-12;
      const double n_env = std::pow(std::max(v_enter, 0.0) / stage.b1, 1.0 / stage.a) *
                               std::exp(-(stage.b2 / stage.a) * (t - t_enter)) * (1.0 + opts.tol) +
                           1e-12;
      const double ratio = x.norm() / n_env;
      rep.max_ratio = std::max(rep.max_ratio, ratio);
      if (v > v_bound || ratio > 1.0) {
        ++rep.bound_violations;
        if (!rep.witness) {
          rep.witness = x0;
          rep.detail = v > v_bound ? "V decay bound violated" : "state-norm envelope violated";
        }
      }
    }
    if (deepest < start_stage) ++rep.reached_inner;
  }
  return rep;
}

}  // namespace cpalyap::sim
