#include "cpalyap/model.hpp"

#include "cpalyap/conic.hpp"

#include <cmath>
#include <stdexcept>

namespace cpalyap::model {

namespace {

// max of |sin| over [lo, hi]
double interval_max_abs_sin(double lo, double hi) {
  const double pi = M_PI;
  // contains a peak of |sin| iff some pi/2 + k*pi lies inside
  const double k0 = std::ceil((lo - pi / 2) / pi);
  if (pi / 2 + k0 * pi <= hi) return 1.0;
  return std::max(std::abs(std::sin(lo)), std::abs(std::sin(hi)));
}

}  // namespace

std::pair<MatrixXd, MatrixXd> SystemModel::linearize() const {
  if (A_lin && B_lin) return {*A_lin, *B_lin};
  MatrixXd A(n, n);
  const double h = 1e-5;
  for (int q = 0; q < n; ++q) {
    VectorXd e = VectorXd::Zero(n);
    e[q] = h;
    A.col(q) = (f(e) - f(-e)) / (2.0 * h);
  }
  return {A, G(VectorXd::Zero(n))};
}

Box simplex_bounding_box(const mesh::Triangulation& tri, int i) {
  const auto& sv = tri.simplex(i).v;
  VectorXd lo = tri.vertex(sv[0]).coords, hi = lo;
  for (int v : sv) {
    lo = lo.cwiseMin(tri.vertex(v).coords);
    hi = hi.cwiseMax(tri.vertex(v).coords);
  }
  return {lo, hi};
}

double input_projection_bound(const SystemModel& model, int s) {
  const double big = 1e9;
  double best = 0.0;
  for (double sign : {1.0, -1.0}) {
    conic::ConicProgram prog;
    std::vector<int> u(model.m);
    for (int k = 0; k < model.m; ++k) u[k] = prog.new_variable();
    conic::AffineExpr obj;
    obj.add(u[s], -sign);  // maximize sign * u_s
    prog.minimize(obj);
    for (int r = 0; r < model.input_H.rows(); ++r) {
      conic::AffineExpr row;
      for (int k = 0; k < model.m; ++k) row.add(u[k], model.input_H(r, k));
      prog.add_le(row, model.input_h[r]);
    }
    for (int k = 0; k < model.m; ++k) {
      conic::AffineExpr lo, hi;
      lo.add(u[k], -1.0);
      hi.add(u[k], 1.0);
      prog.add_le(lo, big);
      prog.add_le(hi, big);
    }
    auto rep = prog.solve();
    if (rep.status == conic::SolveStatus::infeasible)
      throw std::domain_error("input_projection_bound: infeasible input polytope");
    if (rep.status != conic::SolveStatus::optimal)
      throw std::runtime_error("input_projection_bound: LP solve failed");
    const double val = sign * rep.values[u[s]];
    if (val > 0.9 * big)
      throw std::domain_error("input_projection_bound: unbounded input polytope");
    best = std::max(best, std::abs(val));
  }
  return best;
}

double mu(const SystemModel& model, const mesh::Triangulation& tri, int i) {
  const Box bb = simplex_bounding_box(tri, i);
  double v = model.hessian_f_bound ? model.hessian_f_bound(bb) : 0.0;
  if (!model.constant_G && model.hessian_G_bound) {
    for (int s = 0; s < model.m; ++s) {
      const double hg = model.hessian_G_bound(bb, s);
      if (hg > 0.0) v += hg * input_projection_bound(model, s);
    }
  }
  if (!(v >= 0.0) || !std::isfinite(v)) throw std::domain_error("mu: bound provider returned invalid value");
  return v;
}

double eta(const SystemModel& model, const mesh::Triangulation& tri, int i) {
  if (model.constant_G) return 0.0;
  const Box bb = simplex_bounding_box(tri, i);
  const double v = model.jacobian_G_bound ? model.jacobian_G_bound(bb) : 0.0;
  if (!(v >= 0.0) || !std::isfinite(v)) throw std::domain_error("eta: bound provider returned invalid value");
  return v;
}

HessianConstants hessian_constants(const SystemModel& model, const mesh::Triangulation& tri) {
  HessianConstants out;
  out.mu.resize(tri.num_simplexes());
  out.eta.resize(tri.num_simplexes());
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    out.mu[i] = mu(model, tri, i);
    out.eta[i] = eta(model, tri, i);
  }
  return out;
}

SystemModel make_pendulum() {
  SystemModel md;
  md.name = "pendulum";
  md.n = 2;
  md.m = 1;
  md.f = [](const VectorXd& x) {
    VectorXd out(2);
    out[0] = x[1];
    out[1] = 4.9 * std::sin(x[0]) - 0.3 * x[1];
    return out;
  };
  md.G = [](const VectorXd&) { return (MatrixXd(2, 1) << 0.0, 1.0).finished(); };
  md.constant_G = true;
  // only nonzero second partial: d2 f2 / dx1^2 = -4.9 sin(x1)
  md.hessian_f_bound = [](const Box& b) { return 4.9 * interval_max_abs_sin(b.lo[0], b.hi[0]); };
  md.input_H = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  md.input_h = (VectorXd(2) << 5.0, 5.0).finished();
  md.state_box = {(VectorXd(2) << -1.0, -1.0).finished(), (VectorXd(2) << 1.0, 1.0).finished()};
  md.A_lin = (MatrixXd(2, 2) << 0.0, 1.0, 4.9, -0.3).finished();
  md.B_lin = (MatrixXd(2, 1) << 0.0, 1.0).finished();
  return md;
}

SystemModel make_double_integrator(double u_max) {
  SystemModel md;
  md.name = "double_integrator";
  md.n = 2;
  md.m = 1;
  md.f = [](const VectorXd& x) {
    VectorXd out(2);
    out[0] = x[1];
    out[1] = 0.0;
    return out;
  };
  md.G = [](const VectorXd&) { return (MatrixXd(2, 1) << 0.0, 1.0).finished(); };
  md.constant_G = true;
  md.hessian_f_bound = [](const Box&) { return 0.0; };
  md.input_H = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  md.input_h = (VectorXd(2) << u_max, u_max).finished();
  md.state_box = {(VectorXd(2) << -1.0, -1.0).finished(), (VectorXd(2) << 1.0, 1.0).finished()};
  md.A_lin = (MatrixXd(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
  md.B_lin = (MatrixXd(2, 1) << 0.0, 1.0).finished();
  return md;
}

SystemModel make_linear3() {
  SystemModel md;
  md.name = "linear3";
  md.n = 3;
  md.m = 1;
  MatrixXd A(3, 3);
  A << 0.0, 1.0, 0.0,
       0.0, 0.0, 1.0,
      -0.5, -1.0, -0.8;
  md.f = [A](const VectorXd& x) { return VectorXd(A * x); };
  md.G = [](const VectorXd&) { return (MatrixXd(3, 1) << 0.0, 0.0, 1.0).finished(); };
  md.constant_G = true;
  md.hessian_f_bound = [](const Box&) { return 0.0; };
  md.input_H = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  md.input_h = (VectorXd(2) << 2.0, 2.0).finished();
  md.state_box = {VectorXd::Constant(3, -1.0), VectorXd::Constant(3, 1.0)};
  md.A_lin = A;
  md.B_lin = (MatrixXd(3, 1) << 0.0, 0.0, 1.0).finished();
  return md;
}

SystemModel make_state_scaled_gain() {
  SystemModel md;
  md.name = "state_scaled_gain";
  md.n = 2;
  md.m = 1;
  md.f = [](const VectorXd& x) { return VectorXd(-x); };
  md.G = [](const VectorXd& x) { return (MatrixXd(2, 1) << 0.0, x[0]).finished(); };
  md.constant_G = false;
  md.hessian_f_bound = [](const Box&) { return 0.0; };
  md.hessian_G_bound = [](const Box&, int) { return 0.0; };
  // dG^(2,1)/dx^(1) = 1, so the q- and r-terms each contribute 1
  md.jacobian_G_bound = [](const Box&) { return 2.0; };
  md.input_H = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  md.input_h = (VectorXd(2) << 1.0, 1.0).finished();
  md.state_box = {(VectorXd(2) << 0.25, -1.0).finished(), (VectorXd(2) << 1.75, 1.0).finished()};
  return md;
}

}  // namespace cpalyap::model
