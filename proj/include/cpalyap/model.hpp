#pragma once

#include "cpalyap/mesh.hpp"

#include <functional>
#include <optional>
#include <string>

namespace cpalyap::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using mesh::Box;

/// Control-affine plant dx/dt = f(x) + G(x) u with polytopic inputs
/// {u : H u <= h} and interval Hessian/Jacobian bound providers used by the
/// synthesis error constants. Bounds are taken over the simplex bounding box,
/// which over-approximates the simplex.
struct SystemModel {
  std::string name;
  int n = 0, m = 0;
  std::function<VectorXd(const VectorXd&)> f;
  std::function<MatrixXd(const VectorXd&)> G;

  /// sup over the box of max_{p,q,r} |d2 f^(p) / dx^(q) dx^(r)|
  std::function<double(const Box&)> hessian_f_bound;
  /// sup over the box of max_{p,q,r} |d2 G^(p,s) / dx^(q) dx^(r)|
  std::function<double(const Box&, int)> hessian_G_bound;
  /// sup over the box of max_{p,q,r} sum_s |dG^(p,s)/dx^(q)| + |dG^(p,s)/dx^(r)|
  std::function<double(const Box&)> jacobian_G_bound;

  MatrixXd input_H;  // p x m
  VectorXd input_h;  // p
  Box state_box;

  bool constant_G = false;
  std::optional<MatrixXd> A_lin, B_lin;  // analytic linearization at 0 when known

  /// Linearization of the closed map at (0, 0); finite differences when no
  /// analytic one is registered.
  std::pair<MatrixXd, MatrixXd> linearize() const;
};

struct HessianConstants {
  VectorXd mu;   // per simplex
  VectorXd eta;  // per simplex, zero for constant G
};

Box simplex_bounding_box(const mesh::Triangulation& tri, int i);

/// mu_i of the decrease-row error term.
double mu(const SystemModel& model, const mesh::Triangulation& tri, int i);
/// eta_i multiplying z_i in the decrease-row error term.
double eta(const SystemModel& model, const mesh::Triangulation& tri, int i);
HessianConstants hessian_constants(const SystemModel& model, const mesh::Triangulation& tri);

/// max over the input polytope of |u^(s)|, by linear programming.
double input_projection_bound(const SystemModel& model, int s);

// bundled benchmark plants
SystemModel make_pendulum();          // n=2, inverted pendulum, |u| <= 5
SystemModel make_double_integrator(double u_max = 1.0);
SystemModel make_linear3();           // n=3 chain with damping
SystemModel make_state_scaled_gain(); // n=2, G(x) = [0; 1 + x1/2], eta > 0

}  // namespace cpalyap::model
