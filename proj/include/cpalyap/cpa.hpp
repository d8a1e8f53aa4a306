#pragma once

#include "cpalyap/mesh.hpp"

#include <optional>

namespace cpalyap::cpa {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using mesh::Triangulation;

/// CPA field from one value per vertex; affine on each simplex.
struct ScalarField {
  const Triangulation* tri = nullptr;
  VectorXd values;

  ScalarField() = default;
  ScalarField(const Triangulation& t, VectorXd v);

  /// In-simplex gradient, constant per simplex: X_i^{-1} (W_j - W_0).
  VectorXd gradient(int i) const;
  double evaluate(const VectorXd& x) const;
  double at_vertex(int id) const { return values[id]; }
};

/// One m-vector per vertex, interpolated componentwise.
struct VectorField {
  const Triangulation* tri = nullptr;
  MatrixXd values;  // num_vertices x m

  VectorField() = default;
  VectorField(const Triangulation& t, MatrixXd v);

  int channels() const { return static_cast<int>(values.cols()); }
  /// Gradient of channel s on simplex i.
  VectorXd gradient(int i, int s) const;
  VectorXd evaluate(const VectorXd& x) const;
};

struct SublevelRegion {
  double r = 0.0;
  std::vector<int> member_simplexes;  // simplexes fully below the level
  std::vector<int> touched_simplexes; // simplexes intersecting the region
  MatrixXd boundary_polyline;         // level crossings, closed loop (n = 2)
  bool connected = true;
  bool contains_origin = false;

  bool is_member(int i) const;
  /// Shoelace area of the boundary polyline (n = 2).
  double area() const;
};

/// Largest origin-containing sublevel set kept inside the triangulation.
/// With exclude_boundary the level is (1 - 1e-6) * min boundary value;
/// otherwise the boundary minimum itself (boundary-tied variants).
SublevelRegion largest_certified_sublevel(const ScalarField& V, bool exclude_boundary = true);

/// Same extraction but grown from the given seed simplexes instead of the
/// origin, with the level derived from the given boundary vertex pool.
SublevelRegion sublevel_from_seeds(const ScalarField& V, double r, const std::vector<int>& seeds);

}  // namespace cpalyap::cpa
