#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace cpalyap::mesh {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Box {
  VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double span(int k) const { return hi[k] - lo[k]; }
  double volume() const { return (hi - lo).prod(); }
  bool contains(const VectorXd& x, double tol = 0.0) const;
  /// Smallest box containing both.
  static Box hull(const Box& a, const Box& b);
};

struct Vertex {
  VectorXd coords;
  int id = -1;
};

/// v[0] is the anchor x_{i,0}: the origin when the simplex owns it,
/// the lexicographically smallest vertex otherwise.
struct Simplex {
  std::vector<int> v;
};

struct SimplexGeometry {
  MatrixXd X;      // row j-1 holds x_{i,j} - x_{i,0}
  MatrixXd X_inv;
  VectorXd c;      // interpolation-error weights, c[0] = 0
  double volume = 0.0;
  double longest_edge = 0.0;
};

/// Piecewise max-edge-length bound. Regions shrink the base value; the
/// local bound is the min over the base and every matching region.
class SizeField {
 public:
  explicit SizeField(double base_rho);
  SizeField& add_region(std::function<bool(const VectorXd&)> contains, double rho);
  double at(const VectorXd& x) const;
  double base() const { return base_rho_; }
  double min_rho() const;

 private:
  double base_rho_;
  struct Region {
    std::function<bool(const VectorXd&)> contains;
    double rho;
  };
  std::vector<Region> regions_;
};

/// Axis-aligned hyperplane {x : x[axis] = value}, tagged by name.
struct AxisSurface {
  std::string name;
  int axis = 0;
  double value = 0.0;
};

/// Generator inputs retained so refine() can rebuild against a new size field.
struct Provenance {
  enum class Kind { box, annulus, polygon, derived };
  Kind kind = Kind::derived;
  Box box;
  std::vector<AxisSurface> surfaces;
  MatrixXd outer;  // closed polyline, one point per row (n = 2 paths)
  MatrixXd inner;
};

class Triangulation {
 public:
  Triangulation(std::vector<VectorXd> coords, std::vector<std::vector<int>> simplexes,
                std::set<int> boundary, std::map<std::string, std::set<int>> surfaces,
                Provenance prov = {});

  int dim() const { return dim_; }
  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_simplexes() const { return static_cast<int>(simplexes_.size()); }
  const Vertex& vertex(int id) const { return vertices_[id]; }
  const Simplex& simplex(int i) const { return simplexes_[i]; }
  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Simplex>& simplexes() const { return simplexes_; }

  const SimplexGeometry& geometry(int i) const { return geometry_[i]; }

  bool is_boundary_vertex(int id) const { return boundary_.count(id) > 0; }
  const std::set<int>& boundary_vertices() const { return boundary_; }
  const std::map<std::string, std::set<int>>& surfaces() const { return surfaces_; }
  bool on_surface(const std::string& name, int id) const;

  /// Index of the vertex at the origin, or -1.
  int origin_vertex() const { return origin_vertex_; }

  /// Simplexes incident to a vertex.
  const std::vector<int>& incident(int vertex_id) const { return incident_[vertex_id]; }
  /// Simplexes sharing a facet with simplex i (order matches facets, -1 where none).
  const std::vector<int>& neighbors(int i) const { return neighbors_[i]; }

  /// Barycentric coordinates of x in simplex i (size n+1, sums to 1).
  VectorXd barycentric(int i, const VectorXd& x) const;
  /// All simplexes containing x (coords >= -tol). Throws if none.
  std::vector<int> locate(const VectorXd& x, double tol = 1e-10) const;
  bool try_locate(const VectorXd& x, std::vector<int>& out, double tol = 1e-10) const;

  double total_volume() const;
  Box bounding_box() const;
  const Provenance& provenance() const { return prov_; }

 private:
  void build_geometry();
  void build_adjacency();
  void build_buckets();

  int dim_;
  std::vector<Vertex> vertices_;
  std::vector<Simplex> simplexes_;
  std::set<int> boundary_;
  std::map<std::string, std::set<int>> surfaces_;
  Provenance prov_;
  int origin_vertex_ = -1;

  std::vector<SimplexGeometry> geometry_;
  std::vector<std::vector<int>> incident_;
  std::vector<std::vector<int>> neighbors_;

  // uniform background grid for point location
  Box bbox_;
  double bucket_h_ = 0.0;
  Eigen::VectorXi bucket_dims_;
  std::vector<std::vector<int>> buckets_;
};

/// Kuhn-simplexified tensor grid over the box, locally bisected (n = 2) until
/// every simplex's longest edge is below the local size bound. Requested
/// axis-aligned surfaces become grid planes and are tagged.
Triangulation triangulate_box(const Box& box, const SizeField& size,
                              const std::vector<AxisSurface>& surfaces = {});

/// Triangulates the region between two closed polylines (n = 2). Every input
/// polyline vertex survives as a mesh vertex; vertices on the rings are tagged
/// "outer" and "inner".
Triangulation triangulate_annulus(const MatrixXd& outer, const MatrixXd& inner,
                                  const SizeField& size);

/// Simple closed polyline interior (n = 2), boundary tagged "outer".
Triangulation triangulate_polygon(const MatrixXd& outer, const SizeField& size);

/// Regenerates the provenance mesh against a new size field.
Triangulation refine(const Triangulation& tri, const SizeField& size);

/// Sub-triangulation of the chosen simplexes with re-derived boundary.
Triangulation submesh(const Triangulation& tri, const std::vector<int>& keep);

/// Signed shoelace area of a closed polyline (one point per row).
double polygon_area(const MatrixXd& ring);

}  // namespace cpalyap::mesh
