#pragma once

#include "cpalyap/mesh.hpp"

#include <string>
#include <vector>

namespace cpalyap::svg {

/// Minimal SVG writer for meshes, level sets and marked simplexes (n = 2).
class Canvas {
 public:
  Canvas(const mesh::Box& world, int width_px = 800);

  void draw_mesh(const mesh::Triangulation& tri, const std::string& stroke = "#bbbbbb",
                 double stroke_width = 0.5);
  void draw_polyline(const Eigen::MatrixXd& loop, const std::string& stroke = "#1f4e9c",
                     double stroke_width = 2.0, bool closed = true);
  /// Asterisk marks at the centroids of the listed simplexes.
  void mark_simplexes(const mesh::Triangulation& tri, const std::vector<int>& ids,
                      const std::string& stroke = "#c03030");
  void draw_point(const Eigen::VectorXd& p, double radius_px = 3.0,
                  const std::string& fill = "#000000");

  std::string finish() const;

 private:
  double px(double x) const;
  double py(double y) const;
  mesh::Box world_;
  int w_, h_;
  double scale_;
  std::string body_;
};

}  // namespace cpalyap::svg
