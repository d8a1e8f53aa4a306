#include "cpalyap/svg.hpp"

#include <cmath>
#include <sstream>

namespace cpalyap::svg {

Canvas::Canvas(const mesh::Box& world, int width_px) : world_(world), w_(width_px) {
  const double margin = 0.05 * std::max(world.span(0), world.span(1));
  world_.lo = world.lo.array() - margin;
  world_.hi = world.hi.array() + margin;
  scale_ = w_ / world_.span(0);
  h_ = static_cast<int>(std::lround(world_.span(1) * scale_));
}

double Canvas::px(double x) const { return (x - world_.lo[0]) * scale_; }
double Canvas::py(double y) const { return h_ - (y - world_.lo[1]) * scale_; }

void Canvas::draw_mesh(const mesh::Triangulation& tri, const std::string& stroke,
                       double stroke_width) {
  std::ostringstream os;
  os.precision(6);
  os << "<path d=\"";
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& s = tri.simplex(i).v;
    const auto& a = tri.vertex(s[0]).coords;
    os << "M" << px(a[0]) << " " << py(a[1]);
    for (size_t j = 1; j < s.size(); ++j) {
      const auto& p = tri.vertex(s[j]).coords;
      os << "L" << px(p[0]) << " " << py(p[1]);
    }
    os << "Z";
  }
  os << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << stroke_width << "\"/>\n";
  body_ += os.str();
}

void Canvas::draw_polyline(const Eigen::MatrixXd& loop, const std::string& stroke,
                           double stroke_width, bool closed) {
  if (loop.rows() < 2) return;
  std::ostringstream os;
  os.precision(6);
  os << "<path d=\"M" << px(loop(0, 0)) << " " << py(loop(0, 1));
  for (int r = 1; r < loop.rows(); ++r) os << "L" << px(loop(r, 0)) << " " << py(loop(r, 1));
  if (closed) os << "Z";
  os << "\" fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << stroke_width << "\"/>\n";
  body_ += os.str();
}

void Canvas::mark_simplexes(const mesh::Triangulation& tri, const std::vector<int>& ids,
                            const std::string& stroke) {
  std::ostringstream os;
  os.precision(6);
  const double r = 3.0;
  for (int i : ids) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2);
    for (int v : tri.simplex(i).v) c += tri.vertex(v).coords;
    c /= static_cast<double>(tri.dim() + 1);
    const double cx = px(c[0]), cy = py(c[1]);
    for (int arm = 0; arm < 3; ++arm) {
      const double ang = arm * M_PI / 3.0;
      os << "<line x1=\"" << cx - r * std::cos(ang) << "\" y1=\"" << cy - r * std::sin(ang)
         << "\" x2=\"" << cx + r * std::cos(ang) << "\" y2=\"" << cy + r * std::sin(ang)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"1\"/>\n";
    }
  }
  body_ += os.str();
}

void Canvas::draw_point(const Eigen::VectorXd& p, double radius_px, const std::string& fill) {
  std::ostringstream os;
  os.precision(6);
  os << "<circle cx=\"" << px(p[0]) << "\" cy=\"" << py(p[1]) << "\" r=\"" << radius_px
     << "\" fill=\"" << fill << "\"/>\n";
  body_ += os.str();
}

std::string Canvas::finish() const {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
     << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << body_ << "</svg>\n";
  return os.str();
}

}  // namespace cpalyap::svg
