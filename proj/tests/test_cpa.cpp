#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpalyap/cpa.hpp"

#include <cmath>
#include <random>

using namespace cpalyap;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec2(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

mesh::Triangulation unit_mesh(double rho) {
  mesh::Box b{vec2(-1, -1), vec2(1, 1)};
  mesh::SizeField size(rho);
  return mesh::triangulate_box(b, size, {{"v", 0, 0.0}, {"h", 1, 0.0}});
}

VectorXd sample_affine(const mesh::Triangulation& tri, const VectorXd& coef, double offset) {
  VectorXd vals(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = coef.dot(tri.vertex(v).coords) + offset;
  return vals;
}

}  // namespace

TEST_CASE("gradient on the unit simplex") {
  mesh::Triangulation tri({vec2(0, 0), vec2(1, 0), vec2(0, 1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  cpa::ScalarField f(tri, (VectorXd(3) << 0, 1, 2).finished());
  VectorXd g = f.gradient(0);
  CHECK(g[0] == doctest::Approx(1.0));
  CHECK(g[1] == doctest::Approx(2.0));
}

TEST_CASE("constant field has zero gradient everywhere") {
  auto tri = unit_mesh(0.3);
  cpa::ScalarField f(tri, VectorXd::Constant(tri.num_vertices(), 3.5));
  for (int i = 0; i < tri.num_simplexes(); ++i) CHECK(f.gradient(i).norm() < 1e-12);
}

TEST_CASE("affine fields are reproduced exactly") {
  auto tri = unit_mesh(0.37);
  const VectorXd coef = vec2(3.0, -2.0);
  cpa::ScalarField f(tri, sample_affine(tri, coef, 5.0));
  for (int i = 0; i < tri.num_simplexes(); ++i)
    CHECK((f.gradient(i) - coef).cwiseAbs().maxCoeff() < 1e-10);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> dist(-0.999, 0.999);
  for (int t = 0; t < 200; ++t) {
    VectorXd p = vec2(dist(rng), dist(rng));
    CHECK(f.evaluate(p) == doctest::Approx(coef.dot(p) + 5.0).epsilon(1e-10));
  }
}

TEST_CASE("evaluate at vertices and centroids") {
  mesh::Triangulation tri({vec2(0, 0), vec2(1, 0), vec2(0, 1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  cpa::ScalarField f(tri, (VectorXd(3) << 0, 1, 2).finished());
  CHECK(f.evaluate(vec2(0, 0)) == doctest::Approx(0.0));
  CHECK(f.evaluate(vec2(1, 0)) == doctest::Approx(1.0));
  CHECK(f.evaluate(vec2(1.0 / 3, 1.0 / 3)) == doctest::Approx(1.0));
}

TEST_CASE("finite differences agree with the gradient") {
  auto tri = unit_mesh(0.25);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  VectorXd vals(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = dist(rng);
  cpa::ScalarField f(tri, vals);

  int tested = 0;
  while (tested < 100) {
    VectorXd p = vec2(0.98 * dist(rng), 0.98 * dist(rng));
    auto at = tri.locate(p);
    if (at.size() != 1) continue;  // keep off faces
    VectorXd alpha = tri.barycentric(at[0], p);
    if (alpha.minCoeff() < 0.05) continue;
    const double h = 1e-6 * tri.geometry(at[0]).longest_edge;
    VectorXd g = f.gradient(at[0]);
    for (int k = 0; k < 2; ++k) {
      VectorXd e = VectorXd::Zero(2);
      e[k] = h;
      const double fd = (f.evaluate(p + e) - f.evaluate(p - e)) / (2 * h);
      CHECK(fd == doctest::Approx(g[k]).epsilon(1e-4));
    }
    ++tested;
  }
}

TEST_CASE("continuity across shared faces") {
  auto tri = unit_mesh(0.31);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  VectorXd vals(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = dist(rng);
  cpa::ScalarField f(tri, vals);

  int tested = 0;
  for (int i = 0; i < tri.num_simplexes() && tested < 100; ++i) {
    const auto& nb = tri.neighbors(i);
    const auto& sv = tri.simplex(i).v;
    for (size_t drop = 0; drop < sv.size(); ++drop) {
      if (nb[drop] < 0) continue;
      // midpoint of the shared face
      VectorXd p = VectorXd::Zero(2);
      int cnt = 0;
      for (size_t j = 0; j < sv.size(); ++j)
        if (j != drop) {
          p += tri.vertex(sv[j]).coords;
          ++cnt;
        }
      p /= cnt;
      const int other = nb[drop];
      VectorXd ai = tri.barycentric(i, p), ao = tri.barycentric(other, p);
      double vi = 0, vo = 0;
      for (int j = 0; j <= 2; ++j) {
        vi += ai[j] * vals[tri.simplex(i).v[j]];
        vo += ao[j] * vals[tri.simplex(other).v[j]];
      }
      CHECK(std::abs(vi - vo) < 1e-12);
      ++tested;
    }
  }
  CHECK(tested > 10);
}

TEST_CASE("locate counts: interior 1, edge 2, vertex = incident count") {
  auto tri = unit_mesh(0.5);
  // strict interior point of some simplex
  VectorXd centroid = VectorXd::Zero(2);
  for (int v : tri.simplex(0).v) centroid += tri.vertex(v).coords;
  centroid /= 3.0;
  CHECK(tri.locate(centroid).size() == 1);

  // midpoint of an interior edge
  bool edge_checked = false;
  for (int i = 0; i < tri.num_simplexes() && !edge_checked; ++i) {
    const auto& nb = tri.neighbors(i);
    const auto& sv = tri.simplex(i).v;
    for (size_t drop = 0; drop < sv.size() && !edge_checked; ++drop)
      if (nb[drop] >= 0) {
        VectorXd p = VectorXd::Zero(2);
        for (size_t j = 0; j < sv.size(); ++j)
          if (j != drop) p += tri.vertex(sv[j]).coords;
        p /= 2.0;
        CHECK(tri.locate(p).size() == 2);
        edge_checked = true;
      }
  }
  CHECK(edge_checked);

  // a mesh vertex belongs to exactly its incident simplexes
  for (int vid : {0, tri.num_vertices() / 2}) {
    auto at = tri.locate(tri.vertex(vid).coords);
    CHECK(at.size() == tri.incident(vid).size());
  }

  VectorXd outside = vec2(3.0, 0.0);
  CHECK_THROWS_AS(tri.locate(outside), std::domain_error);
}

TEST_CASE("largest certified sublevel of the 1-norm") {
  auto tri = unit_mesh(0.21);
  VectorXd vals(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = tri.vertex(v).coords.lpNorm<1>();
  cpa::ScalarField f(tri, vals);
  auto region = cpa::largest_certified_sublevel(f, true);
  CHECK(region.r == doctest::Approx((1 - 1e-6) * 1.0));
  CHECK(region.contains_origin);
  CHECK(region.boundary_polyline.rows() >= 4);
  // the diamond |x|_1 <= 1 has area 2
  CHECK(region.area() == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("zero boundary value yields an empty-region error") {
  auto tri = unit_mesh(0.6);
  VectorXd vals = VectorXd::Zero(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = tri.vertex(v).coords.squaredNorm();
  vals[*tri.boundary_vertices().begin()] = 0.0;
  cpa::ScalarField f(tri, vals);
  CHECK_THROWS_AS(cpa::largest_certified_sublevel(f, true), std::domain_error);
}

TEST_CASE("sublevel restricted to a submesh stays inside it") {
  auto tri = unit_mesh(0.26);
  // keep simplexes within the half-plane x1 <= 0.4
  std::vector<int> keep;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    double mx = -1e9;
    for (int v : tri.simplex(i).v) mx = std::max(mx, tri.vertex(v).coords[0]);
    if (mx <= 0.4 + 1e-12) keep.push_back(i);
  }
  auto sub = mesh::submesh(tri, keep);
  VectorXd vals(sub.num_vertices());
  for (int v = 0; v < sub.num_vertices(); ++v) vals[v] = sub.vertex(v).coords.squaredNorm();
  cpa::ScalarField f(sub, vals);
  auto region = cpa::largest_certified_sublevel(f, true);
  // brute-force membership: every member simplex is one of the kept ones
  for (int i : region.member_simplexes) {
    double mx = -1e9;
    for (int v : sub.simplex(i).v) mx = std::max(mx, sub.vertex(v).coords[0]);
    CHECK(mx <= 0.4 + 1e-12);
  }
  CHECK(region.r > 0.0);
}

TEST_CASE("raising an interior vertex value cannot increase the level") {
  auto tri = unit_mesh(0.4);
  VectorXd vals(tri.num_vertices());
  for (int v = 0; v < tri.num_vertices(); ++v) vals[v] = tri.vertex(v).coords.squaredNorm();
  cpa::ScalarField f(tri, vals);
  const double r0 = cpa::largest_certified_sublevel(f, true).r;
  for (int v = 0; v < tri.num_vertices(); ++v) {
    if (tri.is_boundary_vertex(v) || v == tri.origin_vertex()) continue;
    VectorXd bumped = vals;
    bumped[v] += 0.5;
    cpa::ScalarField g(tri, bumped);
    CHECK(cpa::largest_certified_sublevel(g, true).r <= r0 + 1e-12);
  }
}

TEST_CASE("vector field interpolation") {
  mesh::Triangulation tri({vec2(0, 0), vec2(1, 0), vec2(0, 1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  MatrixXd u(3, 1);
  u << 0, 1, 2;
  cpa::VectorField f(tri, u);
  CHECK(f.evaluate(vec2(1.0 / 3, 1.0 / 3))[0] == doctest::Approx(1.0));
  CHECK(f.gradient(0, 0)[0] == doctest::Approx(1.0));
  CHECK(f.gradient(0, 0)[1] == doctest::Approx(2.0));
}
