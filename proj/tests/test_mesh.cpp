#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpalyap/mesh.hpp"

#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace cpalyap;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec2(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

mesh::Box box2(double lo, double hi) {
  return {vec2(lo, lo), vec2(hi, hi)};
}

MatrixXd square_ring(double half) {
  MatrixXd m(4, 2);
  m << -half, -half, half, -half, half, half, -half, half;
  return m;
}

// conformity oracle: every facet owned by <= 2 simplexes, no vertex inside
// the open interior of another simplex's edge, volumes add up
void check_conformity(const mesh::Triangulation& tri, double expected_volume) {
  std::map<std::vector<int>, int> facets;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& s = tri.simplex(i).v;
    for (size_t drop = 0; drop < s.size(); ++drop) {
      std::vector<int> f;
      for (size_t j = 0; j < s.size(); ++j)
        if (j != drop) f.push_back(s[j]);
      std::sort(f.begin(), f.end());
      facets[f] += 1;
    }
  }
  for (const auto& [f, cnt] : facets) CHECK(cnt <= 2);
  CHECK(tri.total_volume() == doctest::Approx(expected_volume).epsilon(1e-8));

  if (tri.dim() == 2) {
    // no hanging vertices on edges
    for (const auto& [f, cnt] : facets) {
      (void)cnt;
      const VectorXd a = tri.vertex(f[0]).coords, b = tri.vertex(f[1]).coords;
      for (const auto& v : tri.vertices()) {
        if (v.id == f[0] || v.id == f[1]) continue;
        const VectorXd ab = b - a;
        const double t = (v.coords - a).dot(ab) / ab.squaredNorm();
        if (t <= 1e-9 || t >= 1 - 1e-9) continue;
        const double dist = (v.coords - (a + t * ab)).norm();
        CHECK(dist > 1e-9 * ab.norm());
      }
    }
  }
}

}  // namespace

TEST_CASE("unit square with coarse size splits into two triangles") {
  mesh::SizeField size(4.0);  // diagonal of [-1,1]^2 is 2*sqrt(2) < 4
  auto tri = mesh::triangulate_box(box2(-1, 1), size);
  CHECK(tri.num_simplexes() == 2);
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    CHECK(std::abs(tri.geometry(i).X.determinant()) == doctest::Approx(4.0));
  }
  CHECK(tri.total_volume() == doctest::Approx(4.0));
}

TEST_CASE("surface x1=0 splits every triangle to one side") {
  mesh::SizeField size(1.0);
  auto tri = mesh::triangulate_box(box2(-1, 1), size, {{"mid", 0, 0.0}});
  REQUIRE(tri.surfaces().count("mid") == 1);
  CHECK(!tri.surfaces().at("mid").empty());
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    double mn = 1e9, mx = -1e9;
    for (int v : tri.simplex(i).v) {
      mn = std::min(mn, tri.vertex(v).coords[0]);
      mx = std::max(mx, tri.vertex(v).coords[0]);
    }
    CHECK((mn >= -1e-12 || mx <= 1e-12));
  }
  check_conformity(tri, 4.0);
}

TEST_CASE("graded box vertex count tracks the Kuhn-pattern estimate") {
  // rho 0.04 everywhere, 0.02 near the origin and in the outer ring
  mesh::SizeField size(0.04);
  size.add_region([](const VectorXd& x) { return x.norm() <= 0.1; }, 0.02);
  size.add_region([](const VectorXd& x) { return x.cwiseAbs().maxCoeff() >= 0.9; }, 0.02);
  auto tri = mesh::triangulate_box(box2(-1, 1), size,
                                   {{"v", 0, 0.0}, {"h", 1, 0.0}});

  // oracle: a Kuhn cell of diagonal rho covers rho^2/2, so approximately
  // 2*area/rho^2 vertices per region
  const double a_ball = M_PI * 0.1 * 0.1;
  const double a_ring = 4.0 - 3.24;
  const double a_rest = 4.0 - a_ball - a_ring;
  const double est = 2.0 * (a_ball / (0.02 * 0.02) + a_ring / (0.02 * 0.02) + a_rest / (0.04 * 0.04));
  CHECK(tri.num_vertices() > 0.75 * est);
  CHECK(tri.num_vertices() < 1.25 * est);

  // size bound satisfied everywhere (local rho at the centroid)
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    VectorXd c = VectorXd::Zero(2);
    for (int v : tri.simplex(i).v) c += tri.vertex(v).coords;
    c /= 3.0;
    CHECK(tri.geometry(i).longest_edge <= size.at(c) * (1 + 1e-9));
  }
  CHECK(tri.total_volume() == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("degenerate box rejected") {
  mesh::Box b{vec2(0, 0), vec2(1, 0)};
  mesh::SizeField size(1.0);
  CHECK_THROWS_AS(mesh::triangulate_box(b, size), std::invalid_argument);
}

TEST_CASE("surface outside the box rejected") {
  mesh::SizeField size(1.0);
  CHECK_THROWS_AS(mesh::triangulate_box(box2(-1, 1), size, {{"s", 0, 2.0}}), std::invalid_argument);
}

TEST_CASE("annulus square frame: area, tags, vertex preservation") {
  mesh::SizeField size(2.0);
  auto tri = mesh::triangulate_annulus(square_ring(1.0), square_ring(0.5), size);
  CHECK(tri.total_volume() == doctest::Approx(4.0 - 1.0).epsilon(1e-8));
  REQUIRE(tri.surfaces().count("inner") == 1);
  REQUIRE(tri.surfaces().count("outer") == 1);
  // all four inner corners survive as tagged vertices
  int found = 0;
  for (const auto& v : tri.vertices()) {
    for (int c = 0; c < 4; ++c)
      if ((v.coords - square_ring(0.5).row(c).transpose()).norm() < 1e-12) {
        CHECK(tri.on_surface("inner", v.id));
        ++found;
      }
  }
  CHECK(found == 4);
  check_conformity(tri, 3.0);
}

TEST_CASE("annulus with a dense inner polyline keeps every inner vertex") {
  const int k = 100;
  MatrixXd inner(k, 2);
  for (int i = 0; i < k; ++i) {
    const double a = 2.0 * M_PI * i / k;
    inner.row(i) << 0.4 * std::cos(a), 0.4 * std::sin(a);
  }
  mesh::SizeField size(0.35);
  auto tri = mesh::triangulate_annulus(square_ring(1.0), inner, size);
  CHECK(static_cast<int>(tri.surfaces().at("inner").size()) >= k);
  // every inner polyline vertex is present
  for (int i = 0; i < k; ++i) {
    bool present = false;
    for (const auto& v : tri.vertices())
      if ((v.coords - inner.row(i).transpose()).norm() < 1e-10) present = true;
    CHECK(present);
  }
  const double inner_area = std::abs(mesh::polygon_area(inner));
  check_conformity(tri, 4.0 - inner_area);
}

TEST_CASE("halving rho multiplies the annulus triangle count by 2..8") {
  mesh::SizeField coarse(0.4), fine(0.2);
  auto t1 = mesh::triangulate_annulus(square_ring(1.0), square_ring(0.4), coarse);
  auto t2 = mesh::triangulate_annulus(square_ring(1.0), square_ring(0.4), fine);
  const double ratio = static_cast<double>(t2.num_simplexes()) / t1.num_simplexes();
  CHECK(ratio >= 2.0);
  CHECK(ratio <= 8.0);
}

TEST_CASE("crossing polylines rejected") {
  mesh::SizeField size(1.0);
  MatrixXd inner = square_ring(1.5);  // pokes outside
  CHECK_THROWS_AS(mesh::triangulate_annulus(square_ring(1.0), inner, size), std::invalid_argument);
}

TEST_CASE("simplex geometry: unit triangle") {
  mesh::Triangulation tri({vec2(0, 0), vec2(1, 0), vec2(0, 1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  const auto& g = tri.geometry(0);
  // anchor is the origin, so X stacks the other two vertices
  CHECK((g.X - MatrixXd::Identity(2, 2)).norm() < 1e-14);
  CHECK(g.c[0] == 0.0);
  CHECK(g.c[1] == doctest::Approx(2.0));
  CHECK(g.c[2] == doctest::Approx(2.0));
  CHECK(g.volume == doctest::Approx(0.5));
}

TEST_CASE("c weights scale quadratically with the simplex") {
  for (double h : {0.5, 0.25, 2.0}) {
    mesh::Triangulation base({vec2(0.2, 0.1), vec2(1.2, 0.4), vec2(0.3, 1.1)}, {{0, 1, 2}},
                             {0, 1, 2}, {});
    mesh::Triangulation scaled({h * vec2(0.2, 0.1), h * vec2(1.2, 0.4), h * vec2(0.3, 1.1)},
                               {{0, 1, 2}}, {0, 1, 2}, {});
    for (int j = 0; j <= 2; ++j)
      CHECK(scaled.geometry(0).c[j] == doctest::Approx(h * h * base.geometry(0).c[j]));
  }
}

TEST_CASE("X X_inv is the identity") {
  mesh::SizeField size(0.3);
  auto tri = mesh::triangulate_box(box2(-1, 1), size);
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& g = tri.geometry(i);
    CHECK((g.X * g.X_inv - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("near-degenerate simplex rejected at build") {
  CHECK_THROWS_AS(
      mesh::Triangulation({vec2(0, 0), vec2(1, 0), vec2(2, 1e-15)}, {{0, 1, 2}}, {0, 1, 2}, {}),
      std::invalid_argument);
}

TEST_CASE("origin anchor convention") {
  mesh::Triangulation tri({vec2(1, 0), vec2(0, 0), vec2(0, 1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  CHECK(tri.simplex(0).v[0] == 1);  // the origin ended up first
  // without the origin, the lexicographically smallest vertex anchors
  mesh::Triangulation tri2({vec2(1, 0), vec2(0.5, 0.2), vec2(0.5, 0.1)}, {{0, 1, 2}}, {0, 1, 2}, {});
  CHECK(tri2.simplex(0).v[0] == 2);
}

TEST_CASE("random points are located with consistent barycentric coords") {
  mesh::SizeField size(0.33);
  auto tri = mesh::triangulate_box(box2(-1, 1), size);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    VectorXd p = vec2(dist(rng), dist(rng));
    auto at = tri.locate(p);
    REQUIRE(!at.empty());
    for (int i : at) {
      VectorXd alpha = tri.barycentric(i, p);
      CHECK(alpha.sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(alpha.minCoeff() >= -1e-10);
    }
    // brute-force count agrees with the bucketed query
    int brute = 0;
    for (int i = 0; i < tri.num_simplexes(); ++i)
      if ((tri.barycentric(i, p).array() >= -1e-10).all()) ++brute;
    CHECK(static_cast<int>(at.size()) == brute);
  }
}

TEST_CASE("refine regenerates against the schedule rho and gamma") {
  mesh::SizeField size0(0.1);
  auto tri = mesh::triangulate_box(box2(-1, 1), size0);
  // boundary shrinks by 0.5, interior by 0.8
  mesh::SizeField size1(0.1 * 0.8);
  size1.add_region([](const VectorXd& x) { return x.cwiseAbs().maxCoeff() >= 0.9; }, 0.1 * 0.5);
  auto fine = mesh::refine(tri, size1);
  for (int i = 0; i < fine.num_simplexes(); ++i) {
    VectorXd c = VectorXd::Zero(2);
    for (int v : fine.simplex(i).v) c += fine.vertex(v).coords;
    c /= 3.0;
    CHECK(fine.geometry(i).longest_edge <= size1.at(c) * (1 + 1e-9));
  }
  CHECK(fine.total_volume() == doctest::Approx(4.0).epsilon(1e-8));
  CHECK(fine.num_simplexes() > tri.num_simplexes());

  // unchanged rho still yields a valid mesh of the same set
  auto same = mesh::refine(tri, size0);
  CHECK(same.total_volume() == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("nonpositive size rejected") {
  CHECK_THROWS_AS(mesh::SizeField(0.0), std::invalid_argument);
  mesh::SizeField ok(1.0);
  CHECK_THROWS_AS(ok.add_region([](const VectorXd&) { return true; }, -0.1), std::invalid_argument);
}

TEST_CASE("submesh re-derives the boundary") {
  mesh::SizeField size(0.5);
  auto tri = mesh::triangulate_box(box2(-1, 1), size);
  // keep the half x1 <= 0
  std::vector<int> keep;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    double mx = -1e9;
    for (int v : tri.simplex(i).v) mx = std::max(mx, tri.vertex(v).coords[0]);
    if (mx <= 1e-12) keep.push_back(i);
  }
  REQUIRE(!keep.empty());
  auto sub = mesh::submesh(tri, keep);
  CHECK(sub.total_volume() == doctest::Approx(2.0).epsilon(1e-8));
  // the cut line x1 = 0 is boundary now
  int on_cut = 0;
  for (int v : sub.boundary_vertices())
    if (std::abs(sub.vertex(v).coords[0]) < 1e-12) ++on_cut;
  CHECK(on_cut >= 2);

  // single simplex: everything is boundary
  auto one = mesh::submesh(tri, {0});
  CHECK(static_cast<int>(one.boundary_vertices().size()) == 3);

  CHECK_THROWS_AS(mesh::submesh(tri, {}), std::invalid_argument);
}

TEST_CASE("3-D Kuhn box meshing") {
  mesh::Box b{VectorXd::Constant(3, -1.0), VectorXd::Constant(3, 1.0)};
  mesh::SizeField size(1.0);
  auto tri = mesh::triangulate_box(b, size);
  CHECK(tri.dim() == 3);
  CHECK(tri.total_volume() == doctest::Approx(8.0).epsilon(1e-8));
  for (int i = 0; i < tri.num_simplexes(); ++i)
    CHECK(tri.geometry(i).longest_edge <= 1.0 + 1e-9);
  // face property on the 3-D mesh as well
  std::map<std::vector<int>, int> facets;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& s = tri.simplex(i).v;
    for (size_t drop = 0; drop < s.size(); ++drop) {
      std::vector<int> f;
      for (size_t j = 0; j < s.size(); ++j)
        if (j != drop) f.push_back(s[j]);
      std::sort(f.begin(), f.end());
      facets[f] += 1;
    }
  }
  for (const auto& [f, cnt] : facets) CHECK(cnt <= 2);
}
