#include "cpalyap/cpa.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>

namespace cpalyap::cpa {

ScalarField::ScalarField(const Triangulation& t, VectorXd v) : tri(&t), values(std::move(v)) {
  if (values.size() != t.num_vertices())
    throw std::invalid_argument("ScalarField: one value per vertex required");
  if (!values.allFinite()) throw std::invalid_argument("ScalarField: nonfinite values");
}

VectorXd ScalarField::gradient(int i) const {
  const auto& g = tri->geometry(i);
  const auto& s = tri->simplex(i).v;
  VectorXd wbar(tri->dim());
  for (int j = 1; j <= tri->dim(); ++j) wbar[j - 1] = values[s[j]] - values[s[0]];
  return g.X_inv * wbar;
}

double ScalarField::evaluate(const VectorXd& x) const {
  const int i = tri->locate(x).front();
  VectorXd alpha = tri->barycentric(i, x);
  double v = 0.0;
  for (int j = 0; j <= tri->dim(); ++j) v += alpha[j] * values[tri->simplex(i).v[j]];
  return v;
}

VectorField::VectorField(const Triangulation& t, MatrixXd v) : tri(&t), values(std::move(v)) {
  if (values.rows() != t.num_vertices())
    throw std::invalid_argument("VectorField: one row per vertex required");
  if (!values.allFinite()) throw std::invalid_argument("VectorField: nonfinite values");
}

VectorXd VectorField::gradient(int i, int s) const {
  const auto& g = tri->geometry(i);
  const auto& sv = tri->simplex(i).v;
  VectorXd wbar(tri->dim());
  for (int j = 1; j <= tri->dim(); ++j) wbar[j - 1] = values(sv[j], s) - values(sv[0], s);
  return g.X_inv * wbar;
}

VectorXd VectorField::evaluate(const VectorXd& x) const {
  const int i = tri->locate(x).front();
  VectorXd alpha = tri->barycentric(i, x);
  VectorXd v = VectorXd::Zero(channels());
  for (int j = 0; j <= tri->dim(); ++j) v += alpha[j] * values.row(tri->simplex(i).v[j]).transpose();
  return v;
}

bool SublevelRegion::is_member(int i) const {
  return std::binary_search(member_simplexes.begin(), member_simplexes.end(), i);
}

double SublevelRegion::area() const {
  if (boundary_polyline.rows() < 3) return 0.0;
  return std::abs(mesh::polygon_area(boundary_polyline));
}

namespace {

// flood over facets that intersect {V <= r}; a facet does iff its minimum
// vertex value does
std::vector<int> flood_component(const ScalarField& V, double r, const std::vector<int>& seeds) {
  const Triangulation& tri = *V.tri;
  std::vector<char> in_component(tri.num_simplexes(), 0);
  auto simplex_touched = [&](int i) {
    double mn = std::numeric_limits<double>::infinity();
    for (int v : tri.simplex(i).v) mn = std::min(mn, V.values[v]);
    return mn <= r;
  };
  std::queue<int> q;
  for (int s : seeds)
    if (simplex_touched(s) && !in_component[s]) {
      in_component[s] = 1;
      q.push(s);
    }
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    const auto& sv = tri.simplex(i).v;
    const auto& nb = tri.neighbors(i);
    for (size_t drop = 0; drop < sv.size(); ++drop) {
      const int other = nb[drop];
      if (other < 0 || in_component[other]) continue;
      double facet_min = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < sv.size(); ++j)
        if (j != drop) facet_min = std::min(facet_min, V.values[sv[j]]);
      if (facet_min > r) continue;
      if (!simplex_touched(other)) continue;
      in_component[other] = 1;
      q.push(other);
    }
  }
  std::vector<int> out;
  for (int i = 0; i < tri.num_simplexes(); ++i)
    if (in_component[i]) out.push_back(i);
  return out;
}

// crossing point of the level on edge (a, b)
VectorXd edge_crossing(const Triangulation& tri, const ScalarField& V, double r, int a, int b) {
  const double va = V.values[a], vb = V.values[b];
  const double t = (r - va) / (vb - va);
  return tri.vertex(a).coords + t * (tri.vertex(b).coords - tri.vertex(a).coords);
}

int64_t ekey(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<int64_t>(a) << 32) | static_cast<uint32_t>(b);
}

// chain level-crossing segments on the component into closed loops (n = 2)
std::vector<MatrixXd> crossing_loops(const ScalarField& V, double r, const std::vector<int>& component) {
  const Triangulation& tri = *V.tri;
  std::map<int64_t, VectorXd> points;
  std::map<int64_t, std::vector<int64_t>> links;
  for (int i : component) {
    const auto& sv = tri.simplex(i).v;
    std::vector<int64_t> keys;
    for (int e = 0; e < 3; ++e) {
      const int a = sv[e], b = sv[(e + 1) % 3];
      const bool below_a = V.values[a] <= r, below_b = V.values[b] <= r;
      if (below_a != below_b) {
        const int64_t k = ekey(a, b);
        keys.push_back(k);
        if (!points.count(k)) points[k] = edge_crossing(tri, V, r, a, b);
      }
    }
    if (keys.size() == 2) {
      links[keys[0]].push_back(keys[1]);
      links[keys[1]].push_back(keys[0]);
    }
  }
  std::vector<MatrixXd> loops;
  std::set<int64_t> used;
  for (const auto& [start, nbrs] : links) {
    if (used.count(start) || nbrs.empty()) continue;
    std::vector<int64_t> path{start};
    used.insert(start);
    int64_t prev = -1, cur = start;
    while (true) {
      int64_t next = -1;
      for (int64_t cand : links[cur])
        if (cand != prev && !used.count(cand)) {
          next = cand;
          break;
        }
      if (next < 0) break;
      path.push_back(next);
      used.insert(next);
      prev = cur;
      cur = next;
    }
    if (path.size() >= 3) {
      MatrixXd loop(path.size(), 2);
      for (size_t k = 0; k < path.size(); ++k) loop.row(k) = points[path[k]].transpose();
      loops.push_back(std::move(loop));
    }
  }
  return loops;
}

bool point_in_loop(const MatrixXd& loop, const VectorXd& p) {
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

// ordered outer boundary loop of a 2-D mesh
MatrixXd boundary_loop(const Triangulation& tri) {
  std::map<int, std::vector<int>> next;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    const auto& sv = tri.simplex(i).v;
    const auto& nb = tri.neighbors(i);
    for (size_t drop = 0; drop < sv.size(); ++drop) {
      if (nb[drop] >= 0) continue;
      std::vector<int> f;
      for (size_t j = 0; j < sv.size(); ++j)
        if (j != drop) f.push_back(sv[j]);
      next[f[0]].push_back(f[1]);
      next[f[1]].push_back(f[0]);
    }
  }
  if (next.empty()) return MatrixXd(0, 2);
  std::set<int> used;
  std::vector<MatrixXd> loops;
  for (const auto& [start, nbrs] : next) {
    if (used.count(start)) continue;
    std::vector<int> path{start};
    used.insert(start);
    int prev = -1, cur = start;
    while (true) {
      int nxt = -1;
      for (int cand : next[cur])
        if (cand != prev && !used.count(cand)) {
          nxt = cand;
          break;
        }
      if (nxt < 0) break;
      path.push_back(nxt);
      used.insert(nxt);
      prev = cur;
      cur = nxt;
    }
    MatrixXd loop(path.size(), 2);
    for (size_t k = 0; k < path.size(); ++k) loop.row(k) = tri.vertex(path[k]).coords.transpose();
    loops.push_back(std::move(loop));
  }
  // outer loop has the largest absolute area
  size_t best = 0;
  double best_area = -1;
  for (size_t k = 0; k < loops.size(); ++k) {
    const double a = std::abs(mesh::polygon_area(loops[k]));
    if (a > best_area) {
      best_area = a;
      best = k;
    }
  }
  return loops[best];
}

SublevelRegion extract(const ScalarField& V, double r, const std::vector<int>& seeds,
                       const VectorXd* origin) {
  const Triangulation& tri = *V.tri;
  SublevelRegion region;
  region.r = r;
  region.touched_simplexes = flood_component(V, r, seeds);
  if (region.touched_simplexes.empty()) throw std::domain_error("sublevel region is empty");
  for (int i : region.touched_simplexes) {
    bool all_below = true;
    for (int v : tri.simplex(i).v) all_below &= (V.values[v] <= r);
    if (all_below) region.member_simplexes.push_back(i);
  }

  // global connectivity flag: does any sublevel simplex exist outside the component?
  std::set<int> comp(region.touched_simplexes.begin(), region.touched_simplexes.end());
  region.connected = true;
  for (int i = 0; i < tri.num_simplexes(); ++i) {
    if (comp.count(i)) continue;
    double mn = std::numeric_limits<double>::infinity();
    for (int v : tri.simplex(i).v) mn = std::min(mn, V.values[v]);
    if (mn <= r) {
      region.connected = false;
      break;
    }
  }

  if (origin) {
    std::vector<int> at;
    region.contains_origin = tri.try_locate(*origin, at) &&
                             std::any_of(at.begin(), at.end(), [&](int i) { return comp.count(i) > 0; });
  }

  if (tri.dim() == 2) {
    auto loops = crossing_loops(V, r, region.touched_simplexes);
    if (loops.empty()) {
      region.boundary_polyline = boundary_loop(tri);
    } else if (origin) {
      bool found = false;
      for (auto& loop : loops)
        if (point_in_loop(loop, *origin)) {
          region.boundary_polyline = std::move(loop);
          found = true;
          break;
        }
      if (!found) region.boundary_polyline = std::move(loops.front());
    } else {
      // keep the largest loop
      size_t best = 0;
      double best_area = -1;
      for (size_t k = 0; k < loops.size(); ++k) {
        const double a = std::abs(mesh::polygon_area(loops[k]));
        if (a > best_area) {
          best_area = a;
          best = k;
        }
      }
      region.boundary_polyline = std::move(loops[best]);
    }
  }
  return region;
}

}  // namespace

SublevelRegion largest_certified_sublevel(const ScalarField& V, bool exclude_boundary) {
  const Triangulation& tri = *V.tri;
  if ((V.values.array() < -1e-12).any())
    throw std::invalid_argument("largest_certified_sublevel: V must be nonnegative at vertices");
  const int o = tri.origin_vertex();
  if (o < 0) throw std::domain_error("largest_certified_sublevel: origin not in triangulation");
  if (V.values[o] > 1e-12)
    throw std::invalid_argument("largest_certified_sublevel: V(origin) must be zero");

  double boundary_min = std::numeric_limits<double>::infinity();
  for (int v : tri.boundary_vertices()) boundary_min = std::min(boundary_min, V.values[v]);
  double r = exclude_boundary ? (1.0 - 1e-6) * boundary_min : boundary_min;
  if (!(r > 0.0)) throw std::domain_error("largest_certified_sublevel: empty region (boundary value 0)");

  VectorXd origin = VectorXd::Zero(tri.dim());
  SublevelRegion region = extract(V, r, tri.incident(o), &origin);
  region.contains_origin = true;
  return region;
}

SublevelRegion sublevel_from_seeds(const ScalarField& V, double r, const std::vector<int>& seeds) {
  VectorXd origin = VectorXd::Zero(V.tri->dim());
  return extract(V, r, seeds, &origin);
}

}  // namespace cpalyap::cpa
