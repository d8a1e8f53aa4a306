#include "cpalyap/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace cpalyap::mesh {

namespace {

double factorial(int n) {
  double r = 1.0;
  for (int k = 2; k <= n; ++k) r *= k;
  return r;
}

int64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<int64_t>(a) << 32) | static_cast<uint32_t>(b);
}

double cross2(const VectorXd& o, const VectorXd& a, const VectorXd& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

bool lex_less(const VectorXd& a, const VectorXd& b) {
  for (int k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) return true;
    if (a[k] > b[k]) return false;
  }
  return false;
}

}  // namespace

bool Box::contains(const VectorXd& x, double tol) const {
  for (int k = 0; k < dim(); ++k)
    if (x[k] < lo[k] - tol || x[k] > hi[k] + tol) return false;
  return true;
}

Box Box::hull(const Box& a, const Box& b) {
  return Box{a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)};
}

SizeField::SizeField(double base_rho) : base_rho_(base_rho) {
  if (!(base_rho > 0.0)) throw std::invalid_argument("SizeField: rho must be positive");
}

SizeField& SizeField::add_region(std::function<bool(const VectorXd&)> contains, double rho) {
  if (!(rho > 0.0)) throw std::invalid_argument("SizeField: rho must be positive");
  regions_.push_back({std::move(contains), rho});
  return *this;
}

double SizeField::at(const VectorXd& x) const {
  double r = base_rho_;
  for (const auto& reg : regions_)
    if (reg.contains(x)) r = std::min(r, reg.rho);
  return r;
}

double SizeField::min_rho() const {
  double r = base_rho_;
  for (const auto& reg : regions_) r = std::min(r, reg.rho);
  return r;
}

// ---------------------------------------------------------------------------
// Triangulation
// ---------------------------------------------------------------------------

Triangulation::Triangulation(std::vector<VectorXd> coords,
                             std::vector<std::vector<int>> simplexes, std::set<int> boundary,
                             std::map<std::string, std::set<int>> surfaces, Provenance prov)
    : boundary_(std::move(boundary)), surfaces_(std::move(surfaces)), prov_(std::move(prov)) {
  if (coords.empty() || simplexes.empty())
    throw std::invalid_argument("Triangulation: empty vertex or simplex list");
  dim_ = static_cast<int>(coords[0].size());
  vertices_.reserve(coords.size());
  double scale = 0.0;
  for (size_t i = 0; i < coords.size(); ++i) {
    if (!coords[i].allFinite()) throw std::invalid_argument("Triangulation: nonfinite vertex");
    scale = std::max(scale, coords[i].cwiseAbs().maxCoeff());
    vertices_.push_back({std::move(coords[i]), static_cast<int>(i)});
  }
  const double origin_tol = 1e-12 * std::max(1.0, scale);
  for (const auto& v : vertices_)
    if (v.coords.cwiseAbs().maxCoeff() <= origin_tol) {
      origin_vertex_ = v.id;
      break;
    }

  simplexes_.reserve(simplexes.size());
  for (auto& ids : simplexes) {
    if (static_cast<int>(ids.size()) != dim_ + 1)
      throw std::invalid_argument("Triangulation: simplex vertex count != n+1");
    // anchor convention: origin first when present, else lexicographic minimum
    int anchor = 0;
    for (size_t j = 0; j < ids.size(); ++j) {
      if (ids[j] == origin_vertex_ && origin_vertex_ >= 0) {
        anchor = static_cast<int>(j);
        break;
      }
      if (lex_less(vertices_[ids[j]].coords, vertices_[ids[anchor]].coords)) {
        anchor = static_cast<int>(j);
      }
    }
    std::swap(ids[0], ids[anchor]);
    simplexes_.push_back({std::move(ids)});
  }

  build_geometry();
  build_adjacency();
  build_buckets();
}

void Triangulation::build_geometry() {
  const int n = dim_;
  geometry_.resize(simplexes_.size());
  for (size_t i = 0; i < simplexes_.size(); ++i) {
    const auto& s = simplexes_[i].v;
    SimplexGeometry g;
    g.X.resize(n, n);
    const VectorXd& x0 = vertices_[s[0]].coords;
    for (int j = 1; j <= n; ++j) g.X.row(j - 1) = (vertices_[s[j]].coords - x0).transpose();

    double longest = 0.0;
    for (int a = 0; a <= n; ++a)
      for (int b = a + 1; b <= n; ++b)
        longest = std::max(longest, (vertices_[s[a]].coords - vertices_[s[b]].coords).norm());
    g.longest_edge = longest;

    Eigen::FullPivLU<MatrixXd> lu(g.X);
    const double det = lu.determinant();
    if (std::abs(det) < 1e-12 * std::pow(longest, n))
      throw std::invalid_argument("Triangulation: near-degenerate simplex " + std::to_string(i));
    g.X_inv = lu.inverse();
    g.volume = std::abs(det) / factorial(n);

    g.c.resize(n + 1);
    g.c[0] = 0.0;
    double max_edge0 = 0.0;
    for (int j = 1; j <= n; ++j) max_edge0 = std::max(max_edge0, g.X.row(j - 1).norm());
    for (int j = 1; j <= n; ++j) {
      const double ej = g.X.row(j - 1).norm();
      g.c[j] = 0.5 * n * ej * (max_edge0 + ej);
    }
    geometry_[i] = std::move(g);
  }
}

void Triangulation::build_adjacency() {
  incident_.assign(vertices_.size(), {});
  for (size_t i = 0; i < simplexes_.size(); ++i)
    for (int v : simplexes_[i].v) incident_[v].push_back(static_cast<int>(i));

  // facet -> owning simplexes
  std::map<std::vector<int>, std::vector<int>> facets;
  for (size_t i = 0; i < simplexes_.size(); ++i) {
    const auto& s = simplexes_[i].v;
    for (size_t drop = 0; drop < s.size(); ++drop) {
      std::vector<int> f;
      for (size_t j = 0; j < s.size(); ++j)
        if (j != drop) f.push_back(s[j]);
      std::sort(f.begin(), f.end());
      facets[f].push_back(static_cast<int>(i));
    }
  }
  neighbors_.assign(simplexes_.size(), {});
  for (size_t i = 0; i < simplexes_.size(); ++i) {
    const auto& s = simplexes_[i].v;
    auto& nb = neighbors_[i];
    nb.assign(s.size(), -1);
    for (size_t drop = 0; drop < s.size(); ++drop) {
      std::vector<int> f;
      for (size_t j = 0; j < s.size(); ++j)
        if (j != drop) f.push_back(s[j]);
      std::sort(f.begin(), f.end());
      const auto& owners = facets[f];
      if (owners.size() > 2)
        throw std::invalid_argument("Triangulation: facet shared by more than two simplexes");
      for (int o : owners)
        if (o != static_cast<int>(i)) nb[drop] = o;
    }
  }
}

void Triangulation::build_buckets() {
  bbox_ = bounding_box();
  double avg_edge = 0.0;
  for (const auto& g : geometry_) avg_edge += g.longest_edge;
  avg_edge /= static_cast<double>(geometry_.size());
  bucket_h_ = std::max(avg_edge, 1e-12);

  bucket_dims_.resize(dim_);
  int total = 1;
  for (int k = 0; k < dim_; ++k) {
    int d = std::max(1, static_cast<int>(std::ceil(bbox_.span(k) / bucket_h_)));
    d = std::min(d, 2048);
    bucket_dims_[k] = d;
    total *= d;
  }
  buckets_.assign(total, {});

  auto cell_range = [&](double lo, double hi, int k, int& c0, int& c1) {
    const double w = bbox_.span(k) / bucket_dims_[k];
    c0 = std::clamp(static_cast<int>((lo - bbox_.lo[k]) / w), 0, bucket_dims_[k] - 1);
    c1 = std::clamp(static_cast<int>((hi - bbox_.lo[k]) / w), 0, bucket_dims_[k] - 1);
  };

  for (size_t i = 0; i < simplexes_.size(); ++i) {
    VectorXd lo = vertices_[simplexes_[i].v[0]].coords;
    VectorXd hi = lo;
    for (int v : simplexes_[i].v) {
      lo = lo.cwiseMin(vertices_[v].coords);
      hi = hi.cwiseMax(vertices_[v].coords);
    }
    std::vector<std::pair<int, int>> ranges(dim_);
    for (int k = 0; k < dim_; ++k) cell_range(lo[k], hi[k], k, ranges[k].first, ranges[k].second);
    // enumerate the covered cells
    std::vector<int> idx(dim_);
    for (int k = 0; k < dim_; ++k) idx[k] = ranges[k].first;
    while (true) {
      int flat = 0;
      for (int k = 0; k < dim_; ++k) flat = flat * bucket_dims_[k] + idx[k];
      buckets_[flat].push_back(static_cast<int>(i));
      int k = dim_ - 1;
      while (k >= 0) {
        if (++idx[k] <= ranges[k].second) break;
        idx[k] = ranges[k].first;
        --k;
      }
      if (k < 0) break;
    }
  }
}

bool Triangulation::on_surface(const std::string& name, int id) const {
  auto it = surfaces_.find(name);
  return it != surfaces_.end() && it->second.count(id) > 0;
}

VectorXd Triangulation::barycentric(int i, const VectorXd& x) const {
  const auto& g = geometry_[i];
  const VectorXd& x0 = vertices_[simplexes_[i].v[0]].coords;
  VectorXd a_rest = g.X_inv.transpose() * (x - x0);
  VectorXd alpha(dim_ + 1);
  alpha[0] = 1.0 - a_rest.sum();
  alpha.tail(dim_) = a_rest;
  return alpha;
}

bool Triangulation::try_locate(const VectorXd& x, std::vector<int>& out, double tol) const {
  out.clear();
  if (!bbox_.contains(x, tol * std::max(1.0, bbox_.hi.cwiseAbs().maxCoeff()))) return false;
  int flat = 0;
  for (int k = 0; k < dim_; ++k) {
    const double w = bbox_.span(k) / bucket_dims_[k];
    int c = std::clamp(static_cast<int>((x[k] - bbox_.lo[k]) / w), 0, bucket_dims_[k] - 1);
    flat = flat * bucket_dims_[k] + c;
  }
  for (int i : buckets_[flat]) {
    VectorXd a = barycentric(i, x);
    if ((a.array() >= -tol).all()) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return !out.empty();
}

std::vector<int> Triangulation::locate(const VectorXd& x, double tol) const {
  std::vector<int> out;
  if (!try_locate(x, out, tol)) throw std::domain_error("locate: point outside triangulation");
  return out;
}

double Triangulation::total_volume() const {
  double v = 0.0;
  for (const auto& g : geometry_) v += g.volume;
  return v;
}

Box Triangulation::bounding_box() const {
  VectorXd lo = vertices_[0].coords, hi = lo;
  for (const auto& v : vertices_) {
    lo = lo.cwiseMin(v.coords);
    hi = hi.cwiseMax(v.coords);
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// working 2-D mesh used by the generators
// ---------------------------------------------------------------------------

namespace {

struct WorkMesh {
  std::vector<VectorXd> pts;
  std::vector<std::array<int, 3>> tris;
  std::vector<char> alive;
  std::unordered_map<int64_t, std::vector<int>> edge_tris;
  std::set<std::pair<int, int>> constrained;  // ordered pairs (min,max)
  std::unordered_map<int64_t, int> midpoints;

  int add_tri(int a, int b, int c) {
    int id = static_cast<int>(tris.size());
    tris.push_back({a, b, c});
    alive.push_back(1);
    for (auto [u, v] : std::array<std::pair<int, int>, 3>{{{a, b}, {b, c}, {c, a}}})
      edge_tris[edge_key(u, v)].push_back(id);
    return id;
  }

  void kill_tri(int t) {
    alive[t] = 0;
    const auto& T = tris[t];
    for (auto [u, v] : std::array<std::pair<int, int>, 3>{{{T[0], T[1]}, {T[1], T[2]}, {T[2], T[0]}}}) {
      auto& owners = edge_tris[edge_key(u, v)];
      owners.erase(std::remove(owners.begin(), owners.end(), t), owners.end());
    }
  }

  bool is_constrained(int a, int b) const {
    if (a > b) std::swap(a, b);
    return constrained.count({a, b}) > 0;
  }

  void constrain(int a, int b) {
    if (a > b) std::swap(a, b);
    constrained.insert({a, b});
  }

  void unconstrain(int a, int b) {
    if (a > b) std::swap(a, b);
    constrained.erase({a, b});
  }

  int neighbor_across(int t, int a, int b) const {
    auto it = edge_tris.find(edge_key(a, b));
    if (it == edge_tris.end()) return -1;
    for (int o : it->second)
      if (o != t) return o;
    return -1;
  }

  // longest edge of triangle t as (a, b, opposite); deterministic tie-break
  std::array<int, 3> longest_edge(int t) const {
    const auto& T = tris[t];
    std::array<std::array<int, 3>, 3> edges = {{{T[0], T[1], T[2]}, {T[1], T[2], T[0]}, {T[2], T[0], T[1]}}};
    int best = 0;
    double best_len = -1.0;
    for (int e = 0; e < 3; ++e) {
      double len = (pts[edges[e][0]] - pts[edges[e][1]]).squaredNorm();
      int64_t key = edge_key(edges[e][0], edges[e][1]);
      int64_t bkey = edge_key(edges[best][0], edges[best][1]);
      if (len > best_len * (1.0 + 1e-12) || (std::abs(len - best_len) <= 1e-12 * best_len && key < bkey)) {
        best = e;
        best_len = len;
      }
    }
    return edges[best];
  }

  double longest_len(int t) const {
    auto e = longest_edge(t);
    return (pts[e[0]] - pts[e[1]]).norm();
  }

  int midpoint(int a, int b) {
    int64_t key = edge_key(a, b);
    auto it = midpoints.find(key);
    if (it != midpoints.end()) return it->second;
    int id = static_cast<int>(pts.size());
    pts.push_back(0.5 * (pts[a] + pts[b]));
    midpoints[key] = id;
    return id;
  }

  // split triangle t across edge (a,b) at vertex m; children keep orientation
  void split_tri(int t, int a, int b, int m) {
    const auto& T = tris[t];
    int opp = -1;
    for (int v : T)
      if (v != a && v != b) opp = v;
    // order (a,b) as it appears in t to preserve orientation
    int u = a, w = b;
    for (int e = 0; e < 3; ++e) {
      if (T[e] == b && T[(e + 1) % 3] == a) {
        u = b;
        w = a;
        break;
      }
    }
    kill_tri(t);
    add_tri(u, m, opp);
    add_tri(m, w, opp);
  }

  // conforming longest-edge bisection of t (Rivara)
  void bisect(int t) {
    std::vector<int> stack{t};
    while (!stack.empty()) {
      int cur = stack.back();
      if (!alive[cur]) {
        stack.pop_back();
        continue;
      }
      auto e = longest_edge(cur);
      int nb = neighbor_across(cur, e[0], e[1]);
      if (nb >= 0) {
        auto en = longest_edge(nb);
        if (edge_key(en[0], en[1]) != edge_key(e[0], e[1])) {
          if (stack.size() > 10000) throw std::runtime_error("bisect: refinement chain too deep");
          stack.push_back(nb);
          continue;
        }
      }
      int m = midpoint(e[0], e[1]);
      if (is_constrained(e[0], e[1])) {
        unconstrain(e[0], e[1]);
        constrain(e[0], m);
        constrain(m, e[1]);
      }
      split_tri(cur, e[0], e[1], m);
      if (nb >= 0 && alive[nb]) split_tri(nb, e[0], e[1], m);
      stack.pop_back();
    }
  }

  void refine_to_size(const SizeField& size) {
    bool changed = true;
    while (changed) {
      changed = false;
      const int count = static_cast<int>(tris.size());
      for (int t = 0; t < count; ++t) {
        if (!alive[t]) continue;
        VectorXd centroid = (pts[tris[t][0]] + pts[tris[t][1]] + pts[tris[t][2]]) / 3.0;
        if (longest_len(t) > size.at(centroid) * (1.0 + 1e-12)) {
          bisect(t);
          changed = true;
        }
      }
    }
  }

  bool incircle_bad(int a, int b, int c, int d) const {
    // true when d lies strictly inside the circumcircle of (a,b,c)
    Eigen::Matrix3d M;
    auto row = [&](int p, int r) {
      M(r, 0) = pts[p][0] - pts[d][0];
      M(r, 1) = pts[p][1] - pts[d][1];
      M(r, 2) = M(r, 0) * M(r, 0) + M(r, 1) * M(r, 1);
    };
    row(a, 0);
    row(b, 1);
    row(c, 2);
    double det = M.determinant();
    double scale = std::pow((pts[a] - pts[d]).norm() + (pts[b] - pts[d]).norm() + (pts[c] - pts[d]).norm(), 4);
    double orient = cross2(pts[a], pts[b], pts[c]);
    if (orient < 0) det = -det;
    return det > 1e-12 * std::max(scale, 1e-30);
  }

  void lawson_flips() {
    std::deque<std::pair<int, int>> queue;
    std::vector<std::pair<int, int>> seed;
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      if (!alive[t]) continue;
      const auto& T = tris[t];
      for (auto [u, v] : std::array<std::pair<int, int>, 3>{{{T[0], T[1]}, {T[1], T[2]}, {T[2], T[0]}}})
        seed.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(seed.begin(), seed.end());
    seed.erase(std::unique(seed.begin(), seed.end()), seed.end());
    for (auto& e : seed) queue.push_back(e);

    int guard = 0;
    const int guard_max = 50 * static_cast<int>(tris.size()) + 10000;
    while (!queue.empty() && guard++ < guard_max) {
      auto [a, b] = queue.front();
      queue.pop_front();
      if (is_constrained(a, b)) continue;
      auto it = edge_tris.find(edge_key(a, b));
      if (it == edge_tris.end() || it->second.size() != 2) continue;
      int t1 = it->second[0], t2 = it->second[1];
      if (!alive[t1] || !alive[t2]) continue;
      int c = -1, d = -1;
      for (int v : tris[t1])
        if (v != a && v != b) c = v;
      for (int v : tris[t2])
        if (v != a && v != b) d = v;
      if (c < 0 || d < 0 || c == d) continue;
      if (cross2(pts[a], pts[b], pts[c]) < 0) std::swap(c, d);  // c left of a->b
      if (!incircle_bad(a, b, c, d)) continue;
      // flip only strictly convex quadrilaterals; children are (a,d,c), (b,c,d)
      double area_scale = (pts[a] - pts[b]).squaredNorm();
      double ca = cross2(pts[a], pts[d], pts[c]);
      double cb = cross2(pts[b], pts[c], pts[d]);
      if (ca <= 1e-13 * area_scale || cb <= 1e-13 * area_scale) continue;
      kill_tri(t1);
      kill_tri(t2);
      add_tri(a, d, c);
      add_tri(b, c, d);
      for (auto [u, v] : std::array<std::pair<int, int>, 4>{{{a, d}, {d, b}, {b, c}, {c, a}}})
        queue.emplace_back(std::min(u, v), std::max(u, v));
    }
  }

  std::vector<std::vector<int>> compact(std::vector<int>& old_to_new) const {
    old_to_new.assign(pts.size(), -1);
    std::vector<std::vector<int>> out;
    for (size_t t = 0; t < tris.size(); ++t) {
      if (!alive[t]) continue;
      for (int v : tris[t])
        if (old_to_new[v] < 0) old_to_new[v] = 0;
      out.push_back({tris[t][0], tris[t][1], tris[t][2]});
    }
    int next = 0;
    for (size_t v = 0; v < pts.size(); ++v)
      if (old_to_new[v] == 0) old_to_new[v] = next++;
      else old_to_new[v] = -1;
    for (auto& T : out)
      for (int& v : T) v = old_to_new[v];
    return out;
  }
};

}  // namespace

double polygon_area(const MatrixXd& ring) {
  double s = 0.0;
  const int n = static_cast<int>(ring.rows());
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    s += ring(i, 0) * ring(j, 1) - ring(j, 0) * ring(i, 1);
  }
  return 0.5 * s;
}

// ---------------------------------------------------------------------------
// box meshing
// ---------------------------------------------------------------------------

Triangulation triangulate_box(const Box& box, const SizeField& size,
                              const std::vector<AxisSurface>& surfaces) {
  const int n = box.dim();
  for (int k = 0; k < n; ++k)
    if (!(box.span(k) > 0.0)) throw std::invalid_argument("triangulate_box: degenerate box");
  for (const auto& s : surfaces) {
    if (s.axis < 0 || s.axis >= n) throw std::invalid_argument("triangulate_box: surface axis out of range");
    if (s.value < box.lo[s.axis] || s.value > box.hi[s.axis])
      throw std::invalid_argument("triangulate_box: surface outside the box");
  }

  // cell edge targets: Kuhn cells of side h have longest edge sqrt(n)*h
  const double h_base = (n == 2 ? size.base() : size.min_rho()) / std::sqrt(static_cast<double>(n));

  std::vector<std::vector<double>> axis_coords(n);
  for (int k = 0; k < n; ++k) {
    std::vector<double> brk{box.lo[k], box.hi[k]};
    for (const auto& s : surfaces)
      if (s.axis == k && s.value > box.lo[k] + 1e-14 && s.value < box.hi[k] - 1e-14) brk.push_back(s.value);
    std::sort(brk.begin(), brk.end());
    brk.erase(std::unique(brk.begin(), brk.end(),
                          [&](double a, double b) { return std::abs(a - b) < 1e-13 * box.span(k); }),
              brk.end());
    auto& coords = axis_coords[k];
    for (size_t seg = 0; seg + 1 < brk.size(); ++seg) {
      const double a = brk[seg], b = brk[seg + 1];
      const int cells = std::max(1, static_cast<int>(std::ceil((b - a) / h_base - 1e-12)));
      for (int i = 0; i < cells; ++i) coords.push_back(a + (b - a) * (static_cast<double>(i) / cells));
    }
    coords.push_back(box.hi[k]);
  }

  // tensor-product vertex grid
  std::vector<int> dims(n);
  int total = 1;
  for (int k = 0; k < n; ++k) {
    dims[k] = static_cast<int>(axis_coords[k].size());
    total *= dims[k];
  }
  auto flat_index = [&](const std::vector<int>& idx) {
    int f = 0;
    for (int k = 0; k < n; ++k) f = f * dims[k] + idx[k];
    return f;
  };
  std::vector<VectorXd> pts(total);
  {
    std::vector<int> idx(n, 0);
    while (true) {
      VectorXd p(n);
      for (int k = 0; k < n; ++k) p[k] = axis_coords[k][idx[k]];
      pts[flat_index(idx)] = p;
      int k = n - 1;
      while (k >= 0 && ++idx[k] >= dims[k]) idx[k--] = 0;
      if (k < 0) break;
    }
  }

  // Kuhn simplexification: one simplex per permutation per cell
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> perms;
  do {
    perms.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<std::vector<int>> simplexes;
  {
    std::vector<int> cell(n, 0);
    while (true) {
      bool in_range = true;
      for (int k = 0; k < n; ++k)
        if (cell[k] + 1 >= dims[k]) in_range = false;
      if (in_range) {
        for (const auto& pm : perms) {
          std::vector<int> ids;
          std::vector<int> idx = cell;
          ids.push_back(flat_index(idx));
          for (int step = 0; step < n; ++step) {
            idx[pm[step]] += 1;
            ids.push_back(flat_index(idx));
          }
          simplexes.push_back(std::move(ids));
        }
      }
      int k = n - 1;
      while (k >= 0 && ++cell[k] >= std::max(1, dims[k] - 1)) cell[k--] = 0;
      if (k < 0) break;
    }
  }

  std::vector<std::vector<int>> final_simplexes;
  std::vector<VectorXd> final_pts;
  if (n == 2) {
    WorkMesh wm;
    wm.pts = pts;
    for (const auto& s : simplexes) {
      // make CCW
      if (cross2(pts[s[0]], pts[s[1]], pts[s[2]]) > 0) wm.add_tri(s[0], s[1], s[2]);
      else wm.add_tri(s[0], s[2], s[1]);
    }
    wm.refine_to_size(size);
    std::vector<int> remap;
    final_simplexes = wm.compact(remap);
    final_pts.resize(0);
    for (size_t v = 0; v < wm.pts.size(); ++v)
      if (remap[v] >= 0) {
        if (static_cast<int>(final_pts.size()) <= remap[v]) final_pts.resize(remap[v] + 1);
        final_pts[remap[v]] = wm.pts[v];
      }
  } else {
    final_simplexes = std::move(simplexes);
    final_pts = std::move(pts);
  }

  // geometric classification of boundary and surfaces
  std::set<int> boundary;
  std::map<std::string, std::set<int>> tags;
  const double tol = 1e-10 * std::max(1.0, box.hi.cwiseAbs().maxCoeff());
  for (size_t v = 0; v < final_pts.size(); ++v) {
    const VectorXd& p = final_pts[v];
    for (int k = 0; k < n; ++k)
      if (std::abs(p[k] - box.lo[k]) < tol || std::abs(p[k] - box.hi[k]) < tol) {
        boundary.insert(static_cast<int>(v));
        break;
      }
    for (const auto& s : surfaces)
      if (std::abs(p[s.axis] - s.value) < tol) tags[s.name].insert(static_cast<int>(v));
  }
  for (const auto& s : surfaces)
    if (!tags.count(s.name)) tags[s.name] = {};

  Provenance prov;
  prov.kind = Provenance::Kind::box;
  prov.box = box;
  prov.surfaces = surfaces;
  return Triangulation(std::move(final_pts), std::move(final_simplexes), std::move(boundary),
                       std::move(tags), std::move(prov));
}

// ---------------------------------------------------------------------------
// polygon / annulus meshing (n = 2)
// ---------------------------------------------------------------------------

namespace {

bool point_on_segment(const VectorXd& p, const VectorXd& a, const VectorXd& b, double tol) {
  VectorXd ab = b - a, ap = p - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0) return false;
  const double t = ap.dot(ab) / len2;
  if (t < -1e-12 || t > 1.0 + 1e-12) return false;
  VectorXd proj = a + t * ab;
  return (p - proj).norm() <= tol;
}

bool segments_properly_intersect(const VectorXd& a, const VectorXd& b, const VectorXd& c,
                                 const VectorXd& d) {
  const double d1 = cross2(c, d, a), d2 = cross2(c, d, b);
  const double d3 = cross2(a, b, c), d4 = cross2(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

// ring holds vertex ids; clip ears until only a triangle remains
void ear_clip(WorkMesh& wm, std::vector<int> ring) {
  auto area2 = [&](int a, int b, int c) { return cross2(wm.pts[a], wm.pts[b], wm.pts[c]); };
  double scale2 = 0.0;
  for (size_t i = 0; i < ring.size(); ++i)
    scale2 = std::max(scale2, (wm.pts[ring[i]] - wm.pts[ring[(i + 1) % ring.size()]]).squaredNorm());
  const double eps_area = 1e-12 * scale2;

  int stall = 0;
  while (ring.size() > 3) {
    const int m = static_cast<int>(ring.size());
    bool clipped = false;
    for (int i = 0; i < m; ++i) {
      const int a = ring[(i + m - 1) % m], b = ring[i], c = ring[(i + 1) % m];
      const double ar = area2(a, b, c);
      if (ar <= eps_area) continue;  // reflex or degenerate corner
      bool ok = true;
      for (int j = 0; j < m && ok; ++j) {
        const int p = ring[j];
        if (p == a || p == b || p == c) continue;
        // skip duplicated ring positions sharing coordinates with the corner
        if ((wm.pts[p] - wm.pts[a]).squaredNorm() < 1e-24 || (wm.pts[p] - wm.pts[b]).squaredNorm() < 1e-24 ||
            (wm.pts[p] - wm.pts[c]).squaredNorm() < 1e-24)
          continue;
        if (cross2(wm.pts[a], wm.pts[b], wm.pts[p]) >= -eps_area &&
            cross2(wm.pts[b], wm.pts[c], wm.pts[p]) >= -eps_area &&
            cross2(wm.pts[c], wm.pts[a], wm.pts[p]) >= -eps_area)
          ok = false;
      }
      if (!ok) continue;
      wm.add_tri(a, b, c);
      ring.erase(ring.begin() + i);
      clipped = true;
      stall = 0;
      break;
    }
    if (!clipped) {
      if (++stall > 2) throw std::runtime_error("ear_clip: no ear found (degenerate polygon?)");
      // tolerate slight non-simplicity by clipping the most convex corner
      int best = -1;
      double best_area = eps_area;
      for (int i = 0; i < m; ++i) {
        const double ar = area2(ring[(i + m - 1) % m], ring[i], ring[(i + 1) % m]);
        if (ar > best_area) {
          best_area = ar;
          best = i;
        }
      }
      if (best < 0) throw std::runtime_error("ear_clip: polygon collapsed");
      wm.add_tri(ring[(best + m - 1) % m], ring[best], ring[(best + 1) % m]);
      ring.erase(ring.begin() + best);
    }
  }
  if (area2(ring[0], ring[1], ring[2]) > eps_area) wm.add_tri(ring[0], ring[1], ring[2]);
}

struct RingPrep {
  std::vector<int> ids;          // surviving ring, in orientation order
  std::vector<int> dropped;      // collinear vertices to re-insert later
};

RingPrep prepare_ring(WorkMesh& wm, const MatrixXd& poly, bool want_ccw) {
  const int k = static_cast<int>(poly.rows());
  if (k < 3) throw std::invalid_argument("polyline needs at least 3 vertices");
  std::vector<int> ids(k);
  for (int i = 0; i < k; ++i) {
    ids[i] = static_cast<int>(wm.pts.size());
    wm.pts.push_back(poly.row(i).transpose());
  }
  const double area = polygon_area(poly);
  if (std::abs(area) < 1e-14) throw std::invalid_argument("degenerate polyline");
  if ((area > 0) != want_ccw) std::reverse(ids.begin(), ids.end());

  // constraint edges along the original ring
  for (int i = 0; i < k; ++i) wm.constrain(ids[i], ids[(i + 1) % k]);

  // strip collinear vertices (re-inserted after triangulation)
  RingPrep prep;
  std::vector<int> ring = ids;
  double scale2 = 0.0;
  for (int i = 0; i < k; ++i) scale2 = std::max(scale2, wm.pts[ids[i]].squaredNorm());
  bool changed = true;
  while (changed && ring.size() > 3) {
    changed = false;
    for (size_t i = 0; i < ring.size(); ++i) {
      const int a = ring[(i + ring.size() - 1) % ring.size()];
      const int b = ring[i];
      const int c = ring[(i + 1) % ring.size()];
      if (std::abs(cross2(wm.pts[a], wm.pts[b], wm.pts[c])) < 1e-12 * std::max(scale2, 1.0) &&
          point_on_segment(wm.pts[b], wm.pts[a], wm.pts[c], 1e-9 * std::sqrt(std::max(scale2, 1.0)))) {
        prep.dropped.push_back(b);
        wm.unconstrain(a, b);
        wm.unconstrain(b, c);
        wm.constrain(a, c);
        ring.erase(ring.begin() + i);
        changed = true;
        break;
      }
    }
  }
  prep.ids = std::move(ring);
  return prep;
}

void reinsert_dropped(WorkMesh& wm, const std::vector<int>& dropped) {
  for (int d : dropped) {
    double scale = std::sqrt(std::max(wm.pts[d].squaredNorm(), 1.0));
    bool placed = false;
    const int count = static_cast<int>(wm.tris.size());
    for (int t = 0; t < count && !placed; ++t) {
      if (!wm.alive[t]) continue;
      const auto T = wm.tris[t];
      for (auto [u, v] : std::array<std::pair<int, int>, 3>{{{T[0], T[1]}, {T[1], T[2]}, {T[2], T[0]}}}) {
        if (point_on_segment(wm.pts[d], wm.pts[u], wm.pts[v], 1e-9 * scale)) {
          const bool con = wm.is_constrained(u, v);
          std::vector<int> owners = wm.edge_tris[edge_key(u, v)];
          if (con) {
            wm.unconstrain(u, v);
            wm.constrain(u, d);
            wm.constrain(d, v);
          }
          for (int o : owners) wm.split_tri(o, u, v, d);
          placed = true;
          break;
        }
      }
    }
    if (!placed) throw std::runtime_error("mesh: failed to re-insert collinear polyline vertex");
  }
}

Triangulation build_polygon_mesh(const MatrixXd& outer, const MatrixXd* inner, const SizeField& size,
                                 Provenance prov) {
  // reject crossing rings
  if (inner) {
    const int ko = static_cast<int>(outer.rows()), ki = static_cast<int>(inner->rows());
    for (int i = 0; i < ko; ++i)
      for (int j = 0; j < ki; ++j)
        if (segments_properly_intersect(outer.row(i).transpose(), outer.row((i + 1) % ko).transpose(),
                                        inner->row(j).transpose(), inner->row((j + 1) % ki).transpose()))
          throw std::invalid_argument("triangulate_annulus: polylines intersect");
    // inner must be strictly inside outer: winding test on one inner point
    VectorXd probe = inner->row(0).transpose();
    int winds = 0;
    for (int i = 0; i < ko; ++i) {
      VectorXd a = outer.row(i).transpose(), b = outer.row((i + 1) % ko).transpose();
      if ((a[1] <= probe[1]) != (b[1] <= probe[1])) {
        const double t = (probe[1] - a[1]) / (b[1] - a[1]);
        if (a[0] + t * (b[0] - a[0]) > probe[0]) ++winds;
      }
    }
    if (winds % 2 == 0) throw std::invalid_argument("triangulate_annulus: inner not inside outer");
  }

  WorkMesh wm;
  RingPrep outer_prep = prepare_ring(wm, outer, /*want_ccw=*/true);
  std::vector<int> dropped = outer_prep.dropped;

  std::vector<int> ring;
  if (inner) {
    RingPrep inner_prep = prepare_ring(wm, *inner, /*want_ccw=*/false);
    dropped.insert(dropped.end(), inner_prep.dropped.begin(), inner_prep.dropped.end());

    // bridge: rightmost hole vertex to a visible outer vertex
    const auto& hole = inner_prep.ids;
    const auto& out_ring = outer_prep.ids;
    int hi = 0;
    for (size_t i = 1; i < hole.size(); ++i)
      if (wm.pts[hole[i]][0] > wm.pts[hole[hi]][0]) hi = static_cast<int>(i);
    const VectorXd M = wm.pts[hole[hi]];

    // choose the outer vertex that is right of M, visible, and nearest by angle+distance
    int best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < out_ring.size(); ++i) {
      const VectorXd P = wm.pts[out_ring[i]];
      double cost = (P - M).squaredNorm();
      if (cost >= best_cost) continue;
      bool visible = true;
      // segment M-P must not cross any ring edge (outer or hole)
      auto check_ring = [&](const std::vector<int>& r) {
        for (size_t j = 0; j < r.size() && visible; ++j) {
          int u = r[j], v = r[(j + 1) % r.size()];
          if (u == out_ring[i] || v == out_ring[i] || u == hole[hi] || v == hole[hi]) continue;
          if (segments_properly_intersect(M, P, wm.pts[u], wm.pts[v])) visible = false;
        }
      };
      check_ring(out_ring);
      check_ring(hole);
      if (visible) {
        best = static_cast<int>(i);
        best_cost = cost;
      }
    }
    if (best < 0) throw std::runtime_error("triangulate_annulus: no visible bridge found");

    // merged ring: outer up to bridge vertex, hole loop, back
    for (int i = 0; i <= best; ++i) ring.push_back(out_ring[i]);
    for (size_t j = 0; j <= hole.size(); ++j) ring.push_back(hole[(hi + j) % hole.size()]);
    for (size_t i = best; i < out_ring.size(); ++i) ring.push_back(out_ring[i]);
  } else {
    ring = outer_prep.ids;
  }

  ear_clip(wm, ring);
  wm.lawson_flips();
  reinsert_dropped(wm, dropped);
  wm.lawson_flips();
  wm.refine_to_size(size);
  wm.lawson_flips();

  std::vector<int> remap;
  std::vector<std::vector<int>> simplexes = wm.compact(remap);
  std::vector<VectorXd> pts;
  for (size_t v = 0; v < wm.pts.size(); ++v)
    if (remap[v] >= 0) {
      if (static_cast<int>(pts.size()) <= remap[v]) pts.resize(remap[v] + 1);
      pts[remap[v]] = wm.pts[v];
    }

  // classify: vertices on the rings
  double scale = 1.0;
  for (const auto& p : pts) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double tol = 1e-9 * scale;
  auto on_ring = [&](const MatrixXd& poly, const VectorXd& p) {
    const int k = static_cast<int>(poly.rows());
    for (int i = 0; i < k; ++i)
      if (point_on_segment(p, poly.row(i).transpose(), poly.row((i + 1) % k).transpose(), tol)) return true;
    return false;
  };
  std::set<int> boundary;
  std::map<std::string, std::set<int>> tags;
  tags["outer"] = {};
  if (inner) tags["inner"] = {};
  for (size_t v = 0; v < pts.size(); ++v) {
    if (on_ring(outer, pts[v])) {
      boundary.insert(static_cast<int>(v));
      tags["outer"].insert(static_cast<int>(v));
    }
    if (inner && on_ring(*inner, pts[v])) {
      boundary.insert(static_cast<int>(v));
      tags["inner"].insert(static_cast<int>(v));
    }
  }

  return Triangulation(std::move(pts), std::move(simplexes), std::move(boundary), std::move(tags),
                       std::move(prov));
}

}  // namespace

Triangulation triangulate_annulus(const MatrixXd& outer, const MatrixXd& inner,
                                  const SizeField& size) {
  if (outer.cols() != 2 || inner.cols() != 2)
    throw std::invalid_argument("triangulate_annulus: only n = 2 supported");
  Provenance prov;
  prov.kind = Provenance::Kind::annulus;
  prov.outer = outer;
  prov.inner = inner;
  return build_polygon_mesh(outer, &inner, size, std::move(prov));
}

Triangulation triangulate_polygon(const MatrixXd& outer, const SizeField& size) {
  if (outer.cols() != 2) throw std::invalid_argument("triangulate_polygon: only n = 2 supported");
  Provenance prov;
  prov.kind = Provenance::Kind::polygon;
  prov.outer = outer;
  return build_polygon_mesh(outer, nullptr, size, std::move(prov));
}

Triangulation refine(const Triangulation& tri, const SizeField& size) {
  const auto& prov = tri.provenance();
  switch (prov.kind) {
    case Provenance::Kind::box:
      return triangulate_box(prov.box, size, prov.surfaces);
    case Provenance::Kind::annulus:
      return triangulate_annulus(prov.outer, prov.inner, size);
    case Provenance::Kind::polygon:
      return triangulate_polygon(prov.outer, size);
    default:
      throw std::invalid_argument("refine: triangulation has no generator provenance");
  }
}

Triangulation submesh(const Triangulation& tri, const std::vector<int>& keep) {
  if (keep.empty()) throw std::invalid_argument("submesh: empty simplex set");
  std::vector<int> old_to_new(tri.num_vertices(), -1);
  std::vector<VectorXd> pts;
  std::vector<std::vector<int>> simplexes;
  for (int i : keep) {
    std::vector<int> ids;
    for (int v : tri.simplex(i).v) {
      if (old_to_new[v] < 0) {
        old_to_new[v] = static_cast<int>(pts.size());
        pts.push_back(tri.vertex(v).coords);
      }
      ids.push_back(old_to_new[v]);
    }
    simplexes.push_back(std::move(ids));
  }

  // boundary: facets owned by exactly one kept simplex
  std::map<std::vector<int>, int> facet_count;
  for (const auto& s : simplexes) {
    for (size_t drop = 0; drop < s.size(); ++drop) {
      std::vector<int> f;
      for (size_t j = 0; j < s.size(); ++j)
        if (j != drop) f.push_back(s[j]);
      std::sort(f.begin(), f.end());
      facet_count[f] += 1;
    }
  }
  std::set<int> boundary;
  for (const auto& [facet, count] : facet_count)
    if (count == 1)
      for (int v : facet) boundary.insert(v);

  std::map<std::string, std::set<int>> tags;
  for (const auto& [name, ids] : tri.surfaces()) {
    std::set<int> remapped;
    for (int v : ids)
      if (old_to_new[v] >= 0) remapped.insert(old_to_new[v]);
    tags[name] = std::move(remapped);
  }

  return Triangulation(std::move(pts), std::move(simplexes), std::move(boundary), std::move(tags),
                       Provenance{});
}

}  // namespace cpalyap::mesh
