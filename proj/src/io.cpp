#include "cpalyap/io.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cpalyap::io {

json mesh_to_json(const mesh::Triangulation& tri) {
  json j;
  j["vertices"] = json::array();
  for (const auto& v : tri.vertices()) {
    json row = json::array();
    for (int k = 0; k < v.coords.size(); ++k) row.push_back(v.coords[k]);
    j["vertices"].push_back(std::move(row));
  }
  j["simplexes"] = json::array();
  for (const auto& s : tri.simplexes()) j["simplexes"].push_back(s.v);
  j["boundary"] = json::array();
  for (int v : tri.boundary_vertices()) j["boundary"].push_back(v);
  j["surfaces"] = json::object();
  for (const auto& [name, ids] : tri.surfaces()) {
    json arr = json::array();
    for (int v : ids) arr.push_back(v);
    j["surfaces"][name] = std::move(arr);
  }
  return j;
}

mesh::Triangulation mesh_from_json(const json& j) {
  std::vector<Eigen::VectorXd> coords;
  for (const auto& row : j.at("vertices")) {
    Eigen::VectorXd p(row.size());
    for (size_t k = 0; k < row.size(); ++k) p[k] = row[k].get<double>();
    coords.push_back(std::move(p));
  }
  std::vector<std::vector<int>> simplexes;
  for (const auto& row : j.at("simplexes")) simplexes.push_back(row.get<std::vector<int>>());
  std::set<int> boundary;
  for (const auto& v : j.at("boundary")) boundary.insert(v.get<int>());
  std::map<std::string, std::set<int>> surfaces;
  if (j.contains("surfaces"))
    for (const auto& [name, arr] : j.at("surfaces").items()) {
      std::set<int> ids;
      for (const auto& v : arr) ids.insert(v.get<int>());
      surfaces[name] = std::move(ids);
    }
  return mesh::Triangulation(std::move(coords), std::move(simplexes), std::move(boundary),
                             std::move(surfaces));
}

json scalar_field_to_json(const Eigen::VectorXd& values) {
  json j = json::object();
  for (int v = 0; v < values.size(); ++v) j[std::to_string(v)] = values[v];
  return j;
}

Eigen::VectorXd scalar_field_from_json(const json& j) {
  Eigen::VectorXd out(j.size());
  for (const auto& [key, val] : j.items()) out[std::stoi(key)] = val.get<double>();
  return out;
}

json vector_field_to_json(const Eigen::MatrixXd& values) {
  json j = json::object();
  for (int v = 0; v < values.rows(); ++v) {
    json row = json::array();
    for (int s = 0; s < values.cols(); ++s) row.push_back(values(v, s));
    j[std::to_string(v)] = std::move(row);
  }
  return j;
}

Eigen::MatrixXd vector_field_from_json(const json& j) {
  if (j.empty()) return {};
  const int cols = static_cast<int>(j.begin()->size());
  Eigen::MatrixXd out(j.size(), cols);
  for (const auto& [key, row] : j.items()) {
    const int v = std::stoi(key);
    for (int s = 0; s < cols; ++s) out(v, s) = row[s].get<double>();
  }
  return out;
}

json stage_to_json(const synth::StageResult& sr) {
  json j;
  j["mesh"] = mesh_to_json(*sr.tri);
  j["V"] = scalar_field_to_json(sr.vars.V);
  j["u"] = vector_field_to_json(sr.vars.U);
  j["constants"] = {{"a", sr.certified.a},
                    {"b1", sr.certified.b1},
                    {"b2", sr.certified.b2},
                    {"r", sr.certified.r},
                    {"stage", sr.certified.stage},
                    {"raw_b2", sr.vars.b2},
                    {"achieved_b2", sr.achieved_b2}};
  j["salvage"] = sr.certified.salvage == synth::SalvageKind::none
                     ? "none"
                     : (sr.certified.salvage == synth::SalvageKind::hat_b2 ? "hat_b2" : "tilde_b2");
  json poly = json::array();
  for (int r = 0; r < sr.certified.region.boundary_polyline.rows(); ++r)
    poly.push_back({sr.certified.region.boundary_polyline(r, 0),
                    sr.certified.region.boundary_polyline(r, 1)});
  j["region_polyline"] = std::move(poly);
  j["member_simplexes"] = sr.certified.region.member_simplexes;
  j["b2_history"] = sr.b2_history;
  return j;
}

synth::StageResult stage_from_json(const json& j) {
  synth::StageResult sr;
  sr.tri = std::make_shared<mesh::Triangulation>(mesh_from_json(j.at("mesh")));
  sr.vars.V = scalar_field_from_json(j.at("V"));
  sr.vars.U = vector_field_from_json(j.at("u"));
  const auto& c = j.at("constants");
  sr.certified.a = c.at("a").get<double>();
  sr.certified.b1 = c.at("b1").get<double>();
  sr.certified.b2 = c.at("b2").get<double>();
  sr.certified.r = c.at("r").get<double>();
  sr.certified.stage = c.at("stage").get<int>();
  sr.vars.a = sr.certified.a;
  sr.vars.b1 = sr.certified.b1;
  sr.vars.b2 = c.contains("raw_b2") ? c.at("raw_b2").get<double>() : sr.certified.b2;
  if (c.contains("achieved_b2")) sr.achieved_b2 = c.at("achieved_b2").get<bool>();
  const std::string salv = j.at("salvage").get<std::string>();
  sr.certified.salvage = salv == "none" ? synth::SalvageKind::none
                                        : (salv == "hat_b2" ? synth::SalvageKind::hat_b2
                                                            : synth::SalvageKind::tilde_b2);
  const auto& poly = j.at("region_polyline");
  Eigen::MatrixXd loop(poly.size(), 2);
  for (size_t r = 0; r < poly.size(); ++r) {
    loop(r, 0) = poly[r][0].get<double>();
    loop(r, 1) = poly[r][1].get<double>();
  }
  sr.certified.region.boundary_polyline = std::move(loop);
  sr.certified.region.r = sr.certified.r;
  if (j.contains("member_simplexes"))
    sr.certified.region.member_simplexes = j.at("member_simplexes").get<std::vector<int>>();
  if (j.contains("b2_history")) sr.b2_history = j.at("b2_history").get<std::vector<double>>();
  return sr;
}

void polyline_csv(std::ostream& os, const std::vector<Eigen::MatrixXd>& loops) {
  os.precision(17);
  bool first = true;
  for (const auto& loop : loops) {
    if (!first) os << "nan,nan\n";
    first = false;
    for (int r = 0; r < loop.rows(); ++r) os << loop(r, 0) << "," << loop(r, 1) << "\n";
  }
}

void trajectory_csv(std::ostream& os, const std::vector<double>& t,
                    const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::VectorXd>& u) {
  os.precision(17);
  for (size_t s = 0; s < t.size(); ++s) {
    os << t[s];
    for (int k = 0; k < x[s].size(); ++k) os << "," << x[s][k];
    for (int k = 0; k < u[s].size(); ++k) os << "," << u[s][k];
    os << "\n";
  }
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_file: cannot open " + path);
  f << contents;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_file: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace cpalyap::io
