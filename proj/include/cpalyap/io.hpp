#pragma once

#include "cpalyap/cpa.hpp"
#include "cpalyap/mesh.hpp"
#include "cpalyap/synth.hpp"

#include <iosfwd>
#include <string>

// forward declaration keeps nlohmann out of most translation units
#include <json.hpp>

namespace cpalyap::io {

using nlohmann::json;

/// {"vertices": [[x1..xn]..], "simplexes": [[ids]..], "boundary": [ids],
///  "surfaces": {"name": [ids]}}
json mesh_to_json(const mesh::Triangulation& tri);
mesh::Triangulation mesh_from_json(const json& j);

/// vertex id (as string key) -> value
json scalar_field_to_json(const Eigen::VectorXd& values);
Eigen::VectorXd scalar_field_from_json(const json& j);
json vector_field_to_json(const Eigen::MatrixXd& values);
Eigen::MatrixXd vector_field_from_json(const json& j);

/// One stage bundle: mesh, V, u, constants, region polyline, salvage flag.
json stage_to_json(const synth::StageResult& sr);
synth::StageResult stage_from_json(const json& j);

/// x1,x2 rows; loops separated by a NaN,NaN row.
void polyline_csv(std::ostream& os, const std::vector<Eigen::MatrixXd>& loops);
void trajectory_csv(std::ostream& os, const std::vector<double>& t,
                    const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::VectorXd>& u);

void write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace cpalyap::io
