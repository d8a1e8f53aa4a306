#pragma once

#include "cpalyap/conic.hpp"
#include "cpalyap/cpa.hpp"
#include "cpalyap/mesh.hpp"
#include "cpalyap/model.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cpalyap::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class VariantKind { plain, stabilize, reach_target, single_stage, multi_stage };
enum class Continuity { stitched, discontinuous_V, discontinuous_u, discontinuous_both };
/// Right-hand side of the decrease rows: -b2*V or plain -b2.
enum class DecreaseRhs { proportional, constant };

struct VariantSpec {
  VariantKind kind = VariantKind::plain;
  Continuity continuity = Continuity::stitched;
  DecreaseRhs rhs = DecreaseRhs::proportional;
  /// Tag of the inner constraint surface bounding the target set.
  std::string target_surface;
  /// Membership test for the target set interior (reach_target only).
  std::function<bool(const VectorXd&)> inside_target;
  /// Stage-stitching pins (multi_stage); dropped under discontinuous modes.
  std::map<int, double> pinned_V;
  std::map<int, VectorXd> pinned_u;

  bool boundary_tie() const {
    return kind == VariantKind::reach_target || kind == VariantKind::single_stage ||
           kind == VariantKind::multi_stage;
  }
  bool pins_origin() const {
    return kind == VariantKind::stabilize || kind == VariantKind::single_stage;
  }
};

struct DecisionVariables {
  VectorXd V;   // Lyapunov value per vertex
  MatrixXd U;   // input per vertex (num_vertices x m)
  MatrixXd L;   // |grad V_i| bounds per simplex (num_simplexes x n)
  VectorXd Z;   // |grad u_i| bounds per simplex (empty for constant G)
  double a = 2.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double b3 = 0.0;   // decay inside the target set; sign left free
  bool has_b3 = false;
};

/// Decrease-row and bound bookkeeping for one (model, mesh, variant) triple.
/// Single source of truth for both the independent residual checker and the
/// convexified iteration; everything is recomputed from the model so that a
/// corrupted certificate cannot satisfy it.
class ConstraintSystem {
 public:
  static constexpr double kEpsB1 = 1e-6;

  ConstraintSystem(const model::SystemModel& model, const mesh::Triangulation& tri,
                   VariantSpec variant, double a = 2.0);

  const model::SystemModel& model() const { return *model_; }
  const mesh::Triangulation& tri() const { return *tri_; }
  const VariantSpec& variant() const { return variant_; }
  double exponent() const { return a_; }
  const model::HessianConstants& constants() const { return consts_; }
  double eps_b1() const { return eps_b1_; }

  bool v_pinned(int vertex, double* value = nullptr) const;
  bool u_pinned(int vertex, VectorXd* value = nullptr) const;
  bool tied_to_boundary(int vertex) const;
  bool inner_simplex(int i) const { return inner_[i]; }
  const VectorXd& norm_pow() const { return norm_pow_; }

  /// D+_{i,j} V at the decision point (exact bilinear terms).
  double dini_bound(const DecisionVariables& y, int i, int j) const;
  /// Full decrease row: D+_{i,j}V + b*V (or + b), b chosen by row location.
  double decrease_row(const DecisionVariables& y, int i, int j) const;
  /// Largest constraint violation over all families and variant edits.
  double max_residual(const DecisionVariables& y) const;

  struct RowCounts {
    int v_lower = 0, v_tie = 0, l_abs = 0, u_poly = 0, z_abs = 0, decrease = 0, pins = 0;
  };
  RowCounts row_counts() const;

  VectorXd grad_V(const DecisionVariables& y, int i) const;
  VectorXd grad_u(const DecisionVariables& y, int i, int s) const;

  const VectorXd& f_at(int vertex) const { return f_vals_[vertex]; }
  const MatrixXd& G_at(int vertex) const { return G_vals_[vertex]; }

 private:
  const model::SystemModel* model_;
  const mesh::Triangulation* tri_;
  VariantSpec variant_;
  double a_;
  double eps_b1_ = kEpsB1;
  model::HessianConstants consts_;
  VectorXd norm_pow_;
  std::vector<VectorXd> f_vals_;
  std::vector<MatrixXd> G_vals_;
  std::vector<char> inner_;
};

struct Objective {
  enum class Kind { maximize_b2, min_input_norm, none } kind = Kind::maximize_b2;
  static Objective maximize_b2() { return {Kind::maximize_b2}; }
  static Objective min_input_norm() { return {Kind::min_input_norm}; }
  static Objective none() { return {Kind::none}; }
};

struct IterateResult {
  DecisionVariables vars;
  bool solver_ok = false;
  double objective = 0.0;
  conic::SolveStatus status = conic::SolveStatus::numerical_failure;
  int sdp_iterations = 0;
};

/// One convex-overbounded step from a feasible point; returns an improved
/// point that stays feasible for the nonconvex constraints. Solver failures
/// return the current point with solver_ok = false; a post-check failure of
/// the returned point throws.
IterateResult iterate(const ConstraintSystem& cs, const DecisionVariables& current,
                      const Objective& objective, bool fix_b2 = false,
                      const conic::SolveOptions& solver = {});

DecisionVariables init_random(const ConstraintSystem& cs, double a, double b1, std::mt19937_64& rng,
                              double amplitude = 0.0);
DecisionVariables init_lqr(const ConstraintSystem& cs);

struct FixedMeshOptions {
  double b2_target = 0.05;
  int max_iters = 20;           // phase-1 cap
  int max_iters_phase2 = 0;     // 0 disables the secondary objective phase
  Objective phase2 = Objective::min_input_norm();
  double stall_tol = 1e-9;
  int stall_window = 3;
  conic::SolveOptions solver;
  std::function<void(int, const DecisionVariables&)> on_iteration;
};

struct FixedMeshResult {
  DecisionVariables vars;
  bool reached_target = false;
  std::vector<double> b2_history;
  std::vector<double> phase2_history;
  int iterations = 0;
};

/// Alg. 1: maximize b2 until the target or a stall, then optionally fix b2
/// and minimize the secondary convex objective.
FixedMeshResult run_fixed_mesh(const ConstraintSystem& cs, const DecisionVariables& init,
                               const FixedMeshOptions& opts);

struct SalvageResult {
  bool ok = false;
  std::vector<int> kept;  // simplexes whose nonzero-vertex rows are all negative
  double hat_b2 = 0.0;
  double tilde_b2 = 0.0;  // only meaningful for DecreaseRhs::constant
};
SalvageResult salvage(const ConstraintSystem& cs, const DecisionVariables& y);

enum class SalvageKind { none, hat_b2, tilde_b2 };

struct CertifiedRegion {
  double r = 0.0;
  cpa::SublevelRegion region;   // simplex ids in the stage mesh
  double a = 2.0, b1 = 0.0, b2 = 0.0;
  int stage = 1;
  SalvageKind salvage = SalvageKind::none;
};

struct StageResult {
  std::shared_ptr<mesh::Triangulation> tri;
  DecisionVariables vars;
  CertifiedRegion certified;
  bool achieved_b2 = false;
  std::vector<double> b2_history;
};

/// Residual-check + region extraction for stabilize / single-stage runs.
/// Falls back to the salvage corollaries when b2 <= 0. Returns nothing when
/// no certificate exists.
std::optional<CertifiedRegion> certify(const ConstraintSystem& cs, const DecisionVariables& y,
                                       int stage = 1);

struct StagePlan {
  // stage 1
  std::function<mesh::Triangulation()> first_mesh;
  VariantKind first_kind = VariantKind::stabilize;
  // later stages: outer polygons around the previous certified region
  struct Ring {
    MatrixXd outer;
    mesh::SizeField size;
    Continuity continuity = Continuity::stitched;
  };
  std::vector<Ring> rings;
  FixedMeshOptions fixed;
  bool lqr_init = true;
  unsigned seed = 0;
  double init_amplitude = 0.0;
};

std::vector<StageResult> run_multistage(const model::SystemModel& model, const StagePlan& plan);

struct SizeSpec {
  double base_rho;
  double base_gamma = 0.8;
  struct Region {
    std::function<bool(const VectorXd&)> contains;
    double rho;
    double gamma;
  };
  std::vector<Region> regions;
  double rho_min = 1e-3;

  mesh::SizeField field_at_level(int level) const;
  double min_rho_at_level(int level) const;
};

struct GeneratorSpec {
  enum class Kind { box, polygon } kind = Kind::box;
  mesh::Box box;
  std::vector<mesh::AxisSurface> surfaces;
  MatrixXd polygon;

  mesh::Triangulation build(const mesh::SizeField& size) const;
};

struct RefiningOptions {
  FixedMeshOptions fixed;
  int max_levels = 4;
  double min_certified_area = 0.0;  // 0 disables the area objective
  bool lqr_init = true;
  unsigned seed = 0;
  double init_amplitude = 0.0;
};

struct RefiningResult {
  std::vector<StageResult> per_level;
  int best_level = -1;  // index into per_level, -1 when nothing certified
  bool objectives_met = false;
};

/// Alg. 2: regenerate the mesh with shrinking size bounds until the run on a
/// fixed mesh meets the objectives or the size floor is reached.
RefiningResult run_refining(const model::SystemModel& model, const GeneratorSpec& gen,
                            VariantKind kind, const SizeSpec& sizes, const RefiningOptions& opts);

}  // namespace cpalyap::synth
