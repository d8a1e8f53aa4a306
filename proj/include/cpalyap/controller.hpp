#pragma once

#include "cpalyap/conic.hpp"
#include "cpalyap/model.hpp"
#include "cpalyap/synth.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace cpalyap::ctrl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One certified stage: mesh, vertex fields, region boundary and decay.
struct Stage {
  std::shared_ptr<const mesh::Triangulation> tri;
  MatrixXd U;
  VectorXd V;
  MatrixXd polyline;  // certified region boundary loop
  double r = 0.0;
  double b2 = 0.0;    // effective stage decay (hat-b2 when salvaged)
  double b1 = 0.0;
  double a = 2.0;
};

/// Piecewise-CPA feedback over nested certified stages. Points on a stage
/// boundary evaluate through the outer stage.
class CpaController {
 public:
  CpaController(std::vector<Stage> stages, int m);
  static CpaController from_stage_results(const std::vector<synth::StageResult>& results, int m);

  int input_dim() const { return m_; }
  int stage_count() const { return static_cast<int>(stages_.size()); }
  const Stage& stage(int k) const { return stages_[k]; }

  /// Index of the stage owning x (0 = innermost), or -1 outside the region.
  int stage_of(const VectorXd& x) const;
  bool contains(const VectorXd& x) const { return stage_of(x) >= 0; }
  VectorXd eval(const VectorXd& x) const;
  /// Stage Lyapunov value at x.
  double lyapunov(const VectorXd& x, int stage) const;
  /// Combined certified decay (min over stages).
  double combined_b2() const;

 private:
  std::vector<Stage> stages_;  // innermost first
  int m_;
};

struct OnlineQpConfig {
  std::function<MatrixXd(const VectorXd&)> Hmat;  // defaults to identity
  std::function<VectorXd(const VectorXd&)> hvec;  // defaults to zero
  double b2 = 0.0;                                // certified decay to enforce
};

/// Pointwise minimum-norm input: min u'H(x)u + h(x)'u subject to the input
/// polytope and the decrease rows of every simplex containing x. Infeasibility
/// inside the certified region signals a broken certificate.
VectorXd online_qp(const OnlineQpConfig& cfg, const model::SystemModel& md,
                   const CpaController& ctrl, const VectorXd& x);

struct MinNormResult {
  synth::DecisionVariables vars;
  std::vector<double> norm_history;  // sum ||u_x||^2 per accepted iteration
  double phi = 0.0;                  // final sum of squared vertex inputs
};

/// Offline polish: with a and b2 frozen, iteratively minimizes the summed
/// squared vertex inputs through the same convex-overbounding loop.
MinNormResult min_norm_offline(const synth::ConstraintSystem& cs,
                               const synth::DecisionVariables& start, int max_iters = 10,
                               const conic::SolveOptions& solver = {});

}  // namespace cpalyap::ctrl
