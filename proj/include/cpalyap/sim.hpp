#pragma once

#include "cpalyap/controller.hpp"
#include "cpalyap/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cpalyap::sim {

using Eigen::VectorXd;

struct Trajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;
  std::vector<VectorXd> inputs;
  std::optional<double> exit_time;  // set when the inside-predicate flips
};

using ControlLaw = std::function<VectorXd(const VectorXd&)>;
using InsideTest = std::function<bool(const VectorXd&)>;

/// Fixed-step RK4 with zero-order-hold input per step; when inside() flips,
/// the exit time is bisected to 1e-9*dt and integration stops there.
Trajectory integrate(const model::SystemModel& md, const ControlLaw& u, const VectorXd& x0,
                     double T, double dt, const InsideTest& inside = {});

struct DecayReport {
  int bound_violations = 0;     // decay or norm-bound failures
  int input_violations = 0;     // H u <= h failures along trajectories
  double max_ratio = 0.0;       // worst state-norm over its certified envelope
  bool stayed_inside = true;
  int trajectories = 0;
  int reached_inner = 0;        // trajectories that entered a deeper stage
  std::optional<VectorXd> witness;
  std::string detail;

  bool sound() const { return bound_violations == 0 && input_violations == 0 && stayed_inside; }
};

struct VerifyOptions {
  int grid_density = 11;   // starts per axis over the region bounding box
  double dt = 1e-3;
  double tol = 1e-3;       // multiplicative slack on the certified bounds
  double horizon_cap = 60.0;
  double input_tol = 1e-9;
};

/// Simulates a start grid inside the certified region and checks (i) the
/// region is never left, (ii) each stage's V decays at its certified rate
/// from stage entry, (iii) the state norm stays under the stage's Lemma
/// envelope, and (iv) the inputs respect the polytope.
DecayReport verify_certificate(const model::SystemModel& md, const ctrl::CpaController& ctrl,
                               const VerifyOptions& opts = {});

}  // namespace cpalyap::sim
