#pragma once

#include <Eigen/Dense>

#include <vector>

namespace cpalyap::ipm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One PSD cone: S(x) = F0 + sum coef * x_var * E_rc  (symmetric, E_rc has
/// ones at (r,c) and (c,r)). dim == 1 rows double as linear inequalities.
struct Block {
  int dim = 1;
  MatrixXd F0;
  struct Entry {
    int var, r, c;
    double coef;
  };
  std::vector<Entry> entries;  // lower triangle, r >= c
};

/// min c'x  s.t.  S_k(x) >= 0 for every block, E x = d.
struct Problem {
  int nvars = 0;
  VectorXd c;
  std::vector<Block> blocks;
  MatrixXd E;  // may be 0 x nvars
  VectorXd d;
};

struct Options {
  double tol = 1e-8;
  int max_iters = 200;
  int verbosity = 0;
  bool classify_infeasibility = true;
};

enum class Status { optimal, infeasible, numerical_failure };

struct Result {
  Status status = Status::numerical_failure;
  VectorXd x;
  VectorXd y;                 // equality multipliers
  std::vector<MatrixXd> Z;    // cone duals
  double pobj = 0.0, dobj = 0.0;
  double primal_residual = 0.0;  // max-norm over blocks and equalities
  double dual_residual = 0.0;
  int iterations = 0;
};

/// HKM primal-dual predictor-corrector interior-point method with a sparse
/// Schur complement; variables present in many blocks are pivoted into a
/// dense border along with the equality rows.
Result solve(const Problem& problem, const Options& opts = {});

}  // namespace cpalyap::ipm
