#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpalyap::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// constant + sum of coef * x_var
struct AffineExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> terms;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}
  AffineExpr& add(int var, double coef) {
    if (coef != 0.0) terms.emplace_back(var, coef);
    return *this;
  }
  AffineExpr& add_constant(double c) {
    constant += c;
    return *this;
  }
  AffineExpr& operator+=(const AffineExpr& o);
  AffineExpr& scale(double s);
  double eval(const VectorXd& x) const;
  bool has_variables() const { return !terms.empty(); }
  void compress();  // merge duplicates, drop exact zeros
};

enum class SolveStatus { optimal, infeasible, numerical_failure };

struct SolveOptions {
  double tol = 1e-8;
  int max_iters = 200;
  bool assume_feasible = false;  // skip the infeasibility classification pass
  int verbosity = 0;
};

struct SolveReport {
  SolveStatus status = SolveStatus::numerical_failure;
  VectorXd values;
  double objective = 0.0;
  double max_primal_residual = 0.0;
  double max_dual_residual = 0.0;
  int iterations = 0;
  std::vector<double> lin_duals;        // one multiplier per inequality row
  std::vector<MatrixXd> psd_duals;      // one PSD multiplier per block
};

/// Conic program builder: scalar variables, linear rows, and PSD blocks whose
/// entries are affine in the variables (constraint M(x) <= 0 in the Loewner
/// order). One solver backend sits behind solve().
class ConicProgram {
 public:
  int new_variable(std::string name = {});
  int num_variables() const { return static_cast<int>(names_.size()); }

  void minimize(AffineExpr objective);

  /// e <= rhs; returns the inequality row index.
  int add_le(AffineExpr e, double rhs = 0.0);
  void add_eq(AffineExpr e, double rhs = 0.0);
  void fix(int var, double value);

  /// New dim x dim symmetric block constrained M(x) <= 0; entries default 0.
  int add_psd_le_zero(int dim);
  void set_entry(int block, int r, int c, AffineExpr e);

  SolveReport solve(const SolveOptions& opts = {}) const;

  void dump(std::ostream& os) const;
  static ConicProgram parse(std::istream& is);

  int num_inequalities() const { return static_cast<int>(lin_.size()); }
  int num_equalities() const { return static_cast<int>(eq_.size()); }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  int block_dim(int b) const { return blocks_[b].dim; }

 private:
  struct LinRow {
    AffineExpr e;
    double rhs;
  };
  struct BlockSpec {
    int dim;
    std::vector<std::vector<AffineExpr>> entries;  // lower triangle [r][c], r >= c
  };
  std::vector<std::string> names_;
  AffineExpr objective_;
  std::vector<LinRow> lin_;
  std::vector<LinRow> eq_;
  std::vector<BlockSpec> blocks_;
};

struct QpInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// min u' Hmat u + hvec' u  s.t.  A u <= b. Hmat must be positive definite.
VectorXd solve_qp(const MatrixXd& Hmat, const VectorXd& hvec, const MatrixXd& A,
                  const VectorXd& b);

}  // namespace cpalyap::conic
