#pragma once

#include <Eigen/Dense>

namespace cpalyap::care {

using Eigen::MatrixXd;

/// Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0 via the stable
/// invariant subspace of the Hamiltonian matrix. Throws when no stabilizing
/// solution exists.
MatrixXd solve_care(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R);

}  // namespace cpalyap::care
