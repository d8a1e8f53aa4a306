#include "cpalyap/care.hpp"

#include <Eigen/Eigenvalues>

#include <stdexcept>

namespace cpalyap::care {

MatrixXd solve_care(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R) {
  const int n = static_cast<int>(A.rows());
  const MatrixXd Rinv = R.inverse();
  MatrixXd H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = A;
  H.topRightCorner(n, n) = -B * Rinv * B.transpose();
  H.bottomLeftCorner(n, n) = -Q;
  H.bottomRightCorner(n, n) = -A.transpose();

  Eigen::ComplexEigenSolver<MatrixXd> eig(H);
  if (eig.info() != Eigen::Success) throw std::runtime_error("solve_care: eigensolver failed");

  Eigen::MatrixXcd basis(2 * n, n);
  int found = 0;
  for (int k = 0; k < 2 * n && found < n; ++k) {
    if (eig.eigenvalues()[k].real() < 0) basis.col(found++) = eig.eigenvectors().col(k);
  }
  if (found != n) throw std::runtime_error("solve_care: no stabilizing solution (check stabilizability)");

  const Eigen::MatrixXcd X1 = basis.topRows(n);
  const Eigen::MatrixXcd X2 = basis.bottomRows(n);
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(X1);
  if (!lu.isInvertible()) throw std::runtime_error("solve_care: singular subspace basis");
  MatrixXd P = (X2 * lu.inverse()).real();
  P = 0.5 * (P + P.transpose()).eval();

  const double resid = (A.transpose() * P + P * A - P * B * Rinv * B.transpose() * P + Q).norm();
  if (resid > 1e-6 * (1.0 + P.norm()))
    throw std::runtime_error("solve_care: residual too large");
  return P;
}

}  // namespace cpalyap::care
