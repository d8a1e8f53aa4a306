#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpalyap/conic.hpp"
#include "cpalyap/ipm.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace cpalyap;
using conic::AffineExpr;
using conic::ConicProgram;
using conic::SolveStatus;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("min t subject to [[t,1],[1,t]] psd gives t = 1") {
  // eigenvalue condition: t >= |1|; encoded as -[[t,1],[1,t]] <= 0
  ConicProgram prog;
  const int t = prog.new_variable();
  prog.minimize(AffineExpr().add(t, 1.0));
  const int blk = prog.add_psd_le_zero(2);
  prog.set_entry(blk, 0, 0, AffineExpr().add(t, -1.0));
  prog.set_entry(blk, 1, 0, AffineExpr(-1.0));
  prog.set_entry(blk, 1, 1, AffineExpr().add(t, -1.0));
  auto rep = prog.solve();
  REQUIRE(rep.status == SolveStatus::optimal);
  CHECK(rep.values[t] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(rep.max_primal_residual < 1e-6);
}

TEST_CASE("contradictory linear rows are infeasible") {
  ConicProgram prog;
  const int x = prog.new_variable();
  prog.minimize(AffineExpr());
  prog.add_le(AffineExpr().add(x, -1.0), -1.0);  // x >= 1
  prog.add_le(AffineExpr().add(x, 1.0), 0.0);    // x <= 0
  auto rep = prog.solve();
  CHECK(rep.status == SolveStatus::infeasible);
}

TEST_CASE("2-D LP optimum matches vertex enumeration") {
  // min -x - 2y  s.t. x + y <= 4, x <= 3, y <= 2.5, x >= 0, y >= 0
  ConicProgram prog;
  const int x = prog.new_variable(), y = prog.new_variable();
  prog.minimize(AffineExpr().add(x, -1.0).add(y, -2.0));
  prog.add_le(AffineExpr().add(x, 1.0).add(y, 1.0), 4.0);
  prog.add_le(AffineExpr().add(x, 1.0), 3.0);
  prog.add_le(AffineExpr().add(y, 1.0), 2.5);
  prog.add_le(AffineExpr().add(x, -1.0), 0.0);
  prog.add_le(AffineExpr().add(y, -1.0), 0.0);
  auto rep = prog.solve();
  REQUIRE(rep.status == SolveStatus::optimal);

  // brute-force oracle over all constraint-pair intersections
  MatrixXd A(5, 2);
  A << 1, 1, 1, 0, 0, 1, -1, 0, 0, -1;
  VectorXd b(5);
  b << 4, 3, 2.5, 0, 0;
  double best = 1e30;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      MatrixXd M(2, 2);
      M << A(i, 0), A(i, 1), A(j, 0), A(j, 1);
      if (std::abs(M.determinant()) < 1e-12) continue;
      VectorXd v = M.inverse() * (VectorXd(2) << b[i], b[j]).finished();
      if (((A * v - b).array() <= 1e-9).all()) best = std::min(best, -v[0] - 2 * v[1]);
    }
  CHECK(rep.objective == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("equalities eliminate variables") {
  ConicProgram prog;
  const int x = prog.new_variable(), y = prog.new_variable(), z = prog.new_variable();
  prog.minimize(AffineExpr().add(z, 1.0));
  prog.fix(x, 2.0);
  prog.add_eq(AffineExpr().add(y, 1.0).add(x, -1.0), 0.0);  // y = x
  prog.add_le(AffineExpr().add(z, -1.0).add(y, 1.0), 0.0);  // z >= y
  auto rep = prog.solve();
  REQUIRE(rep.status == SolveStatus::optimal);
  CHECK(rep.values[x] == doctest::Approx(2.0));
  CHECK(rep.values[y] == doctest::Approx(2.0));
  CHECK(rep.values[z] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("inconsistent pins are infeasible") {
  ConicProgram prog;
  const int x = prog.new_variable();
  prog.minimize(AffineExpr());
  prog.fix(x, 1.0);
  prog.fix(x, 2.0);
  CHECK(prog.solve().status == SolveStatus::infeasible);
}

TEST_CASE("solutions satisfy all constraints on re-substitution") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    // random SDP: min c'x s.t. sum x_i A_i <= B with B positive definite,
    // plus a box on x; always feasible (x = 0)
    const int nv = 3;
    ConicProgram prog;
    std::vector<int> xs;
    AffineExpr obj;
    for (int v = 0; v < nv; ++v) {
      xs.push_back(prog.new_variable());
      obj.add(xs[v], dist(rng));
    }
    prog.minimize(obj);
    const int d = 3;
    MatrixXd B = MatrixXd::Zero(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c <= r; ++c) B(r, c) = B(c, r) = dist(rng);
    B += (d + 1.0) * MatrixXd::Identity(d, d);
    const int blk = prog.add_psd_le_zero(d);
    std::vector<MatrixXd> As(nv, MatrixXd::Zero(d, d));
    for (int v = 0; v < nv; ++v)
      for (int r = 0; r < d; ++r)
        for (int c = 0; c <= r; ++c) As[v](r, c) = As[v](c, r) = dist(rng);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c <= r; ++c) {
        AffineExpr e(-B(r, c));
        for (int v = 0; v < nv; ++v) e.add(xs[v], As[v](r, c));
        prog.set_entry(blk, r, c, std::move(e));
      }
    for (int v = 0; v < nv; ++v) {
      prog.add_le(AffineExpr().add(xs[v], 1.0), 2.0);
      prog.add_le(AffineExpr().add(xs[v], -1.0), 2.0);
    }
    auto rep = prog.solve();
    REQUIRE(rep.status == SolveStatus::optimal);
    // re-substitution: scalar rows to 1e-7, block min-eig >= -1e-7
    CHECK(rep.max_primal_residual < 1e-7);
    MatrixXd M = -B;
    for (int v = 0; v < nv; ++v) M += rep.values[xs[v]] * As[v];
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(M, Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().maxCoeff() < 1e-7);
  }
}

TEST_CASE("dump / parse round-trip solves identically") {
  ConicProgram prog;
  const int x = prog.new_variable(), y = prog.new_variable();
  prog.minimize(AffineExpr().add(x, 1.0).add(y, 0.5));
  prog.add_le(AffineExpr().add(x, -1.0).add(y, -1.0), -1.0);
  const int blk = prog.add_psd_le_zero(2);
  prog.set_entry(blk, 0, 0, AffineExpr().add(x, -1.0));
  prog.set_entry(blk, 1, 0, AffineExpr(-0.3));
  prog.set_entry(blk, 1, 1, AffineExpr().add(y, -1.0));

  std::stringstream ss;
  prog.dump(ss);
  ConicProgram again = ConicProgram::parse(ss);
  auto r1 = prog.solve();
  auto r2 = again.solve();
  REQUIRE(r1.status == SolveStatus::optimal);
  REQUIRE(r2.status == SolveStatus::optimal);
  CHECK(r1.objective == doctest::Approx(r2.objective).epsilon(1e-10));
  CHECK((r1.values - r2.values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("qp: active constraint u >= 1") {
  MatrixXd H = MatrixXd::Identity(1, 1);
  VectorXd h = VectorXd::Zero(1);
  MatrixXd A = (MatrixXd(1, 1) << -1.0).finished();
  VectorXd b = (VectorXd(1) << -1.0).finished();
  VectorXd u = conic::solve_qp(H, h, A, b);
  CHECK(u[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("qp: interior optimum at zero") {
  MatrixXd H = MatrixXd::Identity(1, 1);
  VectorXd h = VectorXd::Zero(1);
  MatrixXd A = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  VectorXd b = (VectorXd(2) << 5.0, 5.0).finished();
  VectorXd u = conic::solve_qp(H, h, A, b);
  CHECK(std::abs(u[0]) < 1e-7);
}

TEST_CASE("qp: projection onto a halfspace") {
  MatrixXd H = MatrixXd::Identity(2, 2);
  VectorXd h = VectorXd::Zero(2);
  MatrixXd A = (MatrixXd(1, 2) << -1.0, -1.0).finished();
  VectorXd b = (VectorXd(1) << -2.0).finished();
  VectorXd u = conic::solve_qp(H, h, A, b);
  CHECK(u[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(u[1] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("qp: infeasible region throws") {
  MatrixXd H = MatrixXd::Identity(1, 1);
  VectorXd h = VectorXd::Zero(1);
  MatrixXd A = (MatrixXd(2, 1) << 1.0, -1.0).finished();
  VectorXd b = (VectorXd(2) << -3.0, 1.0).finished();  // u <= -3 and u >= -1
  CHECK_THROWS_AS(conic::solve_qp(H, h, A, b), conic::QpInfeasible);
}

TEST_CASE("qp satisfies the KKT conditions") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixXd L = MatrixXd::Zero(2, 2);
    L(0, 0) = 1.0 + std::abs(dist(rng));
    L(1, 0) = dist(rng);
    L(1, 1) = 1.0 + std::abs(dist(rng));
    MatrixXd H = L * L.transpose();
    VectorXd h = (VectorXd(2) << dist(rng), dist(rng)).finished();
    MatrixXd A(4, 2);
    A << 1, 0, -1, 0, 0, 1, 0, -1;
    VectorXd b = VectorXd::Constant(4, 2.0);
    VectorXd u = conic::solve_qp(H, h, A, b);
    // feasibility
    CHECK((A * u - b).maxCoeff() < 1e-9);
    // stationarity residual via the active-set multipliers: for the box case,
    // 2Hu + h must vanish on inactive coordinates
    VectorXd g = 2 * H * u + h;
    for (int k = 0; k < 2; ++k)
      if (std::abs(u[k]) < 2.0 - 1e-7) CHECK(std::abs(g[k]) < 1e-8);
  }
}

TEST_CASE("ipm handles explicit equality rows") {
  // min x + y s.t. x + y + z = 2, z <= 0.5, x >= 0, y >= 0  (general 3-var row
  // exercises the bordered path rather than substitution)
  ipm::Problem prob;
  prob.nvars = 3;
  prob.c = (VectorXd(3) << 1.0, 1.0, 0.0).finished();
  auto add_row = [&](double c0, std::vector<std::pair<int, double>> terms) {
    ipm::Block b;
    b.dim = 1;
    b.F0 = MatrixXd::Constant(1, 1, c0);
    for (auto [v, w] : terms) b.entries.push_back({v, 0, 0, w});
    prob.blocks.push_back(std::move(b));
  };
  add_row(0.5, {{2, -1.0}});  // 0.5 - z >= 0
  add_row(0.0, {{0, 1.0}});   // x >= 0
  add_row(0.0, {{1, 1.0}});   // y >= 0
  prob.E = (MatrixXd(1, 3) << 1.0, 1.0, 1.0).finished();
  prob.d = (VectorXd(1) << 2.0).finished();
  auto res = ipm::solve(prob);
  REQUIRE(res.status == ipm::Status::optimal);
  CHECK(res.x[2] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(res.x[0] + res.x[1] == doctest::Approx(1.5).epsilon(1e-6));
}

TEST_CASE("report carries usable inequality duals") {
  // min x s.t. x >= 3: dual of the active row must be ~1
  ConicProgram prog;
  const int x = prog.new_variable();
  prog.minimize(AffineExpr().add(x, 1.0));
  const int row = prog.add_le(AffineExpr().add(x, -1.0), -3.0);
  auto rep = prog.solve();
  REQUIRE(rep.status == SolveStatus::optimal);
  CHECK(rep.values[x] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(rep.lin_duals[row] == doctest::Approx(1.0).epsilon(1e-5));
}
