#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cpalyap/care.hpp"
#include "cpalyap/synth.hpp"

#include <cmath>
#include <random>

using namespace cpalyap;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec2(double x, double y) {
  VectorXd v(2);
  v << x, y;
  return v;
}

mesh::Triangulation origin_box(double half, double rho) {
  mesh::Box b{vec2(-half, -half), vec2(half, half)};
  mesh::SizeField size(rho);
  return mesh::triangulate_box(b, size, {{"v", 0, 0.0}, {"h", 1, 0.0}});
}

}  // namespace

TEST_CASE("care: pendulum Riccati residual") {
  MatrixXd A(2, 2), B(2, 1);
  A << 0, 1, 4.9, -0.3;
  B << 0, 1;
  const MatrixXd Q = 2 * MatrixXd::Identity(2, 2);
  const MatrixXd R = MatrixXd::Identity(1, 1);
  MatrixXd P = care::solve_care(A, B, Q, R);
  const MatrixXd resid = A.transpose() * P + P * A - P * B * R.inverse() * B.transpose() * P + Q;
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-9);
  // stabilizing: closed-loop eigenvalues in the open left half plane
  Eigen::EigenSolver<MatrixXd> eig(A - B * (B.transpose() * P));
  CHECK(eig.eigenvalues().real().maxCoeff() < 0.0);
}

TEST_CASE("row counting oracle for the plain variant") {
  auto md = model::make_state_scaled_gain();  // nonconstant G keeps the z rows
  mesh::Box b{vec2(0.5, -0.5), vec2(1.5, 0.5)};
  mesh::SizeField size(0.8);
  auto tri = mesh::triangulate_box(b, size);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::plain;
  synth::ConstraintSystem cs(md, tri, vs);
  auto rc = cs.row_counts();
  const int n = 2, p = 2, m = 1;
  CHECK(rc.v_lower == tri.num_vertices());
  CHECK(rc.u_poly == p * tri.num_vertices());
  CHECK(rc.l_abs == 2 * n * tri.num_simplexes());
  CHECK(rc.z_abs == 2 * n * m * tri.num_simplexes());
  CHECK(rc.decrease == (n + 1) * tri.num_simplexes());
  CHECK(rc.pins == 0);
}

TEST_CASE("stabilize variant pins the origin") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.8);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  CHECK(cs.row_counts().pins == 2);
  double v0;
  CHECK(cs.v_pinned(tri.origin_vertex(), &v0));
  CHECK(v0 == 0.0);
  VectorXd u0;
  CHECK(cs.u_pinned(tri.origin_vertex(), &u0));
  CHECK(u0.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_random on the pendulum: open-loop b2 is not positive") {
  auto md = model::make_pendulum();
  auto tri = origin_box(1.0, 0.4);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  std::mt19937_64 rng(1);
  auto y = synth::init_random(cs, 2.0, 1.0, rng, 0.0);
  for (int v = 0; v < tri.num_vertices(); ++v)
    CHECK(y.V[v] == doctest::Approx(tri.vertex(v).coords.squaredNorm()));
  CHECK(y.b2 <= 0.0);  // upright pendulum with zero input cannot decay
  CHECK(cs.max_residual(y) < 1e-9);
}

TEST_CASE("init_lqr seeds a feasible point with b1 = lambda_min(P)") {
  auto md = model::make_pendulum();
  auto tri = origin_box(1.0, 0.5);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  auto [A, B] = md.linearize();
  MatrixXd P = care::solve_care(A, B, 2 * MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1));
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P, Eigen::EigenvaluesOnly);
  CHECK(y.b1 == doctest::Approx(eig.eigenvalues().minCoeff()));
  CHECK(cs.max_residual(y) < 1e-9);
  for (int v = 0; v < tri.num_vertices(); ++v)
    CHECK((md.input_H * y.U.row(v).transpose() - md.input_h).maxCoeff() < 1e-12);
}

TEST_CASE("P block structure at delta = 0") {
  // phi = -1: diag(-1, -2I, -2I, -2, -2) is negative semidefinite;
  // phi = +1 has a positive eigenvalue
  for (double phi : {-1.0, 1.0}) {
    MatrixXd P = MatrixXd::Zero(7, 7);
    P(0, 0) = phi;
    for (int k = 1; k < 7; ++k) P(k, k) = -2.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(P, Eigen::EigenvaluesOnly);
    if (phi < 0) CHECK(eig.eigenvalues().maxCoeff() <= 0.0);
    else CHECK(eig.eigenvalues().maxCoeff() > 0.0);
  }
}

TEST_CASE("iterate keeps feasibility and never lowers b2") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.6);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  const double b2_0 = y.b2;
  auto step = synth::iterate(cs, y, synth::Objective::maximize_b2());
  REQUIRE(step.solver_ok);
  CHECK(step.vars.b2 >= b2_0 - 1e-9);
  CHECK(cs.max_residual(step.vars) < 1e-6);
}

TEST_CASE("double integrator certifies b2 > 0 within 15 iterations") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.6);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  synth::FixedMeshOptions opts;
  opts.b2_target = 0.05;
  opts.max_iters = 15;
  auto fm = synth::run_fixed_mesh(cs, y, opts);
  CHECK(fm.vars.b2 > 0.0);
  CHECK(cs.max_residual(fm.vars) < 1e-6);
  // b2 is the phase-1 objective: monotone nondecreasing
  for (size_t k = 1; k < fm.b2_history.size(); ++k)
    CHECK(fm.b2_history[k] >= fm.b2_history[k - 1] - 1e-9);

  auto cert = synth::certify(cs, fm.vars);
  REQUIRE(cert.has_value());
  CHECK(cert->b2 > 0.0);
  CHECK(cert->region.area() > 0.1);
  CHECK(cert->region.contains_origin);
}

TEST_CASE("phase 2 minimizes the summed squared inputs") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.7);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  synth::FixedMeshOptions opts;
  opts.b2_target = 0.05;
  opts.max_iters = 10;
  opts.max_iters_phase2 = 4;
  auto fm = synth::run_fixed_mesh(cs, y, opts);
  REQUIRE(fm.vars.b2 > 0.0);
  for (size_t k = 1; k < fm.phase2_history.size(); ++k)
    CHECK(fm.phase2_history[k] <= fm.phase2_history[k - 1] + 1e-9);
  CHECK(cs.max_residual(fm.vars) < 1e-6);
}

TEST_CASE("nonconstant G goes through the Q blocks and still iterates") {
  auto md = model::make_state_scaled_gain();
  mesh::Box b{vec2(0.5, -0.5), vec2(1.5, 0.5)};
  mesh::SizeField size(0.5);
  auto tri = mesh::triangulate_box(b, size);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::plain;
  synth::ConstraintSystem cs(md, tri, vs);
  std::mt19937_64 rng(2);
  auto y = synth::init_random(cs, 2.0, 1.0, rng, 0.2);
  REQUIRE(cs.max_residual(y) < 1e-9);
  CHECK(y.Z.size() == tri.num_simplexes());
  auto step = synth::iterate(cs, y, synth::Objective::maximize_b2());
  REQUIRE(step.solver_ok);
  CHECK(step.vars.b2 >= y.b2 - 1e-9);
  CHECK(cs.max_residual(step.vars) < 1e-6);
}

TEST_CASE("constant G never emits z variables") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.8);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  std::mt19937_64 rng(3);
  auto y = synth::init_random(cs, 2.0, 1.0, rng, 0.1);
  CHECK(y.Z.size() == 0);
  CHECK(cs.row_counts().z_abs == 0);
}

TEST_CASE("salvage keeps the all-negative simplexes and excludes the rest") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.6);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  synth::FixedMeshOptions opts;
  opts.b2_target = 0.05;
  opts.max_iters = 12;
  auto fm = synth::run_fixed_mesh(cs, y, opts);
  REQUIRE(fm.vars.b2 > 0.0);

  // with b2 > 0 every row is strictly negative away from the origin, so the
  // salvage sub-triangulation is the whole mesh
  auto s = synth::salvage(cs, fm.vars);
  CHECK(s.ok);
  CHECK(static_cast<int>(s.kept.size()) == tri.num_simplexes());
  CHECK(s.hat_b2 > 0.0);

  // slam one far vertex's input the wrong way; its simplexes drop out
  synth::DecisionVariables bad = fm.vars;
  int far_vertex = 0;
  double best = -1;
  for (int v = 0; v < tri.num_vertices(); ++v) {
    const double n2 = tri.vertex(v).coords.norm();
    if (n2 > best) {
      best = n2;
      far_vertex = v;
    }
  }
  bad.U.row(far_vertex).setConstant(md.input_h[0]);
  auto s2 = synth::salvage(cs, bad);
  for (int i : tri.incident(far_vertex)) {
    bool excluded = true;
    for (int k : s2.kept) excluded &= (k != i);
    bool row_positive = false;
    for (int j = 0; j <= 2; ++j) {
      const int x = tri.simplex(i).v[j];
      if (x != tri.origin_vertex() && cs.dini_bound(bad, i, j) >= 0) row_positive = true;
    }
    if (row_positive) CHECK(excluded);
  }
}

TEST_CASE("lemma bound: sampled Dini quotients stay under the certified rows") {
  auto md = model::make_double_integrator();
  auto tri = origin_box(1.0, 0.6);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::stabilize;
  synth::ConstraintSystem cs(md, tri, vs);
  auto y = synth::init_lqr(cs);
  synth::FixedMeshOptions opts;
  opts.b2_target = 0.05;
  opts.max_iters = 10;
  auto fm = synth::run_fixed_mesh(cs, y, opts);
  REQUIRE(fm.vars.b2 > 0.0);

  cpa::ScalarField V(tri, fm.vars.V);
  cpa::VectorField U(tri, fm.vars.U);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  int done = 0;
  while (done < 1000) {
    const int i = static_cast<int>(rng() % tri.num_simplexes());
    VectorXd alpha(3);
    alpha << unif(rng), unif(rng), unif(rng);
    alpha /= alpha.sum();
    if (alpha.minCoeff() < 0.05) continue;
    VectorXd x = VectorXd::Zero(2);
    for (int j = 0; j < 3; ++j) x += alpha[j] * tri.vertex(tri.simplex(i).v[j]).coords;
    const VectorXd g = md.f(x) + md.G(x) * U.evaluate(x);
    const double h = 1e-6;
    const double quotient = (V.evaluate(x + h * g) - V.evaluate(x)) / h;
    double bound = 0.0;
    for (int j = 0; j < 3; ++j) bound += alpha[j] * cs.dini_bound(fm.vars, i, j);
    CHECK(quotient <= bound + 1e-4);
    ++done;
  }
}

TEST_CASE("reach_target splits rows between b2 and b3") {
  auto md = model::make_pendulum();
  MatrixXd inner(4, 2);
  inner << 0.3, 0, 0, 0.3, -0.3, 0, 0, -0.3;
  MatrixXd outer(4, 2);
  outer << -1, -1, 1, -1, 1, 1, -1, 1;
  mesh::SizeField size(0.45);
  auto tri = mesh::triangulate_annulus(outer, inner, size);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::reach_target;
  vs.target_surface = "inner";
  vs.inside_target = [](const VectorXd& x) { return x.lpNorm<1>() <= 0.3; };
  synth::ConstraintSystem cs(md, tri, vs);

  std::mt19937_64 rng(4);
  auto y = synth::init_random(cs, 2.0, 1.0, rng, 0.0);
  CHECK(cs.max_residual(y) < 1e-9);
  double tie = -1;
  for (int v = 0; v < tri.num_vertices(); ++v)
    if (cs.tied_to_boundary(v)) {
      if (tie < 0) tie = y.V[v];
      CHECK(y.V[v] == doctest::Approx(tie));
    }
  CHECK(tie == doctest::Approx(y.V.maxCoeff()));

  auto step = synth::iterate(cs, y, synth::Objective::maximize_b2());
  REQUIRE(step.solver_ok);
  CHECK(cs.max_residual(step.vars) < 1e-6);
  CHECK(step.vars.b2 >= y.b2 - 1e-9);
}

TEST_CASE("missing surface tag is a variant/mesh mismatch") {
  auto md = model::make_pendulum();
  auto tri = origin_box(1.0, 0.8);
  synth::VariantSpec vs;
  vs.kind = synth::VariantKind::reach_target;
  vs.target_surface = "inner";
  CHECK_THROWS_AS(synth::ConstraintSystem(md, tri, vs), std::invalid_argument);
}

TEST_CASE("refining loop stops once objectives are met") {
  auto md = model::make_double_integrator();
  synth::GeneratorSpec gen;
  gen.kind = synth::GeneratorSpec::Kind::box;
  gen.box = {vec2(-1, -1), vec2(1, 1)};
  gen.surfaces = {{"v", 0, 0.0}, {"h", 1, 0.0}};
  synth::SizeSpec sizes;
  sizes.base_rho = 0.6;
  sizes.base_gamma = 0.8;
  sizes.rho_min = 0.1;
  synth::RefiningOptions opts;
  opts.fixed.b2_target = 0.05;
  opts.fixed.max_iters = 12;
  opts.max_levels = 3;
  auto res = synth::run_refining(md, gen, synth::VariantKind::stabilize, sizes, opts);
  CHECK(res.objectives_met);
  CHECK(res.per_level.size() == 1);  // met on the first mesh
  REQUIRE(res.best_level == 0);
  CHECK(res.per_level[0].certified.b2 > 0.0);
}

TEST_CASE("refinement schedule shrinks rho geometrically") {
  synth::SizeSpec sizes;
  sizes.base_rho = 0.1;
  sizes.base_gamma = 0.8;
  sizes.regions.push_back(
      {[](const VectorXd& x) { return x.cwiseAbs().maxCoeff() > 0.9; }, 0.1, 0.5});
  CHECK(sizes.field_at_level(2).base() == doctest::Approx(0.8 * 0.8 * 0.1));
  CHECK(sizes.field_at_level(2).at(vec2(0.95, 0)) == doctest::Approx(0.5 * 0.5 * 0.1));
  CHECK(sizes.field_at_level(0).at(vec2(0.95, 0)) == doctest::Approx(0.1));
}
