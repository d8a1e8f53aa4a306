#include "cpalyap/conic.hpp"

#include "cpalyap/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace cpalyap::conic {

AffineExpr& AffineExpr::operator+=(const AffineExpr& o) {
  constant += o.constant;
  terms.insert(terms.end(), o.terms.begin(), o.terms.end());
  return *this;
}

AffineExpr& AffineExpr::scale(double s) {
  constant *= s;
  for (auto& [v, c] : terms) c *= s;
  return *this;
}

double AffineExpr::eval(const VectorXd& x) const {
  double acc = constant;
  for (const auto& [v, c] : terms) acc += c * x[v];
  return acc;
}

void AffineExpr::compress() {
  std::sort(terms.begin(), terms.end());
  std::vector<std::pair<int, double>> out;
  for (const auto& [v, c] : terms) {
    if (!out.empty() && out.back().first == v) out.back().second += c;
    else out.emplace_back(v, c);
  }
  out.erase(std::remove_if(out.begin(), out.end(), [](const auto& t) { return t.second == 0.0; }),
            out.end());
  terms = std::move(out);
}

int ConicProgram::new_variable(std::string name) {
  names_.push_back(std::move(name));
  return static_cast<int>(names_.size()) - 1;
}

void ConicProgram::minimize(AffineExpr objective) {
  objective_ = std::move(objective);
  objective_.compress();
}

int ConicProgram::add_le(AffineExpr e, double rhs) {
  e.compress();
  lin_.push_back({std::move(e), rhs});
  return static_cast<int>(lin_.size()) - 1;
}

void ConicProgram::add_eq(AffineExpr e, double rhs) {
  e.compress();
  eq_.push_back({std::move(e), rhs});
}

void ConicProgram::fix(int var, double value) {
  AffineExpr e;
  e.add(var, 1.0);
  add_eq(std::move(e), value);
}

int ConicProgram::add_psd_le_zero(int dim) {
  BlockSpec b;
  b.dim = dim;
  b.entries.resize(dim);
  for (int r = 0; r < dim; ++r) b.entries[r].resize(r + 1);
  blocks_.push_back(std::move(b));
  return static_cast<int>(blocks_.size()) - 1;
}

void ConicProgram::set_entry(int block, int r, int c, AffineExpr e) {
  if (r < c) std::swap(r, c);
  e.compress();
  blocks_[block].entries[r][c] = std::move(e);
}

namespace {

// substitute known variable expressions into e until only free vars remain
AffineExpr expand(const AffineExpr& e, const std::vector<std::optional<AffineExpr>>& subs) {
  AffineExpr out;
  out.constant = e.constant;
  std::vector<std::pair<int, double>> work(e.terms);
  int depth = 0;
  while (!work.empty()) {
    if (++depth > 1000000) throw std::runtime_error("conic: substitution cycle");
    auto [v, c] = work.back();
    work.pop_back();
    if (subs[v]) {
      out.constant += c * subs[v]->constant;
      for (const auto& [v2, c2] : subs[v]->terms) work.emplace_back(v2, c * c2);
    } else {
      out.add(v, c);
    }
  }
  out.compress();
  return out;
}

}  // namespace

SolveReport ConicProgram::solve(const SolveOptions& opts) const {
  const int nv = num_variables();
  SolveReport report;

  // eliminate equalities by Gaussian substitution, pivoting on the largest
  // coefficient; rows are expanded through earlier pivots as we go
  std::vector<std::optional<AffineExpr>> subs(nv);
  bool inconsistent = false;
  for (const auto& row : eq_) {
    AffineExpr e = expand(row.e, subs);
    const double rhs = row.rhs;
    if (e.terms.empty()) {
      if (std::abs(e.constant - rhs) > 1e-9 * (1.0 + std::abs(rhs))) inconsistent = true;
      continue;
    }
    size_t piv = 0;
    for (size_t t = 1; t < e.terms.size(); ++t)
      if (std::abs(e.terms[t].second) > std::abs(e.terms[piv].second)) piv = t;
    const auto [pvar, pcoef] = e.terms[piv];
    AffineExpr rhs_expr;
    rhs_expr.constant = (rhs - e.constant) / pcoef;
    for (size_t t = 0; t < e.terms.size(); ++t)
      if (t != piv) rhs_expr.add(e.terms[t].first, -e.terms[t].second / pcoef);
    subs[pvar] = std::move(rhs_expr);
  }
  if (inconsistent) {
    report.status = SolveStatus::infeasible;
    return report;
  }
  // final transitive expansion
  for (int v = 0; v < nv; ++v)
    if (subs[v]) subs[v] = expand(*subs[v], subs);

  // free variable remap
  std::vector<int> remap(nv, -1);
  int nfree = 0;
  for (int v = 0; v < nv; ++v)
    if (!subs[v]) remap[v] = nfree++;

  auto to_free = [&](const AffineExpr& e) {
    AffineExpr out = expand(e, subs);
    for (auto& [v, c] : out.terms) v = remap[v];
    return out;
  };

  ipm::Problem prob;
  prob.nvars = nfree;
  prob.c = VectorXd::Zero(nfree);
  AffineExpr obj = to_free(objective_);
  for (const auto& [v, c] : obj.terms) prob.c[v] += c;

  // rows and blocks that collapse to constants after substitution must not
  // reach the cone solver: a "0 >= 0" block has no interior and kills the
  // central path
  std::vector<int> lin_block(lin_.size(), -1);
  for (size_t r = 0; r < lin_.size(); ++r) {
    AffineExpr e = to_free(lin_[r].e);
    if (e.terms.empty()) {
      if (e.constant > lin_[r].rhs + 1e-9 * (1.0 + std::abs(lin_[r].rhs))) {
        report.status = SolveStatus::infeasible;
        return report;
      }
      continue;
    }
    ipm::Block b;
    b.dim = 1;
    b.F0 = MatrixXd::Constant(1, 1, lin_[r].rhs - e.constant);
    for (const auto& [v, c] : e.terms) b.entries.push_back({v, 0, 0, -c});
    lin_block[r] = static_cast<int>(prob.blocks.size());
    prob.blocks.push_back(std::move(b));
  }
  std::vector<int> psd_block(blocks_.size(), -1);
  for (size_t k = 0; k < blocks_.size(); ++k) {
    const auto& spec = blocks_[k];
    ipm::Block b;
    b.dim = spec.dim;
    b.F0 = MatrixXd::Zero(spec.dim, spec.dim);
    for (int r = 0; r < spec.dim; ++r)
      for (int c = 0; c <= r; ++c) {
        AffineExpr e = to_free(spec.entries[r][c]);
        b.F0(r, c) = -e.constant;
        b.F0(c, r) = -e.constant;
        for (const auto& [v, cf] : e.terms) b.entries.push_back({v, r, c, -cf});
      }
    if (b.entries.empty()) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(b.F0, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-9) {
        report.status = SolveStatus::infeasible;
        return report;
      }
      continue;
    }
    psd_block[k] = static_cast<int>(prob.blocks.size());
    prob.blocks.push_back(std::move(b));
  }
  if (prob.blocks.empty()) {
    // keep the cone nonempty
    ipm::Block b;
    b.dim = 1;
    b.F0 = MatrixXd::Constant(1, 1, 1.0);
    prob.blocks.push_back(std::move(b));
  }

  ipm::Options iopts;
  iopts.tol = opts.tol;
  iopts.max_iters = opts.max_iters;
  iopts.verbosity = opts.verbosity;
  iopts.classify_infeasibility = !opts.assume_feasible;
  ipm::Result res = ipm::solve(prob, iopts);

  switch (res.status) {
    case ipm::Status::optimal: report.status = SolveStatus::optimal; break;
    case ipm::Status::infeasible: report.status = SolveStatus::infeasible; break;
    default: report.status = SolveStatus::numerical_failure; break;
  }
  report.iterations = res.iterations;
  if (report.status != SolveStatus::optimal) return report;

  // reconstruct all declared variables
  report.values = VectorXd::Zero(nv);
  for (int v = 0; v < nv; ++v)
    if (remap[v] >= 0) report.values[v] = res.x[remap[v]];
  for (int v = 0; v < nv; ++v)
    if (subs[v]) report.values[v] = subs[v]->eval(report.values);
  report.objective = objective_.eval(report.values);

  report.lin_duals.assign(lin_.size(), 0.0);
  for (size_t r = 0; r < lin_.size(); ++r)
    if (lin_block[r] >= 0) report.lin_duals[r] = res.Z[lin_block[r]](0, 0);
  report.psd_duals.resize(blocks_.size());
  for (size_t k = 0; k < blocks_.size(); ++k)
    if (psd_block[k] >= 0) report.psd_duals[k] = res.Z[psd_block[k]];

  // residuals against the original program statement
  double prim = 0.0;
  for (const auto& row : lin_) prim = std::max(prim, row.e.eval(report.values) - row.rhs);
  for (const auto& row : eq_) prim = std::max(prim, std::abs(row.e.eval(report.values) - row.rhs));
  for (const auto& spec : blocks_) {
    MatrixXd M(spec.dim, spec.dim);
    for (int r = 0; r < spec.dim; ++r)
      for (int c = 0; c <= r; ++c) {
        const double val = spec.entries[r][c].eval(report.values);
        M(r, c) = val;
        M(c, r) = val;
      }
    if (spec.dim == 1) prim = std::max(prim, M(0, 0));
    else {
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(M, Eigen::EigenvaluesOnly);
      prim = std::max(prim, eig.eigenvalues().maxCoeff());
    }
  }
  report.max_primal_residual = std::max(prim, 0.0);
  report.max_dual_residual = res.dual_residual;
  return report;
}

void ConicProgram::dump(std::ostream& os) const {
  os.precision(17);
  auto put_expr = [&os](const AffineExpr& e) {
    os << e.constant << " " << e.terms.size();
    for (const auto& [v, c] : e.terms) os << " " << v << " " << c;
    os << "\n";
  };
  os << "cpalyap-conic-v1\n";
  os << "vars " << num_variables() << "\n";
  os << "obj ";
  put_expr(objective_);
  for (const auto& row : lin_) {
    os << "le " << row.rhs << " ";
    put_expr(row.e);
  }
  for (const auto& row : eq_) {
    os << "eq " << row.rhs << " ";
    put_expr(row.e);
  }
  for (const auto& b : blocks_) {
    os << "block " << b.dim << "\n";
    for (int r = 0; r < b.dim; ++r)
      for (int c = 0; c <= r; ++c) {
        os << "e " << r << " " << c << " ";
        put_expr(b.entries[r][c]);
      }
  }
  os << "end\n";
}

ConicProgram ConicProgram::parse(std::istream& is) {
  ConicProgram prog;
  std::string tok;
  if (!(is >> tok) || tok != "cpalyap-conic-v1") throw std::runtime_error("conic parse: bad header");
  auto get_expr = [&is]() {
    AffineExpr e;
    size_t n;
    is >> e.constant >> n;
    for (size_t t = 0; t < n; ++t) {
      int v;
      double c;
      is >> v >> c;
      e.add(v, c);
    }
    return e;
  };
  int cur_block = -1;
  while (is >> tok) {
    if (tok == "vars") {
      int n;
      is >> n;
      for (int v = 0; v < n; ++v) prog.new_variable();
    } else if (tok == "obj") {
      prog.minimize(get_expr());
    } else if (tok == "le") {
      double rhs;
      is >> rhs;
      prog.add_le(get_expr(), rhs);
    } else if (tok == "eq") {
      double rhs;
      is >> rhs;
      prog.add_eq(get_expr(), rhs);
    } else if (tok == "block") {
      int dim;
      is >> dim;
      cur_block = prog.add_psd_le_zero(dim);
    } else if (tok == "e") {
      int r, c;
      is >> r >> c;
      prog.set_entry(cur_block, r, c, get_expr());
    } else if (tok == "end") {
      break;
    } else {
      throw std::runtime_error("conic parse: unknown token " + tok);
    }
  }
  return prog;
}

VectorXd solve_qp(const MatrixXd& Hmat, const VectorXd& hvec, const MatrixXd& A,
                  const VectorXd& b) {
  const int m = static_cast<int>(Hmat.rows());
  Eigen::LLT<MatrixXd> llt(Hmat);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("solve_qp: Hmat must be positive definite");
  const MatrixXd L = llt.matrixL();

  ConicProgram prog;
  std::vector<int> u(m);
  for (int k = 0; k < m; ++k) u[k] = prog.new_variable();
  const int t = prog.new_variable();

  AffineExpr obj;
  obj.add(t, 1.0);
  for (int k = 0; k < m; ++k) obj.add(u[k], hvec[k]);
  prog.minimize(obj);

  // [[-t, (L'u)'], [L'u, -I]] <= 0  encodes  t >= u'Hu
  const int blk = prog.add_psd_le_zero(m + 1);
  {
    AffineExpr e;
    e.add(t, -1.0);
    prog.set_entry(blk, 0, 0, std::move(e));
  }
  for (int r = 0; r < m; ++r) {
    AffineExpr e;
    for (int k = 0; k < m; ++k) e.add(u[k], L(k, r));  // (L'u)_r
    prog.set_entry(blk, r + 1, 0, std::move(e));
    prog.set_entry(blk, r + 1, r + 1, AffineExpr(-1.0));
  }
  for (int r = 0; r < A.rows(); ++r) {
    AffineExpr e;
    for (int k = 0; k < m; ++k) e.add(u[k], A(r, k));
    prog.add_le(std::move(e), b[r]);
  }

  auto rep = prog.solve();
  if (rep.status == SolveStatus::infeasible) throw QpInfeasible("solve_qp: infeasible region");
  if (rep.status != SolveStatus::optimal) throw std::runtime_error("solve_qp: solver failure");
  VectorXd out(m);
  for (int k = 0; k < m; ++k) out[k] = rep.values[u[k]];

  // active-set Newton polish: the interior-point answer identifies the active
  // rows; the equality-constrained KKT system then gives machine precision
  const double scale = 1.0 + b.cwiseAbs().maxCoeff();
  std::vector<int> active;
  for (int r = 0; r < A.rows(); ++r)
    if (b[r] - A.row(r).dot(out) < 1e-6 * scale) active.push_back(r);
  if (static_cast<int>(active.size()) <= m) {
    const int na = static_cast<int>(active.size());
    MatrixXd K(m + na, m + na);
    K.setZero();
    K.topLeftCorner(m, m) = 2.0 * Hmat;
    VectorXd rhs(m + na);
    rhs.head(m) = -hvec;
    for (int r = 0; r < na; ++r) {
      K.block(m + r, 0, 1, m) = A.row(active[r]);
      K.block(0, m + r, m, 1) = A.row(active[r]).transpose();
      rhs[m + r] = b[active[r]];
    }
    Eigen::FullPivLU<MatrixXd> lu(K);
    if (lu.isInvertible()) {
      VectorXd sol = lu.solve(rhs);
      VectorXd cand = sol.head(m);
      VectorXd lambda = sol.tail(na);
      const bool feasible = A.rows() == 0 || (A * cand - b).maxCoeff() <= 1e-9 * scale;
      if (feasible && (na == 0 || lambda.minCoeff() >= -1e-9)) out = cand;
    }
  }
  return out;
}

}  // namespace cpalyap::conic
