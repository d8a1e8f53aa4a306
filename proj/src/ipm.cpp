#include "cpalyap/ipm.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>
#include <vector>

namespace cpalyap::ipm {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

struct PairSlot {
  int pi, qi;        // indices into the block's var list
  enum class Dest { ss, sg, gg } dest;
  int a, b;          // ss: csc slot of (a=row, b=unused) pair + mirror slot; sg/gg: matrix indices
  int mirror;        // second csc slot for ss (symmetric position), -1 when same
};

struct BlockGroup {
  std::vector<int> vars;                          // unique, sorted
  std::vector<std::vector<Block::Entry>> entries; // grouped by var (local index)
  std::vector<PairSlot> pairs;
};

double block_inf_norm(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// <A_p, T> for symmetric sparse A_p and a (possibly nonsymmetric) dense T
double sym_dot(const std::vector<Block::Entry>& es, const MatrixXd& T) {
  double acc = 0.0;
  for (const auto& e : es) {
    if (e.r == e.c) acc += e.coef * T(e.r, e.r);
    else acc += e.coef * (T(e.r, e.c) + T(e.c, e.r));
  }
  return acc;
}

void build_dense(const std::vector<Block::Entry>& es, MatrixXd& out) {
  out.setZero();
  for (const auto& e : es) {
    out(e.r, e.c) += e.coef;
    if (e.r != e.c) out(e.c, e.r) += e.coef;
  }
}

// largest step alpha with S + alpha*D psd, via eigenvalues of L^-1 D L^-T
double max_step(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& D) {
  const int d = static_cast<int>(D.rows());
  if (d == 1) {
    const double s = llt.matrixLLT()(0, 0);
    const double w = D(0, 0) / (s * s);
    return w >= 0 ? std::numeric_limits<double>::infinity() : -1.0 / w;
  }
  MatrixXd W = llt.matrixL().solve(D);
  W = llt.matrixL().solve(W.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (W + W.transpose()),
                                              Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  return lmin >= 0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

struct Solver {
  const Problem& P;
  const Options& opts;
  int nv, ne, nblocks;
  std::vector<BlockGroup> groups;

  // border split
  std::vector<int> var_kind;   // -1 sparse, else border index
  std::vector<int> sparse_idx; // var -> sparse index or -1
  std::vector<int> border_vars;
  int ns = 0, nb = 0;

  SpMat pattern;               // ns x ns, compressed
  std::vector<double> ss_vals;
  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;

  MatrixXd Msg, Mgg;           // ns x (nb), nb x nb
  MatrixXd Es, Eg;             // ne x ns, ne x nb

  // iterates
  VectorXd x, y;
  std::vector<MatrixXd> S, Z, Sinv, rp;
  std::vector<Eigen::LLT<MatrixXd>> llts;
  double sum_dims = 0;

  Solver(const Problem& p, const Options& o) : P(p), opts(o) {
    nv = P.nvars;
    ne = static_cast<int>(P.E.rows());
    nblocks = static_cast<int>(P.blocks.size());
  }

  void group_blocks() {
    groups.resize(nblocks);
    std::vector<int> appearance(nv, 0);
    for (int k = 0; k < nblocks; ++k) {
      std::map<int, std::vector<Block::Entry>> by_var;
      for (const auto& e : P.blocks[k].entries) by_var[e.var].push_back(e);
      auto& g = groups[k];
      for (auto& [v, es] : by_var) {
        g.vars.push_back(v);
        g.entries.push_back(std::move(es));
        appearance[v] += 1;
      }
      sum_dims += P.blocks[k].dim;
    }
    // variables touching many blocks go to the dense border
    const int threshold = std::max(32, nblocks / 16);
    std::vector<std::pair<int, int>> heavy;
    for (int v = 0; v < nv; ++v)
      if (appearance[v] > threshold) heavy.emplace_back(-appearance[v], v);
    std::sort(heavy.begin(), heavy.end());
    if (static_cast<int>(heavy.size()) > 48) heavy.resize(48);
    var_kind.assign(nv, -1);
    for (size_t b = 0; b < heavy.size(); ++b) {
      var_kind[heavy[b].second] = static_cast<int>(b);
      border_vars.push_back(heavy[b].second);
    }
    nb = static_cast<int>(border_vars.size());
    sparse_idx.assign(nv, -1);
    ns = 0;
    for (int v = 0; v < nv; ++v)
      if (var_kind[v] < 0) sparse_idx[v] = ns++;
  }

  void build_pattern() {
    std::vector<Eigen::Triplet<double>> trips;
    for (auto& g : groups) {
      const int v = static_cast<int>(g.vars.size());
      for (int pi = 0; pi < v; ++pi)
        for (int qi = pi; qi < v; ++qi) {
          const int p = g.vars[pi], q = g.vars[qi];
          const bool pb = var_kind[p] >= 0, qb = var_kind[q] >= 0;
          if (!pb && !qb) {
            trips.emplace_back(sparse_idx[p], sparse_idx[q], 1.0);
            if (p != q) trips.emplace_back(sparse_idx[q], sparse_idx[p], 1.0);
          }
        }
    }
    for (int i = 0; i < ns; ++i) trips.emplace_back(i, i, 0.0);  // keep diagonal present
    pattern.resize(ns, ns);
    pattern.setFromTriplets(trips.begin(), trips.end());
    pattern.makeCompressed();
    ss_vals.resize(pattern.nonZeros());

    auto slot_of = [&](int row, int col) {
      const int* outer = pattern.outerIndexPtr();
      const int* inner = pattern.innerIndexPtr();
      int lo = outer[col], hi = outer[col + 1];
      while (lo < hi) {
        int mid = (lo + hi) / 2;
        if (inner[mid] < row) lo = mid + 1;
        else hi = mid;
      }
      return lo;
    };

    for (auto& g : groups) {
      const int v = static_cast<int>(g.vars.size());
      for (int pi = 0; pi < v; ++pi)
        for (int qi = pi; qi < v; ++qi) {
          const int p = g.vars[pi], q = g.vars[qi];
          const bool pb = var_kind[p] >= 0, qb = var_kind[q] >= 0;
          PairSlot ps;
          ps.pi = pi;
          ps.qi = qi;
          if (!pb && !qb) {
            ps.dest = PairSlot::Dest::ss;
            ps.a = slot_of(sparse_idx[p], sparse_idx[q]);
            ps.mirror = (p == q) ? -1 : slot_of(sparse_idx[q], sparse_idx[p]);
          } else if (pb && qb) {
            ps.dest = PairSlot::Dest::gg;
            ps.a = var_kind[p];
            ps.b = var_kind[q];
            ps.mirror = -1;
          } else {
            ps.dest = PairSlot::Dest::sg;
            ps.a = pb ? sparse_idx[q] : sparse_idx[p];  // sparse row
            ps.b = pb ? var_kind[p] : var_kind[q];      // border col
            ps.mirror = -1;
          }
          g.pairs.push_back(ps);
        }
    }

    Msg.resize(ns, nb + ne);
    Mgg.resize(nb + ne, nb + ne);
    if (ne > 0) {
      Es.resize(ne, ns);
      Eg.resize(ne, nb);
      for (int r = 0; r < ne; ++r)
        for (int v = 0; v < nv; ++v) {
          if (var_kind[v] >= 0) Eg(r, var_kind[v]) = P.E(r, v);
          else Es(r, sparse_idx[v]) = P.E(r, v);
        }
    }
  }

  void init_iterates() {
    x = VectorXd::Zero(nv);
    if (ne > 0) {
      // least-squares equality start
      x = P.E.colPivHouseholderQr().solve(P.d);
      if (!x.allFinite()) x.setZero();
    }
    y = VectorXd::Zero(ne);
    S.resize(nblocks);
    Z.resize(nblocks);
    Sinv.resize(nblocks);
    rp.resize(nblocks);
    llts.assign(nblocks, Eigen::LLT<MatrixXd>());
    for (int k = 0; k < nblocks; ++k) {
      MatrixXd F = eval_block(k, x);
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(F, Eigen::EigenvaluesOnly);
      const double lmin = eig.eigenvalues().minCoeff();
      const double shift = std::max(0.0, -lmin) + 1.0;
      S[k] = F + shift * MatrixXd::Identity(F.rows(), F.cols());
      Z[k] = MatrixXd::Identity(F.rows(), F.cols());
    }
  }

  MatrixXd eval_block(int k, const VectorXd& xv) const {
    MatrixXd F = P.blocks[k].F0;
    for (const auto& e : P.blocks[k].entries) {
      F(e.r, e.c) += e.coef * xv[e.var];
      if (e.r != e.c) F(e.c, e.r) += e.coef * xv[e.var];
    }
    return F;
  }

  Result run() {
    group_blocks();
    build_pattern();
    init_iterates();

    Result res;
    res.Z.resize(nblocks);

    double norm_f0 = 1.0, norm_c = 1.0 + P.c.cwiseAbs().maxCoeff();
    for (const auto& b : P.blocks) norm_f0 = std::max(norm_f0, block_inf_norm(b.F0));
    const double norm_d = ne > 0 ? 1.0 + P.d.cwiseAbs().maxCoeff() : 1.0;

    std::vector<MatrixXd> dS(nblocks), dZ(nblocks), dSa(nblocks), dZa(nblocks), T(nblocks);
    VectorXd rd(nv);
    double prev_mu = std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int iter = 0; iter < opts.max_iters; ++iter) {
      // residuals
      double err_p = 0.0;
      for (int k = 0; k < nblocks; ++k) {
        rp[k] = eval_block(k, x) - S[k];
        err_p = std::max(err_p, block_inf_norm(rp[k]));
      }
      VectorXd re = ne > 0 ? VectorXd(P.d - P.E * x) : VectorXd();
      double err_e = ne > 0 ? re.cwiseAbs().maxCoeff() : 0.0;

      rd = P.c;
      for (int k = 0; k < nblocks; ++k) {
        auto& g = groups[k];
        for (size_t vi = 0; vi < g.vars.size(); ++vi)
          rd[g.vars[vi]] -= sym_dot(g.entries[vi], Z[k]);
      }
      if (ne > 0) rd -= P.E.transpose() * y;
      const double err_d = rd.cwiseAbs().maxCoeff();

      double mu = 0.0;
      for (int k = 0; k < nblocks; ++k) mu += S[k].cwiseProduct(Z[k]).sum();
      mu /= sum_dims;

      const double pobj = P.c.dot(x);
      double dobj = ne > 0 ? P.d.dot(y) : 0.0;
      for (int k = 0; k < nblocks; ++k) dobj -= P.blocks[k].F0.cwiseProduct(Z[k]).sum();
      const double gap = std::abs(pobj - dobj) / (1.0 + std::max(std::abs(pobj), std::abs(dobj)));

      if (opts.verbosity > 0)
        std::cerr << "ipm " << iter << " mu=" << mu << " rp=" << err_p << " rd=" << err_d
                  << " gap=" << gap << " pobj=" << pobj << " dobj=" << dobj << "\n";

      res.iterations = iter;
      res.primal_residual = std::max(err_p, err_e);
      res.dual_residual = err_d;
      res.pobj = pobj;
      res.dobj = dobj;

      const double tol = opts.tol;
      if (err_p / norm_f0 <= tol && err_e / norm_d <= tol && err_d / norm_c <= tol && gap <= tol) {
        res.status = Status::optimal;
        res.x = x;
        res.y = y;
        for (int k = 0; k < nblocks; ++k) res.Z[k] = Z[k];
        return res;
      }

      // divergence heuristics
      if (dobj > 1e12 * norm_f0 || x.cwiseAbs().maxCoeff() > 1e13) break;
      if (mu > prev_mu * 0.9999 && err_p / norm_f0 > tol) ++stall;
      else if (mu > prev_mu * 0.9999) ++stall;
      else stall = 0;
      if (stall >= 10) break;
      prev_mu = mu;

      // factor the Schur complement
      std::fill(ss_vals.begin(), ss_vals.end(), 0.0);
      Msg.setZero();
      Mgg.setZero();
      bool chol_ok = true;
      MatrixXd Ap, Up, ZA;
      for (int k = 0; k < nblocks; ++k) {
        const int d = P.blocks[k].dim;
        llts[k].compute(S[k]);
        if (llts[k].info() != Eigen::Success) {
          // jitter and retry once
          llts[k].compute(S[k] + 1e-12 * block_inf_norm(S[k]) * MatrixXd::Identity(d, d));
          if (llts[k].info() != Eigen::Success) {
            chol_ok = false;
            break;
          }
        }
        Sinv[k] = llts[k].solve(MatrixXd::Identity(d, d));

        auto& g = groups[k];
        const int v = static_cast<int>(g.vars.size());
        std::vector<MatrixXd> U(v);
        Ap.resize(d, d);
        for (int pi = 0; pi < v; ++pi) {
          build_dense(g.entries[pi], Ap);
          U[pi] = Sinv[k] * Ap * Z[k];
        }
        for (const auto& ps : g.pairs) {
          const double val = sym_dot(g.entries[ps.qi], U[ps.pi]);
          switch (ps.dest) {
            case PairSlot::Dest::ss:
              ss_vals[ps.a] += val;
              if (ps.mirror >= 0) ss_vals[ps.mirror] += val;
              break;
            case PairSlot::Dest::sg:
              Msg(ps.a, ps.b) += val;
              break;
            case PairSlot::Dest::gg:
              Mgg(ps.a, ps.b) += val;
              if (ps.a != ps.b) Mgg(ps.b, ps.a) += val;
              break;
          }
        }
      }
      if (!chol_ok) break;

      // border layout: [border vars | equality multipliers]
      if (ne > 0) {
        Msg.rightCols(ne) = Es.transpose();
        Mgg.bottomLeftCorner(ne, nb) = Eg;
        Mgg.topRightCorner(nb, ne) = Eg.transpose();
        Mgg.bottomRightCorner(ne, ne).setZero();
      }

      SpMat Mss = pattern;
      std::copy(ss_vals.begin(), ss_vals.end(), Mss.valuePtr());
      // tiny diagonal regularization
      for (int i = 0; i < ns; ++i) Mss.coeffRef(i, i) += 1e-12 * (1.0 + std::abs(Mss.coeff(i, i)));
      if (!analyzed) {
        ldlt.analyzePattern(Mss);
        analyzed = true;
      }
      ldlt.factorize(Mss);
      if (ldlt.info() != Eigen::Success) break;

      MatrixXd W;  // Mss^-1 [Msg Es^T]
      Eigen::FullPivLU<MatrixXd> border_lu;
      if (nb + ne > 0) {
        W = ldlt.solve(Msg);
        MatrixXd Kb = Mgg - Msg.transpose() * W;
        for (int i = 0; i < nb; ++i) Kb(i, i) += 1e-12 * (1.0 + std::abs(Kb(i, i)));
        border_lu.compute(Kb);
      }

      auto solve_newton = [&](const VectorXd& h, const VectorXd& rev, VectorXd& dx, VectorXd& dy) {
        // split h into sparse and border parts
        VectorXd hs(ns), hb(nb + ne);
        for (int v2 = 0; v2 < nv; ++v2) {
          if (var_kind[v2] >= 0) hb[var_kind[v2]] = h[v2];
          else hs[sparse_idx[v2]] = h[v2];
        }
        if (ne > 0) hb.tail(ne) = rev;

        auto block_solve = [&](const VectorXd& rs, const VectorXd& rb, VectorXd& xs, VectorXd& w) {
          if (nb + ne > 0) {
            VectorXd tmp = ldlt.solve(rs);
            w = border_lu.solve(rb - Msg.transpose() * tmp);
            xs = ldlt.solve(rs - Msg * w);
          } else {
            xs = ldlt.solve(rs);
            w.resize(0);
          }
        };
        VectorXd xs, w;
        block_solve(hs, hb, xs, w);
        // iterative refinement: the factors lose digits once the
        // complementarity ratios get extreme
        for (int round = 0; round < 2; ++round) {
          VectorXd rs = hs - (Mss * xs);
          VectorXd rb;
          if (nb + ne > 0) {
            rs -= Msg * w;
            rb = hb - Msg.transpose() * xs - Mgg * w;
          }
          VectorXd cxs, cw;
          block_solve(rs, rb, cxs, cw);
          xs += cxs;
          if (nb + ne > 0) w += cw;
        }

        dx.resize(nv);
        for (int v2 = 0; v2 < nv; ++v2)
          dx[v2] = var_kind[v2] >= 0 ? w[var_kind[v2]] : xs[sparse_idx[v2]];
        if (ne > 0) dy = -w.tail(ne);
        else dy.resize(0);
      };

      auto compute_T = [&](double sigma_mu, const std::vector<MatrixXd>* corr) {
        for (int k = 0; k < nblocks; ++k) {
          T[k] = -Z[k] - Sinv[k] * (rp[k] * Z[k]);
          if (sigma_mu > 0) T[k] += sigma_mu * Sinv[k];
          if (corr) T[k] -= Sinv[k] * (*corr)[k];
        }
      };

      auto assemble_h = [&]() {
        VectorXd h = -rd;
        for (int k = 0; k < nblocks; ++k) {
          auto& g = groups[k];
          for (size_t vi = 0; vi < g.vars.size(); ++vi)
            h[g.vars[vi]] += sym_dot(g.entries[vi], T[k]);
        }
        return h;
      };

      auto expand_dSZ = [&](const VectorXd& dx, std::vector<MatrixXd>& dS_out,
                            std::vector<MatrixXd>& dZ_out) {
        MatrixXd AdX;
        for (int k = 0; k < nblocks; ++k) {
          const int d = P.blocks[k].dim;
          AdX.setZero(d, d);
          auto& g = groups[k];
          for (size_t vi = 0; vi < g.vars.size(); ++vi)
            for (const auto& e : g.entries[vi]) {
              AdX(e.r, e.c) += e.coef * dx[g.vars[vi]];
              if (e.r != e.c) AdX(e.c, e.r) += e.coef * dx[g.vars[vi]];
            }
          dS_out[k] = AdX + rp[k];
          MatrixXd dz = T[k] - Sinv[k] * (AdX * Z[k]);
          dZ_out[k] = 0.5 * (dz + dz.transpose());
        }
      };

      VectorXd re_v = ne > 0 ? re : VectorXd();

      // predictor
      compute_T(0.0, nullptr);
      VectorXd dx_a, dy_a;
      solve_newton(assemble_h(), re_v, dx_a, dy_a);
      expand_dSZ(dx_a, dSa, dZa);

      double ap = 1.0, ad = 1.0;
      for (int k = 0; k < nblocks; ++k) {
        ap = std::min(ap, 0.99 * max_step(llts[k], dSa[k]));
        Eigen::LLT<MatrixXd> lz(Z[k]);
        if (lz.info() == Eigen::Success) ad = std::min(ad, 0.99 * max_step(lz, dZa[k]));
      }
      double mu_aff = 0.0;
      for (int k = 0; k < nblocks; ++k)
        mu_aff += (S[k] + ap * dSa[k]).cwiseProduct(Z[k] + ad * dZa[k]).sum();
      mu_aff = std::max(mu_aff / sum_dims, 0.0);
      double sigma = std::clamp(std::pow(mu_aff / std::max(mu, 1e-300), 3.0), 1e-8, 1.0);
      if (opts.verbosity > 1)
        std::cerr << "    aff: ap=" << ap << " ad=" << ad << " mu_aff=" << mu_aff << " sigma=" << sigma << "\n";

      // corrector
      std::vector<MatrixXd> corr(nblocks);
      for (int k = 0; k < nblocks; ++k) corr[k] = dSa[k] * dZa[k];
      compute_T(sigma * mu, &corr);
      VectorXd dx, dy;
      solve_newton(assemble_h(), re_v, dx, dy);
      expand_dSZ(dx, dS, dZ);

      ap = 1.0;
      ad = 1.0;
      for (int k = 0; k < nblocks; ++k) {
        ap = std::min(ap, 0.99 * max_step(llts[k], dS[k]));
        Eigen::LLT<MatrixXd> lz(Z[k]);
        if (lz.info() == Eigen::Success) ad = std::min(ad, 0.99 * max_step(lz, dZ[k]));
      }
      if (!std::isfinite(ap) || !std::isfinite(ad)) {
        ap = std::min(ap, 1.0);
        ad = std::min(ad, 1.0);
      }
      ap = std::min(ap, 1.0);
      ad = std::min(ad, 1.0);
      if (opts.verbosity > 1) std::cerr << "    corr: ap=" << ap << " ad=" << ad << "\n";
      if (ap < 1e-8 && ad < 1e-8) break;

      x += ap * dx;
      if (ne > 0) y += ad * dy;
      for (int k = 0; k < nblocks; ++k) {
        S[k] += ap * dS[k];
        S[k] = 0.5 * (S[k] + S[k].transpose()).eval();
        Z[k] += ad * dZ[k];
        Z[k] = 0.5 * (Z[k] + Z[k].transpose()).eval();
      }
    }

    // did not converge
    res.status = Status::numerical_failure;
    res.x = x;
    res.y = y;
    for (int k = 0; k < nblocks; ++k) res.Z[k] = Z[k];
    return res;
  }
};

// feasibility program: min s  s.t.  S_k(x) + s I >= 0, s >= -1
Problem feasibility_problem(const Problem& P) {
  Problem Q;
  Q.nvars = P.nvars + 1;
  const int sv = P.nvars;
  Q.c = VectorXd::Zero(Q.nvars);
  Q.c[sv] = 1.0;
  Q.blocks = P.blocks;
  for (auto& b : Q.blocks)
    for (int r = 0; r < b.dim; ++r) b.entries.push_back({sv, r, r, 1.0});
  Block bound;
  bound.dim = 1;
  bound.F0 = MatrixXd::Constant(1, 1, 1.0);
  bound.entries.push_back({sv, 0, 0, 1.0});
  Q.blocks.push_back(bound);
  if (P.E.rows() > 0) {
    Q.E = MatrixXd::Zero(P.E.rows(), Q.nvars);
    Q.E.leftCols(P.nvars) = P.E;
    Q.d = P.d;
  }
  return Q;
}

}  // namespace

Result solve(const Problem& problem, const Options& opts) {
  // per-block scaling to unit magnitude
  Problem scaled = problem;
  std::vector<double> block_scale(scaled.blocks.size(), 1.0);
  for (size_t k = 0; k < scaled.blocks.size(); ++k) {
    auto& b = scaled.blocks[k];
    double s = block_inf_norm(b.F0);
    for (const auto& e : b.entries) s = std::max(s, std::abs(e.coef));
    s = std::max(s, 1e-8);
    block_scale[k] = s;
    b.F0 /= s;
    for (auto& e : b.entries) e.coef /= s;
  }

  // equality consistency first
  if (scaled.E.rows() > 0) {
    VectorXd xls = scaled.E.colPivHouseholderQr().solve(scaled.d);
    if ((scaled.E * xls - scaled.d).cwiseAbs().maxCoeff() > 1e-7 * (1.0 + scaled.d.cwiseAbs().maxCoeff())) {
      Result res;
      res.status = Status::infeasible;
      return res;
    }
  }

  Solver solver(scaled, opts);
  Result res = solver.run();
  if (res.status == Status::optimal) {
    for (size_t k = 0; k < res.Z.size(); ++k) res.Z[k] /= block_scale[k];
    return res;
  }

  if (opts.classify_infeasibility) {
    Options sub = opts;
    sub.classify_infeasibility = false;
    sub.max_iters = std::max(opts.max_iters, 100);
    Result feas = solve(feasibility_problem(scaled), sub);
    if (feas.status == Status::optimal && feas.x[scaled.nvars] > 1e-7) {
      res.status = Status::infeasible;
      return res;
    }
  }
  res.status = Status::numerical_failure;
  return res;
}

}  // namespace cpalyap::ipm
