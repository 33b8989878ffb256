#pragma once

// Operator-splitting (ADMM) solver for convex quadratic programs
//
//   minimize    1/2 x'Px + q'x + constant
//   subject to  l <= Ax <= u,   lo <= x <= hi
//
// The variable box is stacked under A as identity rows, the stacked matrix is
// equilibrated (Ruiz), and the iteration solves one quasi-definite KKT system
// per step. A final polishing pass solves the equality-constrained QP on the
// guessed active set, which recovers high-accuracy solutions on badly scaled
// inputs (e.g. exact-penalty slack weights).

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SparseCholesky>

#include "mgd/core.hpp"

namespace mgd::convex {

struct QuadraticProgram {
  SparseMatrix P;  // n x n, symmetric, both triangles stored
  Vector q;
  SparseMatrix A;  // m x n
  Vector l, u;
  Vector lo, hi;
  double constant = 0.0;

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_rows() const { return static_cast<int>(A.rows()); }

  double objective(const Vector& x) const { return 0.5 * x.dot(P * x) + q.dot(x) + constant; }

  void validate() const {
    const auto n = q.size();
    require(P.rows() == n && P.cols() == n, "QP: P must be n x n");
    require(A.cols() == n || A.rows() == 0, "QP: A must have n columns");
    require(l.size() == A.rows() && u.size() == A.rows(), "QP: l/u size must match rows of A");
    require(lo.size() == n && hi.size() == n, "QP: variable box size must match n");
    for (Eigen::Index i = 0; i < l.size(); ++i) require(l[i] <= u[i], "QP: l > u in row " + std::to_string(i));
    for (Eigen::Index i = 0; i < n; ++i) require(lo[i] <= hi[i], "QP: lo > hi for variable " + std::to_string(i));
    const SparseMatrix asym = P - SparseMatrix(P.transpose());
    double max_asym = 0.0;
    for (int k = 0; k < asym.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(asym, k); it; ++it) max_asym = std::max(max_asym, std::abs(it.value()));
    require(max_asym <= 1e-10, "QP: P is not symmetric");
  }
};

/// Incremental builder over triplets; keeps call sites readable.
class QpBuilder {
 public:
  explicit QpBuilder(int n) : n_(n), q_(Vector::Zero(n)), lo_(Vector::Constant(n, -kInf)), hi_(Vector::Constant(n, kInf)) {}

  int num_vars() const { return n_; }
  int num_rows() const { return static_cast<int>(l_.size()); }

  /// Adds coefficient to the objective's 1/2 x'Px; symmetric entries are mirrored.
  void add_quad(int i, int j, double v) {
    if (v == 0.0) return;
    if (i == j) {
      p_.emplace_back(i, i, v);
    } else {
      p_.emplace_back(i, j, v);
      p_.emplace_back(j, i, v);
    }
  }
  /// Adds w * (sum_k c_k x_k + offset)^2 to the objective.
  void add_square(const std::vector<std::pair<int, double>>& terms, double offset, double w) {
    if (w == 0.0) return;
    for (const auto& [i, ci] : terms) {
      for (const auto& [j, cj] : terms) p_.emplace_back(i, j, 2.0 * w * ci * cj);
      q_[i] += 2.0 * w * ci * offset;
    }
    constant_ += w * offset * offset;
  }
  void add_linear(int i, double v) { q_[i] += v; }
  void add_constant(double v) { constant_ += v; }
  void set_bounds(int i, double lo, double hi) {
    lo_[i] = lo;
    hi_[i] = hi;
  }
  int add_row(const std::vector<std::pair<int, double>>& terms, double l, double u) {
    const int r = num_rows();
    for (const auto& [j, v] : terms)
      if (v != 0.0) a_.emplace_back(r, j, v);
    l_.push_back(l);
    u_.push_back(u);
    return r;
  }

  QuadraticProgram build() const {
    QuadraticProgram qp;
    qp.P.resize(n_, n_);
    qp.P.setFromTriplets(p_.begin(), p_.end());
    qp.q = q_;
    qp.A.resize(num_rows(), n_);
    qp.A.setFromTriplets(a_.begin(), a_.end());
    qp.l = Eigen::Map<const Vector>(l_.data(), static_cast<Eigen::Index>(l_.size()));
    qp.u = Eigen::Map<const Vector>(u_.data(), static_cast<Eigen::Index>(u_.size()));
    qp.lo = lo_;
    qp.hi = hi_;
    qp.constant = constant_;
    return qp;
  }

 private:
  int n_;
  std::vector<Triplet> p_, a_;
  Vector q_;
  std::vector<double> l_, u_;
  Vector lo_, hi_;
  double constant_ = 0.0;
};

enum class SolveStatus { Optimal, MaxIterations, InfeasibleDetected };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::InfeasibleDetected: return "infeasible-detected";
  }
  return "unknown";
}

struct SolveReport {
  Vector x;
  Vector y;      // multipliers of l <= Ax <= u (negative: lower active, positive: upper active)
  Vector y_box;  // multipliers of the variable box, same sign convention
  double objective = 0.0;
  // Residuals normalized as r / (1 + scale); optimal implies both <= tol.
  double primal_residual = kInf;
  double dual_residual = kInf;
  int iterations = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  bool polished = false;
  std::string detail;

  bool ok() const { return status == SolveStatus::Optimal; }
};

enum class QpMethod {
  Admm,          // operator splitting; the default
  InteriorPoint  // primal-dual path following; falls back to ADMM if it stalls
};

struct QpSettings {
  QpMethod method = QpMethod::Admm;
  double tol = 1e-6;
  int max_iter = 20000;
  double alpha = 1.6;  // over-relaxation
  double rho = 0.1;
  double sigma = 1e-6;
  bool adaptive_rho = true;
  int scaling_iters = 10;
  int check_every = 10;
  bool polish = true;
  bool presolve = true;
  double infeasibility_tol = 1e-7;
};

/// Elementwise clamp onto [lo, hi].
inline Vector project_box(const Vector& x, const Vector& lo, const Vector& hi) {
  require(x.size() == lo.size() && x.size() == hi.size(), "project_box: size mismatch");
  for (Eigen::Index i = 0; i < lo.size(); ++i) require(lo[i] <= hi[i], "project_box: lo > hi");
  return x.cwiseMax(lo).cwiseMin(hi);
}

namespace detail {

inline double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }
inline bool is_finite_bound(double b) { return std::isfinite(b) && std::abs(b) < 1e20; }

/// A primal-dual point in the original coordinates. z holds the projected
/// row values the iterate is tracking; y lies in the normal cone at z.
struct Candidate {
  Vector x, z, z_box, y, y_box;
};

/// Residuals normalized per component by the magnitude of the terms that
/// make it up, so large entries in one block cannot hide errors in another.
struct Residuals {
  double prim = 0, dual = 0;
  double prim_rel = 0, dual_rel = 0;
  double prim_norm() const { return prim_rel; }
  double dual_norm() const { return dual_rel; }
};

inline Residuals residuals(const QuadraticProgram& qp, const Candidate& c) {
  Residuals r;
  const Vector ax = qp.A * c.x;
  const Vector px = qp.P * c.x;
  const Vector aty = qp.A.transpose() * c.y;
  auto acc = [](double& abs_max, double& rel_max, double v, double scale) {
    abs_max = std::max(abs_max, v);
    rel_max = std::max(rel_max, v / (1.0 + scale));
  };
  for (Eigen::Index i = 0; i < ax.size(); ++i)
    acc(r.prim, r.prim_rel, std::abs(ax[i] - c.z[i]), std::max(std::abs(ax[i]), std::abs(c.z[i])));
  for (Eigen::Index i = 0; i < c.x.size(); ++i)
    acc(r.prim, r.prim_rel, std::abs(c.x[i] - c.z_box[i]), std::max(std::abs(c.x[i]), std::abs(c.z_box[i])));
  for (Eigen::Index j = 0; j < c.x.size(); ++j) {
    const double v = std::abs(px[j] + qp.q[j] + aty[j] + c.y_box[j]);
    acc(r.dual, r.dual_rel, v, std::max({std::abs(px[j]), std::abs(qp.q[j]), std::abs(aty[j]), std::abs(c.y_box[j])}));
  }
  return r;
}

/// Rows of A that survive presolve stacked over identity rows for every
/// variable with a finite bound; infinite or huge bounds become +-inf.
struct Stacked {
  std::vector<int> keep_rows;  // original row per kept general row
  std::vector<int> box_rows;   // variable per box row
  int mg = 0;                  // kept general rows (they come first)
  SparseMatrix A;              // (mg + box rows) x n
  Vector l, u;

  int rows() const { return static_cast<int>(l.size()); }
};

inline Stacked stack_constraints(const QuadraticProgram& qp, bool presolve) {
  const int n = qp.num_vars();
  const int m0 = qp.num_rows();
  Stacked S;
  // Presolve drops rows that are free or implied by the box.
  S.keep_rows.reserve(m0);
  {
    std::vector<double> rmin(m0, 0.0), rmax(m0, 0.0);
    for (int k = 0; k < qp.A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(qp.A, k); it; ++it) {
        const int r = static_cast<int>(it.row());
        const double a = it.value();
        const double lo = qp.lo[k], hi = qp.hi[k];
        rmin[r] += a > 0 ? a * lo : a * hi;
        rmax[r] += a > 0 ? a * hi : a * lo;
      }
    for (int r = 0; r < m0; ++r) {
      const bool lfin = is_finite_bound(qp.l[r]);
      const bool ufin = is_finite_bound(qp.u[r]);
      if (!lfin && !ufin) continue;
      if (presolve) {
        const bool lower_implied = !lfin || rmin[r] >= qp.l[r];
        const bool upper_implied = !ufin || rmax[r] <= qp.u[r];
        if (lower_implied && upper_implied) continue;
      }
      S.keep_rows.push_back(r);
    }
  }
  for (int i = 0; i < n; ++i)
    if (is_finite_bound(qp.lo[i]) || is_finite_bound(qp.hi[i])) S.box_rows.push_back(i);

  S.mg = static_cast<int>(S.keep_rows.size());
  const int mg = S.mg;
  const int m = mg + static_cast<int>(S.box_rows.size());
  std::vector<int> row_map(m0, -1);
  for (int k = 0; k < mg; ++k) row_map[S.keep_rows[k]] = k;
  std::vector<Triplet> trip;
  trip.reserve(qp.A.nonZeros() + S.box_rows.size());
  for (int k = 0; k < qp.A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(qp.A, k); it; ++it) {
      const int r = row_map[it.row()];
      if (r >= 0) trip.emplace_back(r, k, it.value());
    }
  for (std::size_t k = 0; k < S.box_rows.size(); ++k) trip.emplace_back(mg + static_cast<int>(k), S.box_rows[k], 1.0);
  S.A = SparseMatrix(m, n);
  S.A.setFromTriplets(trip.begin(), trip.end());
  S.l.resize(m);
  S.u.resize(m);
  for (int k = 0; k < mg; ++k) {
    S.l[k] = qp.l[S.keep_rows[k]];
    S.u[k] = qp.u[S.keep_rows[k]];
  }
  for (std::size_t k = 0; k < S.box_rows.size(); ++k) {
    S.l[mg + k] = qp.lo[S.box_rows[k]];
    S.u[mg + k] = qp.hi[S.box_rows[k]];
  }
  for (int k = 0; k < m; ++k) {
    if (!is_finite_bound(S.l[k])) S.l[k] = -kInf;
    if (!is_finite_bound(S.u[k])) S.u[k] = kInf;
  }
  return S;
}

}  // namespace detail

/// ADMM on the equilibrated problem. Never reports an infeasible point as optimal.
inline SolveReport solve_qp_admm(const QuadraticProgram& qp, const QpSettings& st = {}) {
  qp.validate();
  const int n = qp.num_vars();
  const int m0 = qp.num_rows();

  const detail::Stacked stk = detail::stack_constraints(qp, st.presolve);
  const std::vector<int>& keep_rows = stk.keep_rows;
  const std::vector<int>& box_rows = stk.box_rows;
  const int mg = stk.mg;
  const int m = stk.rows();
  SparseMatrix As = stk.A;
  const Vector& ls = stk.l;
  const Vector& us = stk.u;

  const SparseMatrix A0 = As;

  // Ruiz equilibration of [P A'; A 0].
  SparseMatrix Ps = qp.P;
  Vector qs = qp.q;
  Vector D = Vector::Ones(n), E = Vector::Ones(m);
  double cost_scale = 1.0;
  for (int iter = 0; iter < st.scaling_iters; ++iter) {
    Vector dcol = Vector::Zero(n), erow = Vector::Zero(m);
    for (int k = 0; k < Ps.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Ps, k); it; ++it) dcol[k] = std::max(dcol[k], std::abs(it.value()));
    for (int k = 0; k < As.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(As, k); it; ++it) {
        dcol[k] = std::max(dcol[k], std::abs(it.value()));
        erow[it.row()] = std::max(erow[it.row()], std::abs(it.value()));
      }
    auto fix = [](double v) { return v < 1e-4 ? 1.0 : 1.0 / std::sqrt(std::min(v, 1e4 * 1e4)); };
    Vector dt = dcol.unaryExpr(fix), et = erow.unaryExpr(fix);
    Ps = dt.asDiagonal() * Ps * dt.asDiagonal();
    As = et.asDiagonal() * As * dt.asDiagonal();
    qs = dt.cwiseProduct(qs);
    D = D.cwiseProduct(dt);
    E = E.cwiseProduct(et);
  }
  {
    double pmean = 0.0;
    if (n > 0) {
      Vector pc = Vector::Zero(n);
      for (int k = 0; k < Ps.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(Ps, k); it; ++it) pc[k] = std::max(pc[k], std::abs(it.value()));
      pmean = pc.mean();
    }
    double c = std::max(pmean, detail::inf_norm(qs));
    c = c < 1e-4 ? 1.0 : 1.0 / std::min(c, 1e4);
    Ps *= c;
    qs *= c;
    cost_scale = c;
  }
  Vector lsc = ls, usc = us;
  for (int k = 0; k < m; ++k) {
    if (std::isfinite(lsc[k])) lsc[k] *= E[k];
    if (std::isfinite(usc[k])) usc[k] *= E[k];
  }
  const SparseMatrix AsT = As.transpose();

  // KKT factorization helpers.
  double rho = st.rho;
  Vector rho_vec(m);
  auto set_rho_vec = [&](double r) {
    for (int k = 0; k < m; ++k) {
      const bool eq = std::isfinite(lsc[k]) && std::isfinite(usc[k]) && std::abs(usc[k] - lsc[k]) < 1e-12 * (1 + std::abs(usc[k]));
      rho_vec[k] = eq ? 1e3 * r : r;
    }
  };
  set_rho_vec(rho);

  auto build_kkt = [&](const SparseMatrix& Pm, const SparseMatrix& Am, const Vector& diag_p, const Vector& diag_a) {
    const int nn = static_cast<int>(Pm.rows());
    const int mm = static_cast<int>(Am.rows());
    std::vector<Triplet> t;
    t.reserve(Pm.nonZeros() + Am.nonZeros() + nn + mm);
    for (int k = 0; k < Pm.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Pm, k); it; ++it)
        if (it.row() >= k) t.emplace_back(static_cast<int>(it.row()), k, it.value());
    for (int i = 0; i < nn; ++i) t.emplace_back(i, i, diag_p[i]);
    for (int k = 0; k < Am.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(Am, k); it; ++it) t.emplace_back(nn + static_cast<int>(it.row()), k, it.value());
    for (int i = 0; i < mm; ++i) t.emplace_back(nn + i, nn + i, diag_a[i]);
    SparseMatrix K(nn + mm, nn + mm);
    K.setFromTriplets(t.begin(), t.end());
    return K;
  };

  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt;
  bool analyzed = false;
  auto factor = [&]() {
    const SparseMatrix K = build_kkt(Ps, As, Vector::Constant(n, st.sigma), (-rho_vec.cwiseInverse()).eval());
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    return ldlt.info() == Eigen::Success;
  };

  SolveReport rep;
  if (!factor()) {
    rep.status = SolveStatus::InfeasibleDetected;
    rep.detail = "KKT factorization failed";
    rep.x = Vector::Zero(n).cwiseMax(qp.lo).cwiseMin(qp.hi);
    return rep;
  }

  Vector x = Vector::Zero(n), z = Vector::Zero(m), y = Vector::Zero(m);
  Vector xprev = x, yprev = y;
  Vector rhs(n + m), sol(n + m);

  auto unscale = [&](const Vector& xs, const Vector& zs, const Vector& ys) {
    detail::Candidate c;
    c.x = D.cwiseProduct(xs);
    const Vector yu = E.cwiseProduct(ys) / cost_scale;
    const Vector zu = E.cwiseInverse().cwiseProduct(zs);
    c.z = (qp.A * c.x).cwiseMax(qp.l).cwiseMin(qp.u);
    c.y = Vector::Zero(m0);
    for (int k = 0; k < mg; ++k) {
      c.y[keep_rows[k]] = yu[k];
      c.z[keep_rows[k]] = zu[k];
    }
    c.z_box = c.x;
    c.y_box = Vector::Zero(n);
    for (std::size_t k = 0; k < box_rows.size(); ++k) {
      c.y_box[box_rows[k]] = yu[mg + k];
      c.z_box[box_rows[k]] = zu[mg + k];
    }
    return c;
  };

  // Active-set polish in the original coordinates; the scaled problem can be
  // too lopsided for a regularized direct solve. The guessed set is refined
  // by dropping rows whose multiplier has the wrong sign and adding rows the
  // equality-constrained solution violates, until the set is stable.
  // With `primal_guess` set, rows whose tracked value sits on a bound also
  // start out active.
  enum : char { kFree = 0, kLower = 1, kUpper = 2, kFixed = 3 };
  auto try_polish_set = [&](const Vector& zs, const Vector& ys, bool primal_guess, detail::Candidate& c) -> bool {
    std::vector<char> side(m, kFree);
    const double near = 1e-7;
    for (int k = 0; k < m; ++k) {
      const bool eq = std::isfinite(lsc[k]) && std::isfinite(usc[k]) && usc[k] - lsc[k] <= 1e-12 * (1 + std::abs(usc[k]));
      const bool at_l = std::isfinite(lsc[k]) && (zs[k] - lsc[k] < -ys[k] || (primal_guess && zs[k] - lsc[k] <= near * (1 + std::abs(lsc[k]))));
      const bool at_u = std::isfinite(usc[k]) && (usc[k] - zs[k] < ys[k] || (primal_guess && usc[k] - zs[k] <= near * (1 + std::abs(usc[k]))));
      if (eq) side[k] = kFixed;
      else if (at_l && !(at_u && ys[k] > 0)) side[k] = kLower;
      else if (at_u) side[k] = kUpper;
    }
    Vector xsol, yfull;
    for (int round = 0; round < 4; ++round) {
      std::vector<int> act;
      std::vector<int> pos(m, -1);
      for (int k = 0; k < m; ++k)
        if (side[k] != kFree) {
          pos[k] = static_cast<int>(act.size());
          act.push_back(k);
        }
      const int na = static_cast<int>(act.size());
      Vector target(na);
      for (int i = 0; i < na; ++i) target[i] = side[act[i]] == kUpper ? us[act[i]] : ls[act[i]];
      std::vector<Triplet> t;
      for (int k = 0; k < A0.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(A0, k); it; ++it)
          if (pos[it.row()] >= 0) t.emplace_back(pos[it.row()], k, it.value());
      SparseMatrix Aa(na, n);
      Aa.setFromTriplets(t.begin(), t.end());
      const SparseMatrix K0 = SparseMatrix(build_kkt(qp.P, Aa, Vector::Zero(n), Vector::Zero(na)).selfadjointView<Eigen::Lower>());
      // Cancellation can produce an exactly zero pivot; a larger shift fixes it
      // and the refinement below removes its effect.
      Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> f;
      bool factored = false;
      for (double delta : {1e-8, 1e-7, 1e-6}) {
        f.compute(build_kkt(qp.P, Aa, Vector::Constant(n, delta), Vector::Constant(na, -delta)));
        if ((factored = f.info() == Eigen::Success)) break;
      }
      if (!factored) return false;
      Vector rhs_p(n + na);
      rhs_p.head(n) = -qp.q;
      rhs_p.tail(na) = target;
      Vector sol_p = f.solve(rhs_p);
      for (int r = 0; r < 10; ++r) {
        const Vector res = rhs_p - K0 * sol_p;
        if (detail::inf_norm(res) <= 1e-14 * (1.0 + detail::inf_norm(rhs_p))) break;
        sol_p += f.solve(res);
      }
      if (!sol_p.allFinite()) return false;
      xsol = sol_p.head(n);
      yfull = Vector::Zero(m);
      for (int i = 0; i < na; ++i) yfull[act[i]] = sol_p[n + i];
      // Multipliers of the wrong sign leave the set, violated rows join it.
      const double ytol = 1e-9 * (1.0 + detail::inf_norm(yfull));
      const Vector ax = A0 * xsol;
      int changes = 0;
      for (int k = 0; k < m; ++k) {
        if (side[k] == kLower && yfull[k] > ytol) side[k] = kFree, ++changes;
        else if (side[k] == kUpper && yfull[k] < -ytol) side[k] = kFree, ++changes;
        else if (side[k] == kFree) {
          if (std::isfinite(ls[k]) && ax[k] < ls[k] - 1e-9 * (1 + std::abs(ls[k]))) side[k] = kLower, ++changes;
          else if (std::isfinite(us[k]) && ax[k] > us[k] + 1e-9 * (1 + std::abs(us[k]))) side[k] = kUpper, ++changes;
        }
      }
      if (changes == 0) break;
      if (round == 3) return false;
    }
    c.x = xsol;
    c.z = (qp.A * c.x).cwiseMax(qp.l).cwiseMin(qp.u);
    c.z_box = c.x.cwiseMax(qp.lo).cwiseMin(qp.hi);
    c.y = Vector::Zero(m0);
    for (int k = 0; k < mg; ++k) c.y[keep_rows[k]] = yfull[k];
    c.y_box = Vector::Zero(n);
    for (std::size_t k = 0; k < box_rows.size(); ++k) c.y_box[box_rows[k]] = yfull[mg + k];
    return true;
  };

  auto try_polish = [&](const Vector& zs, const Vector& ys, detail::Candidate& c) -> bool {
    if (try_polish_set(zs, ys, true, c) && [&] {
          const detail::Residuals rp = detail::residuals(qp, c);
          return rp.prim_norm() <= st.tol && rp.dual_norm() <= st.tol;
        }())
      return true;
    return try_polish_set(zs, ys, false, c);
  };

  auto accept = [&](const detail::Candidate& c, const detail::Residuals& r, SolveStatus status, int iters, bool polished,
                    const std::string& det) {
    rep.x = c.x.cwiseMax(qp.lo).cwiseMin(qp.hi);
    rep.y = c.y;
    rep.y_box = c.y_box;
    rep.objective = qp.objective(rep.x);
    rep.primal_residual = r.prim_norm();
    rep.dual_residual = r.dual_norm();
    rep.iterations = iters;
    rep.polished = polished;
    rep.status = status;
    if (status == SolveStatus::Optimal && (r.prim_norm() > st.tol || r.dual_norm() > st.tol)) rep.status = SolveStatus::MaxIterations;
    rep.detail = det;
    return rep;
  };

  auto finish = [&](SolveStatus status, int iters, const std::string& det) {
    const detail::Candidate c = unscale(x, z, y);
    const detail::Residuals r = detail::residuals(qp, c);
    if (st.polish && status != SolveStatus::InfeasibleDetected) {
      detail::Candidate cp;
      if (try_polish(z, y, cp)) {
        const detail::Residuals rp = detail::residuals(qp, cp);
        if (rp.prim_norm() <= std::max(r.prim_norm(), 0.1 * st.tol) && rp.dual_norm() <= std::max(r.dual_norm(), 0.1 * st.tol)) {
          const bool good = rp.prim_norm() <= st.tol && rp.dual_norm() <= st.tol;
          return accept(cp, rp, good ? SolveStatus::Optimal : status, iters, true, det);
        }
      }
    }
    return accept(c, r, status, iters, false, det);
  };

  const double alpha = st.alpha;
  int iter = 0;
  for (iter = 1; iter <= st.max_iter; ++iter) {
    xprev = x;
    yprev = y;
    rhs.head(n) = st.sigma * x - qs;
    rhs.tail(m) = z - y.cwiseQuotient(rho_vec);
    sol = ldlt.solve(rhs);
    const Vector xt = sol.head(n);
    const Vector zt = z + (sol.tail(m) - y).cwiseQuotient(rho_vec);
    x = alpha * xt + (1 - alpha) * x;
    const Vector zrel = alpha * zt + (1 - alpha) * z;
    z = (zrel + y.cwiseQuotient(rho_vec)).cwiseMax(lsc).cwiseMin(usc);
    y = y + rho_vec.cwiseProduct(zrel - z);

    if (iter % st.check_every != 0 && iter != st.max_iter) continue;

    const detail::Candidate cand = unscale(x, z, y);
    const detail::Residuals r = detail::residuals(qp, cand);
    if (r.prim_norm() <= st.tol && r.dual_norm() <= st.tol) return finish(SolveStatus::Optimal, iter, "");

    // Early polish: the active set is usually identified long before the
    // iterates reach the tolerance.
    if (st.polish && iter % (st.check_every * 5) == 0) {
      detail::Candidate cp;
      if (try_polish(z, y, cp)) {
        const detail::Residuals rp = detail::residuals(qp, cp);
        if (rp.prim_norm() <= st.tol && rp.dual_norm() <= st.tol) return accept(cp, rp, SolveStatus::Optimal, iter, true, "");
      }
    }

    // Infeasibility certificates.
    const Vector dy = y - yprev;
    const Vector dyu = E.cwiseProduct(dy);
    const double ndy = detail::inf_norm(dyu);
    if (ndy > 1e-12) {
      const double atdy = detail::inf_norm(Vector(D.cwiseInverse().cwiseProduct(AsT * dy)));
      double support = 0.0;
      bool bounded = true;
      for (int k = 0; k < m; ++k) {
        const double d = dyu[k];
        if (d > 0) {
          if (!std::isfinite(us[k])) {
            if (d > st.infeasibility_tol * ndy) bounded = false;
          } else {
            support += us[k] * d;
          }
        } else if (d < 0) {
          if (!std::isfinite(ls[k])) {
            if (-d > st.infeasibility_tol * ndy) bounded = false;
          } else {
            support += ls[k] * d;
          }
        }
      }
      if (bounded && atdy <= st.infeasibility_tol * ndy && support < -st.infeasibility_tol * ndy)
        return finish(SolveStatus::InfeasibleDetected, iter, "primal infeasibility certificate");
    }
    const Vector dx = x - xprev;
    const Vector dxu = D.cwiseProduct(dx);
    const double ndx = detail::inf_norm(dxu);
    if (ndx > 1e-12) {
      const double pdx = detail::inf_norm(Vector(D.cwiseInverse().cwiseProduct(Ps * dx))) / cost_scale;
      const double qdx = qp.q.dot(dxu);
      if (pdx <= st.infeasibility_tol * ndx && qdx < -st.infeasibility_tol * ndx) {
        const Vector adx = E.cwiseInverse().cwiseProduct(As * dx);
        bool cert = true;
        const double t = st.infeasibility_tol * ndx;
        for (int k = 0; k < m && cert; ++k) {
          const bool lf = std::isfinite(ls[k]), uf = std::isfinite(us[k]);
          if (lf && uf) cert = std::abs(adx[k]) <= t;
          else if (lf) cert = adx[k] >= -t;
          else if (uf) cert = adx[k] <= t;
        }
        if (cert) return finish(SolveStatus::InfeasibleDetected, iter, "dual infeasibility certificate (unbounded)");
      }
    }

    if (st.adaptive_rho && m > 0) {
      const Vector ax = As * x;
      const Vector px = Ps * x;
      const Vector aty = AsT * y;
      const double pr = detail::inf_norm(Vector(ax - z)) / std::max({detail::inf_norm(ax), detail::inf_norm(z), 1e-30});
      const double dr = detail::inf_norm(Vector(px + qs + aty)) /
                        std::max({detail::inf_norm(px), detail::inf_norm(qs), detail::inf_norm(aty), 1e-30});
      double rho_new = rho * std::sqrt(pr / std::max(dr, 1e-30));
      rho_new = std::clamp(rho_new, 1e-6, 1e6);
      if (rho_new > 5 * rho || rho_new < rho / 5) {
        rho = rho_new;
        set_rho_vec(rho);
        if (!factor()) return finish(SolveStatus::MaxIterations, iter, "KKT refactorization failed");
      }
    }
  }
  std::ostringstream os;
  os << "iteration limit " << st.max_iter << " reached";
  return finish(SolveStatus::MaxIterations, st.max_iter, os.str());
}

/// Mehrotra predictor-corrector interior-point method. Suited to long,
/// LP-like programs where ADMM has a slow tail. Returns MaxIterations when
/// it stalls; it does not classify infeasibility.
inline SolveReport solve_qp_interior(const QuadraticProgram& qp, const QpSettings& st = {}) {
  qp.validate();
  const int n = qp.num_vars();
  const int m0 = qp.num_rows();
  const detail::Stacked S = detail::stack_constraints(qp, st.presolve);
  const int m = S.rows();

  // Split stacked rows into equalities E x = b and two-sided inequalities.
  std::vector<int> eq_rows, in_rows;
  for (int k = 0; k < m; ++k) {
    const bool eq = std::isfinite(S.l[k]) && std::isfinite(S.u[k]) && S.u[k] - S.l[k] <= 1e-12 * (1 + std::abs(S.u[k]));
    (eq ? eq_rows : in_rows).push_back(k);
  }
  const int ne = static_cast<int>(eq_rows.size());
  const int ni = static_cast<int>(in_rows.size());
  auto select = [&](const std::vector<int>& rows) {
    std::vector<int> pos(m, -1);
    for (std::size_t i = 0; i < rows.size(); ++i) pos[rows[i]] = static_cast<int>(i);
    std::vector<Triplet> t;
    for (int k = 0; k < S.A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(S.A, k); it; ++it)
        if (pos[it.row()] >= 0) t.emplace_back(pos[it.row()], k, it.value());
    SparseMatrix M(static_cast<int>(rows.size()), n);
    M.setFromTriplets(t.begin(), t.end());
    return M;
  };
  const SparseMatrix E = select(eq_rows), C = select(in_rows);
  const SparseMatrix Et = E.transpose(), Ct = C.transpose();
  Vector b(ne), cl(ni), cu(ni);
  for (int i = 0; i < ne; ++i) b[i] = S.l[eq_rows[i]];
  Vector has_l = Vector::Zero(ni), has_u = Vector::Zero(ni);
  for (int i = 0; i < ni; ++i) {
    cl[i] = S.l[in_rows[i]];
    cu[i] = S.u[in_rows[i]];
    if (std::isfinite(cl[i])) has_l[i] = 1.0;
    if (std::isfinite(cu[i])) has_u[i] = 1.0;
  }
  const double sides = std::max(1.0, has_l.sum() + has_u.sum());
  // Infinite sides carry s = 1, z = 0 and are masked out of every update.
  auto fin = [](const Vector& v, const Vector& mask) { return v.cwiseProduct(mask); };
  const Vector cl0 = cl.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
  const Vector cu0 = cu.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });

  Vector x = Vector::Zero(n).cwiseMax(qp.lo).cwiseMin(qp.hi);
  for (int i = 0; i < n; ++i)
    if (std::isfinite(qp.lo[i]) && std::isfinite(qp.hi[i])) x[i] = 0.5 * (qp.lo[i] + qp.hi[i]);
  Vector y = Vector::Zero(ne);
  Vector cx = C * x;
  Vector sl = (cx - cl0).cwiseMax(1.0), su = (cu0 - cx).cwiseMax(1.0);
  Vector zl = has_l, zu = has_u;
  sl = sl.cwiseProduct(has_l) + (Vector::Ones(ni) - has_l);
  su = su.cwiseProduct(has_u) + (Vector::Ones(ni) - has_u);

  auto candidate = [&]() {
    detail::Candidate c;
    c.x = x;
    Vector ys = Vector::Zero(m);
    for (int i = 0; i < ne; ++i) ys[eq_rows[i]] = y[i];
    for (int i = 0; i < ni; ++i) ys[in_rows[i]] = zu[i] - zl[i];
    c.z = (qp.A * c.x).cwiseMax(qp.l).cwiseMin(qp.u);
    c.z_box = c.x.cwiseMax(qp.lo).cwiseMin(qp.hi);
    c.y = Vector::Zero(m0);
    for (int k = 0; k < S.mg; ++k) c.y[S.keep_rows[k]] = ys[k];
    c.y_box = Vector::Zero(n);
    for (std::size_t k = 0; k < S.box_rows.size(); ++k) c.y_box[S.box_rows[k]] = ys[S.mg + k];
    return c;
  };

  SolveReport rep;
  auto report = [&](SolveStatus status, int iters, const std::string& det) {
    const detail::Candidate c = candidate();
    const detail::Residuals r = detail::residuals(qp, c);
    rep.x = c.x.cwiseMax(qp.lo).cwiseMin(qp.hi);
    rep.y = c.y;
    rep.y_box = c.y_box;
    rep.objective = qp.objective(rep.x);
    rep.primal_residual = r.prim_norm();
    rep.dual_residual = r.dual_norm();
    rep.iterations = iters;
    rep.status = status;
    if (status == SolveStatus::Optimal && (r.prim_norm() > st.tol || r.dual_norm() > st.tol)) rep.status = SolveStatus::MaxIterations;
    rep.detail = det;
    return rep;
  };

  auto max_step = [](const Vector& v, const Vector& dv, const Vector& mask) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (mask[i] > 0 && dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
    return a;
  };

  const double reg = 1e-10;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt;
  const int max_iter = std::min(st.max_iter, 200);
  for (int iter = 0; iter < max_iter; ++iter) {
    cx = C * x;
    const Vector rd = qp.P * x + qp.q + Et * y - Ct * (zl - zu);
    const Vector re = E * x - b;
    const Vector rl = fin(cx - sl - cl0, has_l);
    const Vector ru = fin(cx + su - cu0, has_u);
    const double gap = fin(sl.cwiseProduct(zl), has_l).sum() + fin(su.cwiseProduct(zu), has_u).sum();
    const double mu = gap / sides;
    {
      const detail::Residuals r = detail::residuals(qp, candidate());
      const double obj = qp.objective(x);
      if (r.prim_norm() <= 0.1 * st.tol && r.dual_norm() <= 0.1 * st.tol && gap <= 0.1 * st.tol * (1.0 + std::abs(obj)))
        return report(SolveStatus::Optimal, iter, "");
    }

    // Normal matrix H = P + C' W C and the quasi-definite KKT [H E'; E 0].
    const Vector wl = fin(zl.cwiseQuotient(sl), has_l), wu = fin(zu.cwiseQuotient(su), has_u);
    const Vector w = wl + wu;
    const SparseMatrix H = qp.P + SparseMatrix(Ct * w.asDiagonal() * C);
    std::vector<Triplet> t;
    t.reserve(H.nonZeros() + E.nonZeros() + n + ne);
    for (int k = 0; k < H.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(H, k); it; ++it)
        if (it.row() >= k) t.emplace_back(static_cast<int>(it.row()), k, it.value());
    for (int i = 0; i < n; ++i) t.emplace_back(i, i, reg);
    for (int k = 0; k < E.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(E, k); it; ++it) t.emplace_back(n + static_cast<int>(it.row()), k, it.value());
    for (int i = 0; i < ne; ++i) t.emplace_back(n + i, n + i, -reg);
    SparseMatrix K(n + ne, n + ne);
    K.setFromTriplets(t.begin(), t.end());
    ldlt.compute(K);
    if (ldlt.info() != Eigen::Success) return report(SolveStatus::MaxIterations, iter, "interior point: KKT factorization failed");

    struct Dir {
      Vector dx, dy, dsl, dzl, dsu, dzu;
    };
    auto direction = [&](const Vector& rsl, const Vector& rsu) {
      Dir d;
      const Vector tl = fin(rsl.cwiseQuotient(sl) + wl.cwiseProduct(rl), has_l);
      const Vector tu = fin(rsu.cwiseQuotient(su) - wu.cwiseProduct(ru), has_u);
      Vector rhs(n + ne);
      rhs.head(n) = -rd - Ct * (tl - tu);
      rhs.tail(ne) = -re;
      Vector sol = ldlt.solve(rhs);
      // One refinement step against the unregularized system.
      Vector kres(n + ne);
      kres.head(n) = rhs.head(n) - (H * sol.head(n) + Et * sol.tail(ne));
      kres.tail(ne) = rhs.tail(ne) - E * sol.head(n);
      sol += ldlt.solve(kres);
      d.dx = sol.head(n);
      d.dy = sol.tail(ne);
      const Vector cdx = C * d.dx;
      d.dsl = fin(cdx + rl, has_l);
      d.dzl = fin(-(rsl + zl.cwiseProduct(d.dsl)).cwiseQuotient(sl), has_l);
      d.dsu = fin(-ru - cdx, has_u);
      d.dzu = fin(-(rsu + zu.cwiseProduct(d.dsu)).cwiseQuotient(su), has_u);
      return d;
    };
    auto step_len = [&](const Dir& d) {
      return std::min({max_step(sl, d.dsl, has_l), max_step(su, d.dsu, has_u), max_step(zl, d.dzl, has_l),
                       max_step(zu, d.dzu, has_u)});
    };

    const Vector sz_l = fin(sl.cwiseProduct(zl), has_l), sz_u = fin(su.cwiseProduct(zu), has_u);
    const Dir aff = direction(sz_l, sz_u);
    const double a_aff = step_len(aff);
    const double gap_aff = fin((sl + a_aff * aff.dsl).cwiseProduct(zl + a_aff * aff.dzl), has_l).sum() +
                           fin((su + a_aff * aff.dsu).cwiseProduct(zu + a_aff * aff.dzu), has_u).sum();
    const double sigma = std::pow(std::clamp(gap_aff / std::max(gap, 1e-300), 0.0, 1.0), 3);
    const Vector rsl = fin(sz_l + aff.dsl.cwiseProduct(aff.dzl) - Vector::Constant(ni, sigma * mu), has_l);
    const Vector rsu = fin(sz_u + aff.dsu.cwiseProduct(aff.dzu) - Vector::Constant(ni, sigma * mu), has_u);
    const Dir d = direction(rsl, rsu);
    const double a = std::min(1.0, 0.99 * step_len(d));
    if (!(a > 1e-12) || !d.dx.allFinite()) return report(SolveStatus::MaxIterations, iter, "interior point: step collapsed");
    x += a * d.dx;
    y += a * d.dy;
    sl += a * d.dsl;
    zl += a * d.dzl;
    su += a * d.dsu;
    zu += a * d.dzu;
  }
  return report(SolveStatus::MaxIterations, max_iter, "interior point: iteration limit reached");
}

/// Solves the QP with the configured method. Never reports an infeasible
/// point as optimal.
inline SolveReport solve_qp(const QuadraticProgram& qp, const QpSettings& st = {}) {
  if (st.method == QpMethod::InteriorPoint) {
    SolveReport r = solve_qp_interior(qp, st);
    if (r.ok()) return r;
    QpSettings fallback = st;
    fallback.method = QpMethod::Admm;
    return solve_qp_admm(qp, fallback);
  }
  return solve_qp_admm(qp, st);
}

inline SolveReport solve_qp(const QuadraticProgram& qp, double tol, int max_iter) {
  QpSettings st;
  st.tol = tol;
  st.max_iter = max_iter;
  return solve_qp(qp, st);
}

/// Throws SolverError unless the report is optimal.
inline const SolveReport& expect_optimal(const SolveReport& r, const std::string& what) {
  if (!r.ok()) {
    std::ostringstream os;
    os << what << ": " << to_string(r.status) << " after " << r.iterations << " iterations (primal "
       << r.primal_residual << ", dual " << r.dual_residual << ")";
    if (!r.detail.empty()) os << " " << r.detail;
    throw SolverError(os.str(), std::max(r.primal_residual, r.dual_residual));
  }
  return r;
}

}  // namespace mgd::convex
