#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mgd/convex/qp.hpp"

namespace mgd::convex {

/// Axis-aligned decision box.
struct Box {
  Vector lo, hi;

  Eigen::Index size() const { return lo.size(); }
  bool empty() const { return (lo.array() > hi.array()).any(); }
  bool contains(const Vector& x, double tol = 0.0) const {
    return x.size() == lo.size() && (x.array() >= lo.array() - tol).all() && (x.array() <= hi.array() + tol).all();
  }
  Vector project(const Vector& x) const { return project_box(x, lo, hi); }
};

/// Affine map x -> G x + h; one row per scalar constraint g^k(x) <= 0.
struct AffineBlock {
  Matrix G;
  Vector h;

  Eigen::Index rows() const { return h.size(); }
  Vector eval(const Vector& x) const { return rows() == 0 ? Vector() : Vector(G * x + h); }
  /// Largest value row k can take over the box.
  double max_over(Eigen::Index k, const Box& box) const {
    double v = h[k];
    for (Eigen::Index j = 0; j < G.cols(); ++j) {
      const double a = G(k, j);
      v += a > 0 ? a * box.hi[j] : a * box.lo[j];
    }
    return v;
  }
};

/// Elementwise positive part.
inline Vector positive_part(const Vector& v) { return v.cwiseMax(0.0); }

/// Minimizes  alpha<grad, x> + alpha*beta<Q, [Gx+h]_+> + ||x - x_prev||^2  over the box.
///
/// Rows whose weight is zero or that cannot turn positive inside the box
/// contribute nothing and are left out; with no rows left the minimizer is the
/// projected gradient step. Otherwise the problem is solved through its dual
///
///   max  -1/4 ||G'l + m_hi - m_lo||^2 + l'(Gv + h) + m_hi'(v - hi) + m_lo'(lo - v)
///   s.t. 0 <= l <= alpha*beta*Q,  m_hi, m_lo >= 0,
///
/// with v = x_prev - alpha*grad/2 and x = v - (G'l + m_hi - m_lo)/2. The
/// penalty weights only appear as bounds there, so very large queues do not
/// spoil the conditioning.
inline Vector solve_prox_step(const Vector& grad, const Vector& queue, double alpha, double beta,
                              const AffineBlock& g, const Box& box, const Vector& x_prev, double tol = 1e-9,
                              int max_iter = 20000) {
  const Eigen::Index n = x_prev.size();
  if (grad.size() != n || box.size() != n) throw std::invalid_argument("solve_prox_step: dimension mismatch");
  if (queue.size() != g.rows()) throw std::invalid_argument("solve_prox_step: queue length must match constraint rows");
  if ((queue.array() < 0.0).any()) throw std::invalid_argument("solve_prox_step: negative queue entry");
  if (box.empty()) throw std::invalid_argument("solve_prox_step: empty box");
  if (!box.contains(x_prev, 1e-9 * (1.0 + x_prev.lpNorm<Eigen::Infinity>())))
    throw std::invalid_argument("solve_prox_step: previous iterate lies outside the box");

  const double gain = alpha * beta;
  std::vector<Eigen::Index> live;
  for (Eigen::Index k = 0; k < g.rows(); ++k)
    if (gain * queue[k] > 0.0 && g.max_over(k, box) > 0.0) live.push_back(k);

  const Vector v = x_prev - 0.5 * alpha * grad;
  if (live.empty()) return box.project(v);

  // Dual variables: one per live row, then one per finite upper and lower bound.
  std::vector<Triplet> mt;  // columns of M = [G' I -I] restricted to the live set
  std::vector<double> lin, ub;
  int col = 0;
  for (Eigen::Index k : live) {
    for (Eigen::Index j = 0; j < n; ++j)
      if (g.G(k, j) != 0.0) mt.emplace_back(static_cast<int>(j), col, g.G(k, j));
    lin.push_back(g.G.row(k).dot(v) + g.h[k]);
    ub.push_back(gain * queue[k]);
    ++col;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(box.hi[j])) {
      mt.emplace_back(static_cast<int>(j), col++, 1.0);
      lin.push_back(v[j] - box.hi[j]);
      ub.push_back(kInf);
    }
    if (std::isfinite(box.lo[j])) {
      mt.emplace_back(static_cast<int>(j), col++, -1.0);
      lin.push_back(box.lo[j] - v[j]);
      ub.push_back(kInf);
    }
  }
  SparseMatrix M(static_cast<int>(n), col);
  M.setFromTriplets(mt.begin(), mt.end());

  QuadraticProgram qp;
  qp.P = 0.5 * SparseMatrix(M.transpose() * M);
  qp.q = -Eigen::Map<const Vector>(lin.data(), col);
  qp.A.resize(0, col);
  qp.l.resize(0);
  qp.u.resize(0);
  qp.lo = Vector::Zero(col);
  qp.hi = Eigen::Map<const Vector>(ub.data(), col);
  // The dual has flat faces (a pinned variable makes both of its bound
  // multipliers free to grow together), which stalls ADMM; the interior-point
  // path converges to the centre of such faces.
  QpSettings st;
  st.method = QpMethod::InteriorPoint;
  st.tol = tol;
  st.max_iter = max_iter;
  const SolveReport rep = solve_qp(qp, st);
  expect_optimal(rep, "prox step");
  return box.project(v - 0.5 * (M * rep.x));
}

}  // namespace mgd::convex
