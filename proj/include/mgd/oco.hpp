#pragma once

// Adaptive virtual-queue online convex optimization with expert tracking.
//
// Each round the learner commits x_t before f_t and g_t are revealed. N
// experts run queue-regularized proximal steps with learning rates spread
// over a geometric grid; the executed action is their weighted average, and
// the weights follow exponentiated surrogate losses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mgd/convex/prox.hpp"
#include "mgd/core.hpp"

namespace mgd::oco {

using convex::AffineBlock;
using convex::Box;

/// Learning-rate, queue-gain and queue-floor rules for a horizon T.
struct ParamSchedule {
  int horizon = 1;
  double chi = 0.1;
  double delta = 0.2;
  int expert_count = 1;
  double meta_rate = 1.0;

  /// alpha_{i,t} = 2^{i-1} / t^{1/2+chi}
  double alpha(int i, int t) const { return std::ldexp(1.0, i - 1) / std::pow(static_cast<double>(t), 0.5 + chi); }
  /// beta_t = t^{1/2+delta}
  double beta(int t) const { return std::pow(static_cast<double>(t), 0.5 + delta); }
  /// theta_{i,t} = 2^{i-1} t
  double theta(int i, int t) const { return std::ldexp(1.0, i - 1) * static_cast<double>(t); }
};

inline ParamSchedule make_schedule(int T, double chi = 0.1, double delta = 0.2) {
  require(T >= 1, "schedule: horizon must be at least 1");
  require(chi > 0.0 && chi < delta && delta < 0.5, "schedule: need 0 < chi < delta < 1/2");
  ParamSchedule s;
  s.horizon = T;
  s.chi = chi;
  s.delta = delta;
  s.expert_count = static_cast<int>(std::ceil(0.5 * std::log2(1.0 + T))) + 1;
  s.meta_rate = 1.0 / std::sqrt(static_cast<double>(T));
  return s;
}

struct ExpertState {
  int index = 1;  // 1-based, sets the learning-rate multiplier 2^{index-1}
  Vector x;
  Vector queue;
  double weight = 0.0;
  // Feedback from the last revealed round, evaluated at this expert's iterate.
  Vector grad_prev;
  Vector violation_prev;
};

struct ExpertBank {
  std::vector<ExpertState> experts;
  Vector x;
  ParamSchedule schedule;
  AffineBlock g_prev;  // last revealed constraint block
  int round = 0;       // rounds committed so far
  bool awaiting_feedback = false;
};

/// Initial prior weights (N+1) / [i(i+1)N]; they sum to one.
inline double initial_weight(int i, int N) {
  return static_cast<double>(N + 1) / (static_cast<double>(i) * (i + 1) * N);
}

inline ExpertBank init_bank(const ParamSchedule& schedule, const Vector& x_init, int dim_g) {
  require(dim_g >= 0, "init_bank: negative constraint count");
  require(x_init.allFinite(), "init_bank: non-finite initial point");
  ExpertBank bank;
  bank.schedule = schedule;
  bank.x = x_init;
  const int N = schedule.expert_count;
  double total = 0.0;
  for (int i = 1; i <= N; ++i) {
    ExpertState e;
    e.index = i;
    e.x = x_init;
    e.queue = Vector::Zero(dim_g);
    e.weight = initial_weight(i, N);
    total += e.weight;
    bank.experts.push_back(std::move(e));
  }
  for (auto& e : bank.experts) e.weight /= total;  // removes the last-ulp drift
  return bank;
}

/// max(Q + beta * violation, theta) for one queue entry.
inline double queue_update(double q_prev, double beta, double violation, double theta) {
  require(violation >= 0.0, "queue_update: violation must be clipped to be nonnegative");
  require(beta > 0.0 && theta >= 0.0, "queue_update: need beta > 0 and theta >= 0");
  return std::max(q_prev + beta * violation, theta);
}

/// Proximal step of one expert; x_prev must already lie in the box.
inline Vector expert_step(const ExpertState& e, const Vector& grad_f, const AffineBlock& g_prev, double alpha, double beta,
                          const Box& box, const Vector& x_prev, double tol = 1e-9) {
  return convex::solve_prox_step(grad_f, e.queue, alpha, beta, g_prev, box, x_prev, tol);
}

/// Weighted average of the expert iterates.
inline Vector aggregate(const ExpertBank& bank) {
  require(!bank.experts.empty(), "aggregate: empty bank");
  Vector x = Vector::Zero(bank.experts.front().x.size());
  for (const auto& e : bank.experts) x += e.weight * e.x;
  return x;
}

/// Exponential weights on the surrogate losses <grad_t, x_i - x_t>.
inline void weight_update(ExpertBank& bank, const Vector& grad_t, double gamma) {
  const std::size_t N = bank.experts.size();
  std::vector<double> loss(N);
  for (std::size_t i = 0; i < N; ++i) loss[i] = grad_t.dot(bank.experts[i].x - bank.x);
  // Computed in logs and shifted by the largest term, which becomes exactly 1.
  std::vector<double> lw(N);
  double top = -kInf;
  for (std::size_t i = 0; i < N; ++i) {
    lw[i] = std::log(bank.experts[i].weight) - gamma * loss[i];
    top = std::max(top, lw[i]);
  }
  require(std::isfinite(top), "weight_update: weights degenerated");
  double total = 0.0;
  std::vector<double> w(N);
  for (std::size_t i = 0; i < N; ++i) {
    w[i] = std::exp(lw[i] - top);
    total += w[i];
  }
  require(total > 0.0 && std::isfinite(total), "weight_update: weights degenerated");
  for (std::size_t i = 0; i < N; ++i) bank.experts[i].weight = w[i] / total;
}

/// Full information about round t, revealed after the decision.
struct RevealedRound {
  std::function<double(const Vector&)> cost;
  std::function<Vector(const Vector&)> gradient;
  AffineBlock g;
};

/// Advances the bank to round t and returns the action to execute, which is
/// projected onto the round's box.
inline Vector decide(ExpertBank& bank, const Box& box, double tol = 1e-9) {
  require(!bank.awaiting_feedback, "decide: previous round has not been revealed");
  require(box.size() == bank.x.size(), "decide: box dimension mismatch");
  require(!box.empty(), "decide: empty decision box");
  const int t = ++bank.round;
  const auto& sch = bank.schedule;
  if (t == 1) {
    for (auto& e : bank.experts) e.x = box.project(e.x);
  } else {
    const int s = t - 1;
    const double beta = sch.beta(s);
    for (auto& e : bank.experts) {
      const double theta = sch.theta(e.index, s);
      for (Eigen::Index k = 0; k < e.queue.size(); ++k)
        e.queue[k] = queue_update(e.queue[k], beta, e.violation_prev[k], theta);
      const Vector x_prev = box.project(e.x);
      e.x = expert_step(e, e.grad_prev, bank.g_prev, sch.alpha(e.index, s), beta, box, x_prev, tol);
    }
  }
  bank.x = box.project(aggregate(bank));
  bank.awaiting_feedback = true;
  return bank.x;
}

/// Stores the feedback of the round just committed and updates the weights.
inline void reveal(ExpertBank& bank, const RevealedRound& r) {
  require(bank.awaiting_feedback, "reveal: no committed round");
  require(r.g.rows() == (bank.experts.empty() ? 0 : bank.experts.front().queue.size()),
          "reveal: constraint rows must match the queue length");
  weight_update(bank, r.gradient(bank.x), bank.schedule.meta_rate);
  for (auto& e : bank.experts) {
    e.grad_prev = r.gradient(e.x);
    e.violation_prev = convex::positive_part(r.g.eval(e.x));
    if (e.violation_prev.size() == 0) e.violation_prev = Vector::Zero(r.g.rows());
  }
  bank.g_prev = r.g;
  bank.awaiting_feedback = false;
}

struct RoundRecord {
  int t = 0;
  Vector x;
  double cost = 0.0;  // f_t(x_t)
  Vector g;           // g_t(x_t)
  std::optional<Vector> x_star;
  std::optional<double> cost_star;  // f_t(x_t*)
};

struct OcoMetrics {
  std::optional<double> dynamic_regret;  // absent unless every round has a benchmark
  double regret_covered = 0.0;           // regret summed over rounds that have one
  double benchmark_coverage = 0.0;       // fraction of rounds with a benchmark
  double vio_hard = 0.0;
  double vio_soft = 0.0;
  double path_length = 0.0;
};

inline OcoMetrics compute_metrics(const std::vector<RoundRecord>& history) {
  OcoMetrics m;
  if (history.empty()) {
    m.dynamic_regret = 0.0;
    return m;
  }
  for (std::size_t k = 1; k < history.size(); ++k)
    require(history[k].t > history[k - 1].t, "compute_metrics: rounds must be strictly increasing");
  Vector gsum = Vector::Zero(history.front().g.size());
  std::size_t covered = 0;
  const Vector* prev_star = nullptr;
  for (const auto& r : history) {
    require(r.g.size() == gsum.size(), "compute_metrics: constraint dimension changed");
    m.vio_hard += convex::positive_part(r.g).norm();
    gsum += r.g;
    if (r.x_star && r.cost_star) {
      ++covered;
      m.regret_covered += r.cost - *r.cost_star;
      if (prev_star) m.path_length += (*r.x_star - *prev_star).norm();
      prev_star = &*r.x_star;
    }
  }
  m.vio_soft = convex::positive_part(gsum).norm();
  m.benchmark_coverage = static_cast<double>(covered) / static_cast<double>(history.size());
  if (covered == history.size()) m.dynamic_regret = m.regret_covered;
  return m;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "loglog_slope: need at least two points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_slope: values must be positive");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  require(sxx > 0, "loglog_slope: x values must differ");
  return sxy / sxx;
}

}  // namespace mgd::oco
