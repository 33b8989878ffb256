#pragma once

// Synthetic time-varying instance for checking regret and violation growth.
//
//   f_t(x) = a_t ||x - c_t||^2,   g_t(x) = G x + h_t,   x in [-B, B]^dim
//
// G has orthonormal rows, so the per-round optimum is the projection of c_t
// onto the polyhedron {G x + h_t <= 0}, which is separable in the row
// directions. The centres and offsets stay well inside the box, so the
// projection never touches it and x_t* is exact.

#include <cmath>
#include <random>
#include <vector>

#include "mgd/oco.hpp"

namespace mgd::sim {

struct SyntheticOcoConfig {
  int horizon = 1000;
  int dim = 4;
  int rows = 2;
  std::uint64_t seed = 1;
  bool stationary = false;
  bool always_feasible = false;  // push the offsets so g_t <= 0 on the whole box
  double chi = 0.1;
  double delta = 0.2;
};

struct SyntheticOcoResult {
  std::vector<oco::RoundRecord> history;
  oco::OcoMetrics metrics;
};

class SyntheticOcoInstance {
 public:
  explicit SyntheticOcoInstance(const SyntheticOcoConfig& cfg) : cfg_(cfg) {
    require(cfg.dim >= 1 && cfg.rows >= 0 && cfg.rows <= cfg.dim, "synthetic OCO: need 0 <= rows <= dim");
    std::mt19937_64 rng(derive_seed(cfg.seed, string_id("synthetic-oco")));
    std::normal_distribution<double> N(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Matrix M(cfg.dim, cfg.dim);
    for (int i = 0; i < cfg.dim; ++i)
      for (int j = 0; j < cfg.dim; ++j) M(i, j) = N(rng);
    const Matrix Qm = Eigen::HouseholderQR<Matrix>(M).householderQ();
    G_ = Qm.leftCols(cfg.rows).transpose();
    center_ = Vector(cfg.dim);
    amp_ = Vector(cfg.dim);
    phase_ = Vector(cfg.dim);
    for (int j = 0; j < cfg.dim; ++j) {
      center_[j] = 0.3 * (2 * U(rng) - 1);
      amp_[j] = 0.3 + 0.3 * U(rng);
      phase_[j] = 2 * M_PI * U(rng);
    }
    off_ = Vector(cfg.rows);
    off_amp_ = Vector(cfg.rows);
    off_phase_ = Vector(cfg.rows);
    for (int k = 0; k < cfg.rows; ++k) {
      off_[k] = 0.1 + 0.2 * U(rng);
      off_amp_[k] = 0.2 + 0.2 * U(rng);
      off_phase_[k] = 2 * M_PI * U(rng);
    }
    a0_ = 0.5 + U(rng);
  }

  int dim() const { return cfg_.dim; }
  int rows() const { return cfg_.rows; }
  /// Wide enough that every per-round optimum is interior.
  convex::Box box() const { return {Vector::Constant(cfg_.dim, -kBound), Vector::Constant(cfg_.dim, kBound)}; }

  double phase(int t) const { return cfg_.stationary ? 0.0 : 2 * M_PI * t / cfg_.horizon; }
  double weight(int t) const { return a0_ * (1.0 + 0.3 * std::sin(phase(t))); }
  Vector center(int t) const {
    Vector c(cfg_.dim);
    for (int j = 0; j < cfg_.dim; ++j) c[j] = center_[j] + amp_[j] * std::sin(phase(t) + phase_[j]);
    return c;
  }
  oco::AffineBlock constraint(int t) const {
    Vector h(cfg_.rows);
    for (int k = 0; k < cfg_.rows; ++k) {
      h[k] = off_[k] + off_amp_[k] * std::sin(2 * phase(t) + off_phase_[k]);
      if (cfg_.always_feasible) h[k] -= 10.0 * kBound * std::sqrt(static_cast<double>(cfg_.dim));
    }
    return {G_, h};
  }
  double cost(int t, const Vector& x) const { return weight(t) * (x - center(t)).squaredNorm(); }
  Vector gradient(int t, const Vector& x) const { return 2.0 * weight(t) * (x - center(t)); }

  /// Closed-form constrained minimizer (orthonormal constraint normals).
  Vector optimum(int t) const {
    Vector x = center(t);
    const auto g = constraint(t);
    const Vector v = g.eval(x);
    for (int k = 0; k < cfg_.rows; ++k)
      if (v[k] > 0) x -= v[k] * G_.row(k).transpose();
    return x;
  }

 private:
  static constexpr double kBound = 2.5;
  SyntheticOcoConfig cfg_;
  Matrix G_;
  Vector center_, amp_, phase_, off_, off_amp_, off_phase_;
  double a0_ = 1.0;
};

/// Runs the learner on the synthetic instance and fills the exact benchmark.
inline SyntheticOcoResult synthetic_oco_benchmark(const SyntheticOcoConfig& cfg) {
  require(cfg.horizon >= 100, "synthetic OCO benchmark: horizon must be at least 100");
  const SyntheticOcoInstance inst(cfg);
  const auto schedule = oco::make_schedule(cfg.horizon, cfg.chi, cfg.delta);
  const auto box = inst.box();
  auto bank = oco::init_bank(schedule, Vector::Zero(cfg.dim), cfg.rows);
  SyntheticOcoResult res;
  res.history.reserve(cfg.horizon);
  for (int t = 1; t <= cfg.horizon; ++t) {
    const Vector x = oco::decide(bank, box);
    oco::RevealedRound r;
    r.cost = [&inst, t](const Vector& v) { return inst.cost(t, v); };
    r.gradient = [&inst, t](const Vector& v) { return inst.gradient(t, v); };
    r.g = inst.constraint(t);
    oco::RoundRecord rec;
    rec.t = t;
    rec.x = x;
    rec.cost = r.cost(x);
    rec.g = r.g.eval(x);
    if (rec.g.size() == 0) rec.g = Vector::Zero(0);
    const Vector xs = inst.optimum(t);
    rec.x_star = xs;
    rec.cost_star = inst.cost(t, xs);
    res.history.push_back(std::move(rec));
    oco::reveal(bank, r);
  }
  res.metrics = oco::compute_metrics(res.history);
  return res;
}

}  // namespace mgd::sim
