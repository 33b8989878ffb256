#pragma once

// Offline learning of ex-post optimal trajectories and the online
// kernel-weighted reference built from them.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mgd/convex/qp.hpp"
#include "mgd/microgrid.hpp"

namespace mgd::ts {

using mg::MicrogridSpec;
using mg::Realization;
using mg::ScenarioDay;

/// Historical pool of days plus the per-component scales used to normalize
/// observations before measuring distances.
struct ScenarioLibrary {
  std::vector<ScenarioDay> days;
  Vector load_scale;  // per bus, MW
  Vector res_scale;   // per bus, MW

  int size() const { return static_cast<int>(days.size()); }
  int horizon() const { return days.empty() ? 0 : days.front().horizon(); }
  int buses() const { return days.empty() ? 0 : days.front().buses(); }

  /// Standard deviation of each column over all library samples, so a unit
  /// of distance is a typical spread of that component; the largest absolute
  /// value where a column is constant, 1 where it is all zero.
  void compute_scales() {
    require(!days.empty(), "scenario library is empty");
    const int B = buses();
    for (const auto& d : days)
      require(d.horizon() == horizon() && d.buses() == B, "scenario " + d.id + ": shape differs from " + days.front().id);
    const auto column_scale = [&](auto get) {
      Vector sum = Vector::Zero(B), sq = Vector::Zero(B), mx = Vector::Zero(B);
      double n = 0.0;
      for (const auto& d : days) {
        const Matrix& m = get(d);
        sum += m.colwise().sum().transpose();
        sq += m.array().square().matrix().colwise().sum().transpose();
        mx = mx.cwiseMax(m.cwiseAbs().colwise().maxCoeff().transpose());
        n += m.rows();
      }
      Vector s(B);
      for (int b = 0; b < B; ++b) {
        const double mean = sum[b] / n;
        const double var = std::max(0.0, sq[b] / n - mean * mean);
        const double sd = std::sqrt(var);
        s[b] = sd > 1e-9 * std::max(1.0, mx[b]) ? sd : (mx[b] > 0.0 ? mx[b] : 1.0);
      }
      return s;
    };
    load_scale = column_scale([](const ScenarioDay& d) -> const Matrix& { return d.load; });
    res_scale = column_scale([](const ScenarioDay& d) -> const Matrix& { return d.res; });
  }
};

/// Ex-post optimal trajectories of one historical day.
struct ExPostEntry {
  std::string id;
  std::vector<std::vector<double>> soc;  // [ges][t], SoC after period t
  std::vector<double> grid;              // [t], MW
  double cost = 0.0;                     // optimal day objective, $
};

struct ExPostSequences {
  std::vector<std::string> ges_ids;
  std::vector<ExPostEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
};

struct SolverOptions {
  double tol = 1e-6;
  int max_iter = 20000;
};

/// Solves the day program (with the SoC cycle) in hindsight.
inline ExPostEntry solve_ex_post(const MicrogridSpec& spec, const ScenarioDay& day, const SolverOptions& opt = {}) {
  const auto prog = mg::build_day_qp(spec, day, true);
  convex::QpSettings st;
  st.method = convex::QpMethod::InteriorPoint;
  st.tol = opt.tol;
  st.max_iter = opt.max_iter;
  const auto rep = convex::solve_qp(prog.qp, st);
  convex::expect_optimal(rep, "ex-post program for scenario " + day.id);
  const auto tr = mg::extract_trajectory(spec, prog.layout, rep.x);
  ExPostEntry e;
  e.id = day.id;
  e.soc = tr.soc;
  e.grid = tr.grid;
  e.cost = rep.objective;
  return e;
}

/// Online state of the kernel regression over the library.
struct ReferenceState {
  Vector d2;       // cumulative squared distance per scenario
  int t = 0;       // periods observed so far
  double tau = 1.0;
  Vector weights;  // current kernel weights
  std::vector<double> soc_ref;  // per GES
  double grid_ref = 0.0;
};

inline ReferenceState init_reference(const ScenarioLibrary& lib, double tau) {
  require(tau > 0.0, "reference: bandwidth must be positive");
  require(lib.size() >= 1, "reference: library is empty");
  ReferenceState s;
  s.d2 = Vector::Zero(lib.size());
  s.tau = tau;
  s.weights = Vector::Constant(lib.size(), 1.0 / lib.size());
  return s;
}

/// Normalized observation vector of one period: RES components, then loads.
inline Vector observation_vector(const ScenarioLibrary& lib, const Vector& load, const Vector& res) {
  require(load.size() == lib.buses() && res.size() == lib.buses(), "observation: one load and RES value per bus expected");
  Vector v(2 * lib.buses());
  v.head(lib.buses()) = res.cwiseQuotient(lib.res_scale);
  v.tail(lib.buses()) = load.cwiseQuotient(lib.load_scale);
  return v;
}

/// Adds the squared distance of period `obs.t` to every scenario.
inline void update_distances(ReferenceState& state, const Realization& obs, const ScenarioLibrary& lib) {
  require(obs.t == state.t, "update_distances: observations must arrive in period order");
  require(state.d2.size() == lib.size(), "update_distances: state does not match the library");
  const Vector o = observation_vector(lib, obs.load, obs.res);
  for (int s = 0; s < lib.size(); ++s) {
    const auto& day = lib.days[s];
    require(obs.t < day.horizon(), "update_distances: period beyond the library horizon");
    const Vector v = observation_vector(lib, day.load.row(obs.t).transpose(), day.res.row(obs.t).transpose());
    state.d2[s] += (o - v).squaredNorm();
  }
  ++state.t;
}

/// Softmax of -d2 / (t tau), computed with the smallest distance shifted to zero.
inline Vector kernel_weights(const Vector& d2, int t, double tau) {
  require(tau > 0.0 && t >= 1, "kernel_weights: need tau > 0 and t >= 1");
  require(d2.size() >= 1, "kernel_weights: no scenarios");
  const double h = static_cast<double>(t) * tau;
  const double dmin = d2.minCoeff();
  Vector w = (-(d2.array() - dmin) / h).exp().matrix();
  w /= w.sum();
  return w;
}

inline Vector kernel_weights(const ReferenceState& s, int t, double tau) { return kernel_weights(s.d2, t, tau); }

struct ReferenceValues {
  std::vector<double> soc;  // per GES
  double grid = 0.0;
};

/// Weighted average of the stored trajectories at period t.
inline ReferenceValues reference(const Vector& weights, const ExPostSequences& seq, int t) {
  require(weights.size() == seq.size() && seq.size() >= 1, "reference: one weight per stored sequence expected");
  ReferenceValues r;
  const std::size_t G = seq.entries.front().soc.size();
  r.soc.assign(G, 0.0);
  for (int s = 0; s < seq.size(); ++s) {
    const auto& e = seq.entries[s];
    require(t >= 0 && t < static_cast<int>(e.grid.size()), "reference: period out of range");
    for (std::size_t j = 0; j < G; ++j) r.soc[j] += weights[s] * e.soc[j][t];
    r.grid += weights[s] * e.grid[t];
  }
  return r;
}

/// Uniform average of all stored trajectories (the fixed reference).
inline ReferenceValues average_reference(const ExPostSequences& seq, int t) {
  return reference(Vector::Constant(seq.size(), 1.0 / seq.size()), seq, t);
}

}  // namespace mgd::ts
