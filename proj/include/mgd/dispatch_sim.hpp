#pragma once

// Day-level simulation: each period becomes one online round
//
//   f_t(x) = operating cost + phi1 sum_j (SoC'_j(x) - R^SoC_j)^2 + phi2 (P_grid(x) - R^grid)^2
//   g_t(x) = two-sided monitored-voltage rows (realized load and RES substituted)
//   X_t    = device, ramp, tightened power and SoC-band limits around the current state
//
// and the policies that play it: the reference-tracking learner (M3), its
// greedy, fixed-reference and strict-tracking variants, and the hindsight
// day program (M4).

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgd/convex/prox.hpp"
#include "mgd/convex/qp.hpp"
#include "mgd/microgrid.hpp"
#include "mgd/oco.hpp"
#include "mgd/two_stage.hpp"

namespace mgd::sim {

using convex::AffineBlock;
using convex::Box;
using mg::DispatchDecision;
using mg::MicrogridSpec;
using mg::Realization;
using mg::ScenarioDay;

enum class Policy { M3, M3a, M3b, M3c, M4 };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::M3: return "M3";
    case Policy::M3a: return "M3-a";
    case Policy::M3b: return "M3-b";
    case Policy::M3c: return "M3-c";
    case Policy::M4: return "M4";
  }
  return "unknown";
}

inline Policy parse_policy(const std::string& s) {
  for (Policy p : {Policy::M3, Policy::M3a, Policy::M3b, Policy::M3c, Policy::M4})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown policy '" + s + "' (expected M3, M3-a, M3-b, M3-c or M4)");
}

/// Spec-derived data that every round needs.
struct DispatchModel {
  MicrogridSpec spec;
  std::vector<mg::GesBounds> bounds;  // tightened limits
  mg::VoltageSensitivity sens;
  Matrix J;  // monitored voltages per unit of decision

  explicit DispatchModel(MicrogridSpec s) : spec(std::move(s)) {
    spec.validate();
    bounds = mg::reformulated_bounds(spec);
    sens = mg::voltage_sensitivity(spec.network);
    J = mg::voltage_jacobian(spec, sens);
  }
  int dim() const { return spec.decision_dim(); }
  int voltage_rows() const { return 2 * static_cast<int>(spec.network.monitored.size()); }
};

struct SystemState {
  int t = 0;
  std::vector<double> soc;  // per GES, before period t
  Vector p_dg_prev;         // DG outputs of period t-1
  std::optional<double> grid_prev;

  static SystemState initial(const MicrogridSpec& spec, std::optional<double> initial_grid = std::nullopt) {
    SystemState s;
    for (const auto& g : spec.ges) s.soc.push_back(g.soc_init);
    s.p_dg_prev = Vector(spec.num_dg());
    for (int k = 0; k < spec.num_dg(); ++k) s.p_dg_prev[k] = spec.dg[k].p_init;
    s.grid_prev = initial_grid;
    return s;
  }
};

/// Tracking targets of one period; absent means the terms are dropped.
struct TrackingTarget {
  std::vector<double> soc;
  double grid = 0.0;
  double phi1 = 0.0, phi2 = 0.0;
};

/// One round: f(x) = 1/2 x'Hx + c'x + k, g(x) = Gx + h <= 0, x in the box.
struct RoundProblem {
  Matrix H;
  Vector c;
  double k = 0.0;
  AffineBlock g;
  Box box;
  double soc_relaxation = 0.0;  // SoC-band slack needed to make the box nonempty
  std::string relaxation_note;

  double cost(const Vector& x) const { return 0.5 * x.dot(H * x) + c.dot(x) + k; }
  Vector gradient(const Vector& x) const { return H * x + c; }
};

namespace detail {

/// Adds w (a'x + b)^2 to a quadratic.
inline void add_square(RoundProblem& r, const Vector& a, double b, double w) {
  if (w == 0.0) return;
  r.H += 2.0 * w * a * a.transpose();
  r.c += 2.0 * w * b * a;
  r.k += w * b * b;
}

}  // namespace detail

/// Decision box for period t given the current state. When the SoC band
/// cannot be met, the band is widened by the smallest uniform slack that
/// makes the box nonempty and the slack is reported.
inline Box round_box(const DispatchModel& m, const SystemState& st, double* relaxation = nullptr, std::string* note = nullptr) {
  const auto& spec = m.spec;
  const int t = st.t;
  const double dt = spec.pricing.dt;
  Box box{Vector::Zero(m.dim()), Vector::Zero(m.dim())};
  double worst = 0.0;
  for (int j = 0; j < spec.num_ges(); ++j) {
    const auto& g = spec.ges[j];
    const auto& b = m.bounds[j];
    const double base = (1.0 - g.self_discharge) * st.soc[j] + mg::baseline_at(g, t);
    const double kc = g.eta_c * dt / g.capacity_mwh;    // SoC per MW charged
    const double kd = dt / (g.eta_d * g.capacity_mwh);  // SoC per MW discharged
    double smin = b.soc_min[t], smax = b.soc_max[t];
    // Smallest slack e with [smin - e, smax + e] reachable from base.
    double slack = 0.0;
    if (base > smax) slack = std::max(slack, base - smax - kd * b.pd_max[t]);
    if (base < smin) slack = std::max(slack, smin - base - kc * b.pc_max[t]);
    if (slack > 0.0) {
      worst = std::max(worst, slack);
      if (note) *note += "GES " + g.id + " SoC band unreachable in period " + std::to_string(t) + "; ";
      smin -= slack;
      smax += slack;
    }
    // Charging alone must not pass smax, discharging alone must not pass smin,
    // and leaving the band forces a minimum charge or discharge.
    box.lo[mg::idx_pc(j)] = std::clamp((smin - base) / kc, 0.0, b.pc_max[t]);
    box.hi[mg::idx_pc(j)] = std::clamp((smax - base) / kc, 0.0, b.pc_max[t]);
    box.lo[mg::idx_pd(j)] = std::clamp((base - smax) / kd, 0.0, b.pd_max[t]);
    box.hi[mg::idx_pd(j)] = std::clamp((base - smin) / kd, 0.0, b.pd_max[t]);
  }
  for (int k = 0; k < spec.num_dg(); ++k) {
    const auto& d = spec.dg[k];
    double lo = std::max(d.p_min, st.p_dg_prev[k] - d.ramp_down);
    double hi = std::min(d.p_max, st.p_dg_prev[k] + d.ramp_up);
    if (lo > hi) {  // only after an externally imposed state; stay as close as allowed
      if (note) *note += "DG " + d.id + " ramp window misses its limits in period " + std::to_string(t) + "; ";
      lo = hi = std::clamp(st.p_dg_prev[k], d.p_min, d.p_max);
    }
    box.lo[mg::idx_dg(spec, k)] = lo;
    box.hi[mg::idx_dg(spec, k)] = hi;
  }
  if (relaxation) *relaxation = worst;
  require(!box.empty(), "round box is empty in period " + std::to_string(t));
  return box;
}

/// Builds f_t, g_t and X_t for the realization `real` of period state.t.
/// Without `operating_cost` f_t holds the tracking terms only. A positive
/// `voltage_margin` (p.u.) tightens both voltage limits.
inline RoundProblem build_round_problem(const DispatchModel& m, const SystemState& st, const TrackingTarget& ref,
                                        const Realization& real, bool operating_cost = true,
                                        double voltage_margin = 0.0) {
  const auto& spec = m.spec;
  const int n = m.dim();
  const int G = spec.num_ges();
  require(real.load.size() == spec.network.bus_count && real.res.size() == spec.network.bus_count,
          "build_round_problem: realization has the wrong bus count");
  const double dt = spec.pricing.dt;
  RoundProblem r;
  r.H = Matrix::Zero(n, n);
  r.c = Vector::Zero(n);
  r.box = round_box(m, st, &r.soc_relaxation, &r.relaxation_note);

  // Tie-line import is affine: net - sum DG - sum (P_d - P_c).
  const double net = real.load.sum() - real.res.sum();
  Vector grid_a = Vector::Zero(n);
  for (int j = 0; j < G; ++j) {
    grid_a[mg::idx_pc(j)] = 1.0;
    grid_a[mg::idx_pd(j)] = -1.0;
  }
  for (int k = 0; k < spec.num_dg(); ++k) grid_a[mg::idx_dg(spec, k)] = -1.0;

  if (operating_cost) {
    for (int j = 0; j < G; ++j) {
      r.c[mg::idx_pc(j)] += spec.ges[j].cost_charge * dt;
      r.c[mg::idx_pd(j)] += spec.ges[j].cost_discharge * dt;
    }
    r.c += real.price * dt * grid_a;
    r.k += real.price * dt * net;
    for (int k = 0; k < spec.num_dg(); ++k) {
      const auto& d = spec.dg[k];
      const int i = mg::idx_dg(spec, k);
      r.H(i, i) += 2.0 * d.a * dt;
      r.c[i] += d.b * dt;
      r.k += d.c * dt;
    }
  }

  // Tracking of the post-action SoC and the tie-line power.
  if (ref.phi1 > 0.0) {
    require(static_cast<int>(ref.soc.size()) == G, "build_round_problem: one SoC reference per GES expected");
    for (int j = 0; j < G; ++j) {
      const auto& g = spec.ges[j];
      Vector a = Vector::Zero(n);
      a[mg::idx_pc(j)] = g.eta_c * dt / g.capacity_mwh;
      a[mg::idx_pd(j)] = -dt / (g.eta_d * g.capacity_mwh);
      const double base = (1.0 - g.self_discharge) * st.soc[j] + mg::baseline_at(g, st.t);
      detail::add_square(r, a, base - ref.soc[j], ref.phi1);
    }
  }
  if (ref.phi2 > 0.0) detail::add_square(r, grid_a, net - ref.grid, ref.phi2);

  // Voltage rows: V = v0 + J x within [v_min, v_max].
  const Vector v0 = mg::voltage_offset(spec, m.sens, real.load, real.res);
  const int M = static_cast<int>(v0.size());
  r.g.G = Matrix(2 * M, n);
  r.g.h = Vector(2 * M);
  r.g.G.topRows(M) = m.J;
  r.g.G.bottomRows(M) = -m.J;
  r.g.h.head(M) = v0.array() - (spec.network.v_max - voltage_margin);
  r.g.h.tail(M) = (spec.network.v_min + voltage_margin) - v0.array();
  return r;
}

/// SoC after applying x in period state.t.
inline std::vector<double> advance_soc(const MicrogridSpec& spec, const SystemState& st, const Vector& x) {
  std::vector<double> soc(spec.num_ges());
  for (int j = 0; j < spec.num_ges(); ++j)
    soc[j] = mg::soc_transition(st.soc[j], std::max(0.0, x[mg::idx_pc(j)]), std::max(0.0, x[mg::idx_pd(j)]), spec.ges[j],
                                spec.pricing.dt, mg::baseline_at(spec.ges[j], st.t));
  return soc;
}

// ---------------------------------------------------------------- noise

/// Scales every load and RES entry by (1 + X/100), X ~ N(0, sigma_c^2),
/// clamped at zero. Draws come in bus order, loads first.
inline Realization inject_noise(const Realization& real, double sigma_c, std::mt19937_64& rng) {
  require(sigma_c >= 0.0, "inject_noise: sigma must be nonnegative");
  Realization out = real;
  if (sigma_c == 0.0) return out;
  auto perturb = [&](Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double x = sigma_c * mg::detail::box_muller(rng).first;
      v[i] = std::max(0.0, v[i] * (1.0 + x / 100.0));
    }
  };
  perturb(out.load);
  perturb(out.res);
  return out;
}

/// Applies a fixed percent perturbation X (one entry per load then RES component).
inline Realization apply_noise(const Realization& real, const Vector& x_percent) {
  require(x_percent.size() == real.load.size() + real.res.size(), "apply_noise: one draw per component expected");
  Realization out = real;
  const Eigen::Index B = real.load.size();
  for (Eigen::Index i = 0; i < B; ++i) out.load[i] = std::max(0.0, real.load[i] * (1.0 + x_percent[i] / 100.0));
  for (Eigen::Index i = 0; i < B; ++i) out.res[i] = std::max(0.0, real.res[i] * (1.0 + x_percent[B + i] / 100.0));
  return out;
}

// ---------------------------------------------------------------- results

struct DayResult {
  std::string policy;
  std::string day_id;
  double noise_sigma = 0.0;
  std::vector<Vector> actions;
  std::vector<std::vector<double>> soc;   // [ges][t], after period t
  std::vector<double> grid;               // MW per period
  std::vector<mg::CostParts> round_costs;  // per period
  mg::CostParts cost;                      // sums of round_costs
  double smoothing = 0.0;                  // ex-post smoothing penalty of the tie line
  double total_cost = 0.0;                 // cost.total() + smoothing
  mg::FluctuationIndices fluctuation;
  double voltage_satisfaction = 0.0;       // percent of monitored samples in the band
  std::optional<oco::OcoMetrics> oco;
  std::vector<oco::RoundRecord> history;   // OCO rounds (learning policies only)
  int relaxed_rounds = 0;
  double wall_seconds = 0.0;
};

struct SimOptions {
  double phi1 = 1e4, phi2 = 1e-4;
  double tau = 1.0;
  double chi = 0.1, delta = 0.2;
  double noise_sigma = 0.0;    // percent
  std::uint64_t seed = 1;
  bool round_benchmark = false;  // solve the per-round optima for dynamic regret
  bool timing = false;           // record wall-clock time
  double voltage_tol = 1e-6;     // slack when counting voltage samples as satisfied
  double voltage_margin = 0.002; // p.u. tightening of the limits the learner sees
  ts::SolverOptions solver;
  // Called right after the decision of each period; lets tests inspect or
  // alter the day data between rounds.
  std::function<void(int)> after_decision;
};

namespace detail {

inline void finalize(DayResult& r, const MicrogridSpec& spec, const ScenarioDay& day, const std::vector<Vector>& volts,
                     double vtol) {
  r.cost = {};
  for (const auto& c : r.round_costs) {
    r.cost.ges += c.ges;
    r.cost.grid += c.grid;
    r.cost.dg += c.dg;
  }
  const double p0 = day.initial_grid ? *day.initial_grid : r.grid.front();
  r.smoothing = mg::smoothing_penalty(r.grid, p0, spec.pricing.c_pl1, spec.pricing.c_pl2);
  r.total_cost = r.cost.total() + r.smoothing;
  r.fluctuation = r.grid.size() >= 2 ? mg::fluctuation_indices(r.grid) : mg::FluctuationIndices{};
  r.voltage_satisfaction =
      mg::voltage_satisfaction(volts, spec.network.v_min - vtol, spec.network.v_max + vtol);
}

/// Physical accounting of one executed action on the true realization.
struct Ledger {
  const MicrogridSpec& spec;
  DayResult& r;
  std::vector<Vector> volts;

  void record(const SystemState& st, const Vector& x, const Realization& truth, std::vector<double>& soc_next) {
    const auto d = DispatchDecision::from_vector(spec, x);
    r.actions.push_back(x);
    r.round_costs.push_back(mg::stage_cost(spec, d, truth));
    r.grid.push_back(mg::tie_line_power(spec, d, truth));
    volts.push_back(mg::monitored_voltages(spec, d, truth));
    soc_next = advance_soc(spec, st, x);
    for (int j = 0; j < spec.num_ges(); ++j) r.soc[j].push_back(soc_next[j]);
  }
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Independent noise stream of one (seed, policy, day) run.
inline std::mt19937_64 noise_stream(std::uint64_t seed, Policy p, const std::string& day_id) {
  return std::mt19937_64(derive_seed(seed, string_id(std::string("noise/") + to_string(p)), string_id(day_id)));
}

/// Solves every realized round in hindsight; infeasible rounds stay absent.
inline void round_benchmark(std::vector<oco::RoundRecord>& history, const std::vector<RoundProblem>& rounds,
                            const ts::SolverOptions& opt = {}) {
  require(history.size() == rounds.size(), "round_benchmark: one problem per recorded round expected");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& rp = rounds[i];
    const int n = static_cast<int>(rp.c.size());
    convex::QpBuilder b(n);
    for (int a = 0; a < n; ++a)
      for (int c = 0; c < n; ++c) b.add_quad(a, c, a <= c ? (a == c ? rp.H(a, a) : rp.H(a, c)) : 0.0);
    for (int a = 0; a < n; ++a) {
      b.add_linear(a, rp.c[a]);
      b.set_bounds(a, rp.box.lo[a], rp.box.hi[a]);
    }
    b.add_constant(rp.k);
    for (Eigen::Index k = 0; k < rp.g.rows(); ++k) {
      std::vector<std::pair<int, double>> row;
      for (int a = 0; a < n; ++a)
        if (rp.g.G(k, a) != 0.0) row.emplace_back(a, rp.g.G(k, a));
      b.add_row(row, -kInf, -rp.g.h[k]);
    }
    convex::QpSettings st;
    st.method = convex::QpMethod::InteriorPoint;
    st.tol = opt.tol;
    st.max_iter = opt.max_iter;
    const auto rep = convex::solve_qp(b.build(), st);
    if (rep.ok()) {
      history[i].x_star = rep.x;
      history[i].cost_star = rp.cost(rep.x);
    } else {
      history[i].x_star.reset();
      history[i].cost_star.reset();
    }
  }
}

/// Tiny QP: the box-feasible action closest to the tracking targets.
inline Vector strict_tracking_action(const RoundProblem& rp, const ts::SolverOptions& opt) {
  const int n = static_cast<int>(rp.c.size());
  convex::QpBuilder b(n);
  for (int a = 0; a < n; ++a) {
    for (int c = a; c < n; ++c) b.add_quad(a, c, rp.H(a, c));
    b.add_linear(a, rp.c[a]);
    b.set_bounds(a, rp.box.lo[a], rp.box.hi[a]);
  }
  convex::QpSettings st;
  st.method = convex::QpMethod::InteriorPoint;
  st.tol = opt.tol;
  st.max_iter = opt.max_iter;
  const auto rep = convex::solve_qp(b.build(), st);
  convex::expect_optimal(rep, "strict tracking round");
  return rp.box.project(rep.x);
}

/// Runs one online policy over the true day.
inline DayResult run_day(Policy policy, const DispatchModel& m, const ScenarioDay& day, const ts::ScenarioLibrary* lib,
                         const ts::ExPostSequences* seq, const SimOptions& opt) {
  require(policy != Policy::M4, "run_day: M4 is played by run_m4");
  const auto t_start = std::chrono::steady_clock::now();
  const auto& spec = m.spec;
  const int T = spec.horizon;
  require(day.horizon() == T, "run_day: day " + day.id + " has the wrong horizon");
  const bool needs_ref = policy != Policy::M3a;
  if (needs_ref) {
    require(lib && seq && seq->size() >= 1, std::string("run_day: ") + to_string(policy) + " needs an offline library");
    require(lib->size() == seq->size(), "run_day: library and sequences differ in size");
    require(static_cast<int>(seq->ges_ids.size()) == spec.num_ges(), "run_day: sequences do not match the GES set");
  }

  DayResult res;
  res.policy = to_string(policy);
  res.day_id = day.id;
  res.noise_sigma = opt.noise_sigma;
  res.soc.assign(spec.num_ges(), {});
  detail::Ledger ledger{spec, res, {}};

  auto rng = noise_stream(opt.seed, policy, day.id);
  SystemState st = SystemState::initial(spec, day.initial_grid);
  std::optional<ts::ReferenceState> kref;
  if (policy == Policy::M3 || policy == Policy::M3c) kref = ts::init_reference(*lib, opt.tau);

  const auto schedule = oco::make_schedule(T, opt.chi, opt.delta);
  Vector x0 = Vector::Zero(m.dim());
  for (int k = 0; k < spec.num_dg(); ++k) x0[mg::idx_dg(spec, k)] = spec.dg[k].p_init;
  auto bank = oco::init_bank(schedule, x0, m.voltage_rows());
  std::vector<RoundProblem> true_rounds;

  for (int t = 0; t < T; ++t) {
    st.t = t;
    // Reference for period t from the observations of periods before t.
    TrackingTarget target;
    Vector weights;
    if (needs_ref) {
      if (policy == Policy::M3b || t == 0)
        weights = Vector::Constant(seq->size(), 1.0 / seq->size());
      else
        weights = ts::kernel_weights(kref->d2, t, opt.tau);
      const auto rv = ts::reference(weights, *seq, t);
      target.soc = rv.soc;
      target.grid = rv.grid;
      target.phi1 = opt.phi1;
      target.phi2 = opt.phi2;
      if (kref) {
        kref->weights = weights;
        kref->soc_ref = rv.soc;
        kref->grid_ref = rv.grid;
      }
    }

    // Decide.
    Vector x;
    if (policy == Policy::M3c) {
      // Expected realization: for the decision only the net load matters.
      Realization forecast;
      forecast.t = t;
      forecast.load = Vector::Zero(spec.network.bus_count);
      forecast.res = Vector::Zero(spec.network.bus_count);
      for (int s = 0; s < lib->size(); ++s) {
        forecast.load += weights[s] * lib->days[s].load.row(t).transpose();
        forecast.res += weights[s] * lib->days[s].res.row(t).transpose();
      }
      const RoundProblem track = build_round_problem(m, st, target, forecast, false);
      if (track.soc_relaxation > 0.0) ++res.relaxed_rounds;
      x = strict_tracking_action(track, opt.solver);
    } else {
      const Box box = round_box(m, st);
      x = oco::decide(bank, box);
    }
    if (opt.after_decision) opt.after_decision(t);

    // Reveal period t.
    const Realization truth = day.at(t);
    const Realization obs = inject_noise(truth, opt.noise_sigma, rng);
    if (policy != Policy::M3c) {
      const RoundProblem seen = build_round_problem(m, st, target, obs, true, opt.voltage_margin);
      if (seen.soc_relaxation > 0.0) ++res.relaxed_rounds;
      oco::RevealedRound rr;
      rr.cost = [&seen](const Vector& v) { return seen.cost(v); };
      rr.gradient = [&seen](const Vector& v) { return seen.gradient(v); };
      rr.g = seen.g;
      RoundProblem actual = build_round_problem(m, st, target, truth);
      oco::RoundRecord rec;
      rec.t = t + 1;
      rec.x = x;
      rec.cost = actual.cost(x);
      rec.g = actual.g.eval(x);
      res.history.push_back(std::move(rec));
      if (opt.round_benchmark) true_rounds.push_back(std::move(actual));
      oco::reveal(bank, rr);
    }
    if (kref) ts::update_distances(*kref, obs, *lib);

    // Advance.
    std::vector<double> soc_next;
    ledger.record(st, x, truth, soc_next);
    st.soc = soc_next;
    st.p_dg_prev = x.tail(spec.num_dg());
    st.grid_prev = res.grid.back();
  }

  if (!res.history.empty()) {
    if (opt.round_benchmark) round_benchmark(res.history, true_rounds, opt.solver);
    res.oco = oco::compute_metrics(res.history);
  }
  detail::finalize(res, spec, day, ledger.volts, opt.voltage_tol);
  if (opt.timing) res.wall_seconds = detail::seconds_since(t_start);
  return res;
}

/// Hindsight day program on the true day, replayed through the same accounting.
inline DayResult run_m4(const DispatchModel& m, const ScenarioDay& day, const SimOptions& opt = {}) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto& spec = m.spec;
  const auto prog = mg::build_day_qp(spec, day, true);
  convex::QpSettings qs;
  qs.method = convex::QpMethod::InteriorPoint;
  qs.tol = opt.solver.tol;
  qs.max_iter = opt.solver.max_iter;
  const auto rep = convex::solve_qp(prog.qp, qs);
  convex::expect_optimal(rep, "day program for " + day.id);
  const auto tr = mg::extract_trajectory(spec, prog.layout, rep.x);

  DayResult res;
  res.policy = to_string(Policy::M4);
  res.day_id = day.id;
  res.soc.assign(spec.num_ges(), {});
  detail::Ledger ledger{spec, res, {}};
  SystemState st = SystemState::initial(spec, day.initial_grid);
  for (int t = 0; t < spec.horizon; ++t) {
    st.t = t;
    std::vector<double> soc_next;
    ledger.record(st, tr.actions[t], day.at(t), soc_next);
    st.soc = soc_next;
  }
  detail::finalize(res, spec, day, ledger.volts, opt.voltage_tol);
  if (opt.timing) res.wall_seconds = detail::seconds_since(t_start);
  return res;
}

/// Runs any policy.
inline DayResult run_policy(Policy p, const DispatchModel& m, const ScenarioDay& day, const ts::ScenarioLibrary* lib,
                            const ts::ExPostSequences* seq, const SimOptions& opt) {
  return p == Policy::M4 ? run_m4(m, day, opt) : run_day(p, m, day, lib, seq, opt);
}

}  // namespace mgd::sim
