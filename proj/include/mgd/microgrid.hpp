#pragma once

// Physical and economic microgrid model: devices, linearized branch-flow
// network, quantile tightening of uncertain device limits, stage costs and
// the day-long dispatch program.
//
// Units: MW, MVar, MWh, hours and $ everywhere outside the network layer;
// per-unit only inside distflow_solve and the voltage sensitivities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mgd/convex/qp.hpp"
#include "mgd/core.hpp"

namespace mgd::mg {

// ---------------------------------------------------------------- network

struct Branch {
  int from = 0;  // parent bus index (0 = substation)
  int to = 0;    // child bus index
  double r = 0.0;  // p.u.
  double x = 0.0;  // p.u.
};

struct NetworkSpec {
  int bus_count = 1;
  std::vector<Branch> branches;
  double v_source = 1.0;  // p.u.
  double v_min = 0.95;
  double v_max = 1.05;
  double base_mva = 10.0;
  std::vector<int> monitored;  // buses whose voltage limits are enforced and scored
};

/// Parent/branch structure of a radial network; rejects anything but a tree.
struct Topology {
  std::vector<int> parent;         // parent bus, -1 at the root
  std::vector<int> parent_branch;  // index into branches, -1 at the root
  std::vector<int> order;          // buses in breadth-first order from the root

  explicit Topology(const NetworkSpec& net) {
    const int B = net.bus_count;
    require(B >= 1, "network: need at least one bus");
    require(static_cast<int>(net.branches.size()) == B - 1, "network: a radial network with " + std::to_string(B) +
                                                                " buses has " + std::to_string(B - 1) + " branches");
    parent.assign(B, -1);
    parent_branch.assign(B, -1);
    std::vector<std::vector<int>> children(B);
    for (std::size_t k = 0; k < net.branches.size(); ++k) {
      const auto& b = net.branches[k];
      require(b.from >= 0 && b.from < B && b.to >= 0 && b.to < B && b.from != b.to,
              "network: branch " + std::to_string(k) + " has an invalid endpoint");
      require(b.r >= 0.0 && b.x >= 0.0, "network: negative branch impedance");
      require(b.to != 0, "network: the substation cannot have a parent");
      require(parent[b.to] < 0, "network: bus " + std::to_string(b.to) + " has two parents (cycle or mesh)");
      parent[b.to] = b.from;
      parent_branch[b.to] = static_cast<int>(k);
      children[b.from].push_back(b.to);
    }
    order.push_back(0);
    for (std::size_t i = 0; i < order.size(); ++i)
      for (int c : children[order[i]]) order.push_back(c);
    require(static_cast<int>(order.size()) == B, "network: topology is not a tree rooted at the substation (cycle detected)");
    require(net.v_min < net.v_max, "network: empty voltage band");
    require(net.v_source > 0.0 && net.base_mva > 0.0, "network: source voltage and MVA base must be positive");
    for (int m : net.monitored) require(m >= 0 && m < B, "network: monitored bus out of range");
  }
};

struct PowerFlowResult {
  Vector p_flow;  // MW into each bus from its parent (index = child bus; 0 unused)
  Vector q_flow;  // MVar
  Vector voltage;  // p.u. per bus
  double p_grid = 0.0;  // MW imported through the substation
  double q_grid = 0.0;
};

/// Lossless branch-flow solve; injections are net generation per bus in MW/MVar.
inline PowerFlowResult distflow_solve(const NetworkSpec& net, const Vector& p_inj, const Vector& q_inj) {
  const Topology topo(net);
  const int B = net.bus_count;
  require(p_inj.size() == B && q_inj.size() == B, "distflow: injection vectors must have one entry per bus");
  PowerFlowResult r;
  r.p_flow = Vector::Zero(B);
  r.q_flow = Vector::Zero(B);
  r.voltage = Vector::Constant(B, net.v_source);
  // Downstream accumulation: flow into a bus is the net demand of its subtree.
  Vector ps = -p_inj, qs = -q_inj;
  for (int i = B - 1; i >= 1; --i) {
    const int m = topo.order[i];
    r.p_flow[m] = ps[m];
    r.q_flow[m] = qs[m];
    ps[topo.parent[m]] += ps[m];
    qs[topo.parent[m]] += qs[m];
  }
  r.p_grid = ps[0];
  r.q_grid = qs[0];
  for (int i = 1; i < B; ++i) {
    const int m = topo.order[i];
    const auto& b = net.branches[topo.parent_branch[m]];
    const double p_pu = r.p_flow[m] / net.base_mva, q_pu = r.q_flow[m] / net.base_mva;
    r.voltage[m] = r.voltage[topo.parent[m]] - (b.r * p_pu + b.x * q_pu) / net.v_source;
  }
  return r;
}

/// Voltage as an affine map of the injections: V = V_S + Sp p_inj + Sq q_inj (MW/MVar in).
struct VoltageSensitivity {
  Matrix sp, sq;
};

inline VoltageSensitivity voltage_sensitivity(const NetworkSpec& net) {
  const Topology topo(net);
  const int B = net.bus_count;
  // Shared path impedance between m and n, by ancestry walk.
  std::vector<std::vector<int>> path(B);
  for (int m = 0; m < B; ++m)
    for (int v = m; v != 0; v = topo.parent[v]) path[m].push_back(v);
  VoltageSensitivity s{Matrix::Zero(B, B), Matrix::Zero(B, B)};
  const double k = 1.0 / (net.v_source * net.base_mva);
  std::vector<char> on_path(B);
  for (int m = 0; m < B; ++m) {
    std::fill(on_path.begin(), on_path.end(), 0);
    for (int v : path[m]) on_path[v] = 1;
    for (int n = 0; n < B; ++n) {
      double rs = 0, xs = 0;
      for (int v : path[n])
        if (on_path[v]) {
          rs += net.branches[topo.parent_branch[v]].r;
          xs += net.branches[topo.parent_branch[v]].x;
        }
      s.sp(m, n) = k * rs;
      s.sq(m, n) = k * xs;
    }
  }
  return s;
}

// ---------------------------------------------------------------- devices

/// Per-period mean and standard deviation of an uncertain limit.
struct BoundDistribution {
  std::vector<double> mu, sigma;
};

struct GesSpec {
  std::string id;
  int bus = 0;
  double capacity_mwh = 1.0;
  double eta_c = 0.95, eta_d = 0.95;
  double self_discharge = 0.0;    // fraction of SoC lost per interval
  std::vector<double> baseline;   // SoC fraction added per interval (empty: zero)
  double cost_charge = 0.0;       // $/MWh
  double cost_discharge = 0.0;    // $/MWh
  BoundDistribution pc_max, pd_max, soc_max, soc_min;
  double power_factor = 1.0;
  double soc_init = 0.5;
};

struct DgSpec {
  std::string id;
  int bus = 0;
  double a = 0.0, b = 0.0, c = 0.0;  // $/MW^2h, $/MWh, $/h
  double p_min = 0.0, p_max = 0.0;   // MW
  double ramp_up = 0.0, ramp_down = 0.0;  // MW per interval
  double p_init = 0.0;               // output before the first period
};

struct PricingSpec {
  std::vector<double> tou;  // base ToU profile used when synthesizing prices ($/MWh)
  double c_pl1 = 0.0, c_pl2 = 0.0;  // $/MW^2
  double phi1 = 1e4, phi2 = 1e-4;
  double dt = 1.0 / 12.0;
  double epsilon = 0.05;
  double load_power_factor = 0.95;
};

struct MicrogridSpec {
  int horizon = 288;
  NetworkSpec network;
  std::vector<GesSpec> ges;
  std::vector<DgSpec> dg;
  PricingSpec pricing;
  std::string distribution = "gaussian";
  std::vector<int> pv_buses, wind_buses;  // RES locations, used by the generator
  std::vector<double> load_share;         // per-bus share of the total load

  int num_ges() const { return static_cast<int>(ges.size()); }
  int num_dg() const { return static_cast<int>(dg.size()); }
  int decision_dim() const { return 2 * num_ges() + num_dg(); }
  void validate() const;
};

inline double reactive_ratio(double power_factor) {
  require(power_factor > 0.0 && power_factor <= 1.0, "power factor must lie in (0, 1]");
  return std::tan(std::acos(power_factor));
}

inline void MicrogridSpec::validate() const {
  require(horizon >= 1, "spec: horizon must be positive");
  const Topology topo(network);
  (void)topo;
  const int B = network.bus_count;
  auto per_period = [&](const BoundDistribution& d, const std::string& what) {
    require(static_cast<int>(d.mu.size()) == horizon && static_cast<int>(d.sigma.size()) == horizon,
            what + ": distribution must be defined for every period");
    for (double s : d.sigma) require(s >= 0.0, what + ": negative standard deviation");
  };
  for (const auto& g : ges) {
    require(g.bus >= 0 && g.bus < B, "GES " + g.id + ": bus out of range");
    require(g.capacity_mwh > 0.0, "GES " + g.id + ": capacity must be positive");
    require(g.eta_c > 0.0 && g.eta_c <= 1.0 && g.eta_d > 0.0 && g.eta_d <= 1.0, "GES " + g.id + ": efficiencies must lie in (0, 1]");
    require(g.self_discharge >= 0.0 && g.self_discharge < 1.0, "GES " + g.id + ": self-discharge must lie in [0, 1)");
    require(g.cost_charge < g.cost_discharge, "GES " + g.id + ": charging cost must be below discharging cost");
    require(g.baseline.empty() || static_cast<int>(g.baseline.size()) == horizon, "GES " + g.id + ": baseline length");
    require(g.soc_init >= 0.0 && g.soc_init <= 1.0, "GES " + g.id + ": initial SoC must lie in [0, 1]");
    per_period(g.pc_max, "GES " + g.id + " charge limit");
    per_period(g.pd_max, "GES " + g.id + " discharge limit");
    per_period(g.soc_max, "GES " + g.id + " SoC upper limit");
    per_period(g.soc_min, "GES " + g.id + " SoC lower limit");
    reactive_ratio(g.power_factor);
  }
  for (const auto& d : dg) {
    require(d.bus >= 0 && d.bus < B, "DG " + d.id + ": bus out of range");
    require(d.a >= 0.0, "DG " + d.id + ": quadratic cost must be nonnegative");
    require(d.p_min <= d.p_max, "DG " + d.id + ": p_min > p_max");
    require(d.ramp_up >= 0.0 && d.ramp_down >= 0.0, "DG " + d.id + ": negative ramp limit");
  }
  require(pricing.dt > 0.0, "pricing: interval must be positive");
  require(pricing.epsilon > 0.0 && pricing.epsilon <= 0.5, "pricing: epsilon must lie in (0, 0.5]");
  require(pricing.phi1 >= 0.0 && pricing.phi2 >= 0.0, "pricing: tracking weights must be nonnegative");
  require(pricing.c_pl1 >= 0.0 && pricing.c_pl2 >= 0.0, "pricing: smoothing coefficients must be nonnegative");
  reactive_ratio(pricing.load_power_factor);
  for (int b : pv_buses) require(b >= 0 && b < B, "spec: PV bus out of range");
  for (int b : wind_buses) require(b >= 0 && b < B, "spec: wind bus out of range");
  require(load_share.empty() || static_cast<int>(load_share.size()) == B, "spec: load share needs one entry per bus");
}

// ---------------------------------------------------------------- scenarios

/// Realized exogenous data of one period.
struct Realization {
  int t = 0;
  Vector load;  // MW per bus
  Vector res;   // MW per bus
  double price = 0.0;  // $/MWh
};

/// One day of exogenous data, one row per period.
struct ScenarioDay {
  std::string id;
  Matrix load;  // T x B, MW
  Matrix res;   // T x B, MW
  Vector price;  // T, $/MWh
  std::optional<double> initial_grid;  // tie-line power before the first period

  int horizon() const { return static_cast<int>(price.size()); }
  int buses() const { return static_cast<int>(load.cols()); }
  Realization at(int t) const {
    require(t >= 0 && t < horizon(), "scenario " + id + ": period out of range");
    return {t, load.row(t).transpose(), res.row(t).transpose(), price[t]};
  }
  void validate(int T, int B) const {
    require(horizon() == T, "scenario " + id + ": expected " + std::to_string(T) + " periods, found " + std::to_string(horizon()));
    require(load.rows() == T && res.rows() == T && load.cols() == B && res.cols() == B,
            "scenario " + id + ": load/RES matrices must be T x buses");
    require((load.array() >= 0).all() && (res.array() >= 0).all(), "scenario " + id + ": loads and RES must be nonnegative");
    require(load.allFinite() && res.allFinite() && price.allFinite(), "scenario " + id + ": non-finite value");
  }
};

// ---------------------------------------------------------------- chance bounds

namespace detail {

/// Uniform on (0, 1) from the top 53 bits; platform independent.
inline double unit_uniform(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

/// Standard normal pair by Box-Muller.
inline std::pair<double, double> box_muller(std::mt19937_64& rng) {
  const double u1 = unit_uniform(rng), u2 = unit_uniform(rng);
  const double r = std::sqrt(-2.0 * std::log(u1));
  return {r * std::cos(2 * M_PI * u2), r * std::sin(2 * M_PI * u2)};
}

}  // namespace detail

inline constexpr std::size_t kQuantileSamples = 1000000;
inline constexpr std::uint64_t kQuantileSeed = 0x5eed0f9a17ULL;

/// Draws one zero-mean unit-variance sample of the named distribution.
inline bool known_distribution(const std::string& name) { return name == "gaussian" || name == "uniform" || name == "laplace"; }

/// Inverse CDF of the normalized distribution at probability p, by Monte
/// Carlo with a fixed seed; memoized per (distribution, p).
inline double normalized_quantile(const std::string& dist, double p, std::size_t samples = kQuantileSamples) {
  require(known_distribution(dist), "unknown distribution '" + dist + "' (expected gaussian, uniform or laplace)");
  require(p > 0.0 && p < 1.0, "quantile probability must lie in (0, 1)");
  static std::mutex mu;
  static std::map<std::tuple<std::string, double, std::size_t>, double> cache;
  const auto key = std::make_tuple(dist, p, samples);
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  std::mt19937_64 rng(derive_seed(kQuantileSeed, string_id(dist)));
  std::vector<double> v(samples);
  for (std::size_t i = 0; i < samples; i += 2) {
    double a, b;
    if (dist == "gaussian") {
      std::tie(a, b) = detail::box_muller(rng);
    } else if (dist == "uniform") {
      a = std::sqrt(3.0) * (2 * detail::unit_uniform(rng) - 1);
      b = std::sqrt(3.0) * (2 * detail::unit_uniform(rng) - 1);
    } else {
      const double u = detail::unit_uniform(rng) - 0.5, w = detail::unit_uniform(rng) - 0.5;
      a = -std::copysign(std::log(1 - 2 * std::abs(u)), u) / std::sqrt(2.0);
      b = -std::copysign(std::log(1 - 2 * std::abs(w)), w) / std::sqrt(2.0);
    }
    v[i] = a;
    if (i + 1 < samples) v[i + 1] = b;
  }
  // Empirical quantile with linear interpolation between order statistics.
  const double pos = p * static_cast<double>(samples - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double vlo = v[lo];
  double q = vlo;
  if (lo + 1 < samples) {
    const double vhi = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    q = vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
  }
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key, q);
  return q;
}

enum class BoundSide { Upper, Lower };

/// Deterministic bound enforcing P(bound holds) >= 1 - epsilon. Upper limits
/// shrink to mu - F^-1(1-eps) sigma, lower limits rise to mu + F^-1(1-eps) sigma.
inline double reformulate_chance_bound(double mu, double sigma, double epsilon, BoundSide side,
                                       const std::string& dist = "gaussian") {
  require(sigma >= 0.0, "chance bound: negative standard deviation");
  require(epsilon > 0.0 && epsilon <= 0.5, "chance bound: epsilon must lie in (0, 0.5]");
  require(known_distribution(dist), "unknown distribution '" + dist + "' (expected gaussian, uniform or laplace)");
  if (sigma == 0.0) return mu;
  // All supported distributions are symmetric, so the median is exactly 0.
  const double z = epsilon == 0.5 ? 0.0 : normalized_quantile(dist, 1.0 - epsilon);
  return side == BoundSide::Upper ? mu - z * sigma : mu + z * sigma;
}

/// Tightened per-period limits of one GES.
struct GesBounds {
  Vector pc_max, pd_max, soc_min, soc_max;
};

/// Quantile-tightened limits for every GES; power limits are clipped at zero
/// and the SoC band to [0, 1].
inline std::vector<GesBounds> reformulated_bounds(const MicrogridSpec& spec) {
  std::vector<GesBounds> out;
  const double eps = spec.pricing.epsilon;
  for (const auto& g : spec.ges) {
    GesBounds b;
    b.pc_max.resize(spec.horizon);
    b.pd_max.resize(spec.horizon);
    b.soc_min.resize(spec.horizon);
    b.soc_max.resize(spec.horizon);
    for (int t = 0; t < spec.horizon; ++t) {
      b.pc_max[t] = std::max(0.0, reformulate_chance_bound(g.pc_max.mu[t], g.pc_max.sigma[t], eps, BoundSide::Upper, spec.distribution));
      b.pd_max[t] = std::max(0.0, reformulate_chance_bound(g.pd_max.mu[t], g.pd_max.sigma[t], eps, BoundSide::Upper, spec.distribution));
      b.soc_max[t] = std::clamp(reformulate_chance_bound(g.soc_max.mu[t], g.soc_max.sigma[t], eps, BoundSide::Upper, spec.distribution), 0.0, 1.0);
      b.soc_min[t] = std::clamp(reformulate_chance_bound(g.soc_min.mu[t], g.soc_min.sigma[t], eps, BoundSide::Lower, spec.distribution), 0.0, 1.0);
      require(b.soc_min[t] <= b.soc_max[t], "GES " + g.id + ": tightened SoC band is empty in period " + std::to_string(t));
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------- device and cost formulas

inline double baseline_at(const GesSpec& g, int t) { return g.baseline.empty() ? 0.0 : g.baseline[t]; }

/// SoC after one interval of charging P_c and discharging P_d (MW).
inline double soc_transition(double soc, double p_c, double p_d, const GesSpec& g, double dt, double baseline = 0.0) {
  require(p_c >= 0.0 && p_d >= 0.0, "soc_transition: powers must be nonnegative");
  return (1.0 - g.self_discharge) * soc + g.eta_c * p_c * dt / g.capacity_mwh - p_d * dt / (g.eta_d * g.capacity_mwh) + baseline;
}

/// Decision layout: [P_c, P_d] per GES, then P_DG per DG.
struct DispatchDecision {
  Vector p_c, p_d, p_dg;

  static DispatchDecision from_vector(const MicrogridSpec& spec, const Vector& x) {
    require(x.size() == spec.decision_dim(), "decision vector has the wrong dimension");
    DispatchDecision d;
    const int G = spec.num_ges();
    d.p_c.resize(G);
    d.p_d.resize(G);
    for (int j = 0; j < G; ++j) {
      d.p_c[j] = x[2 * j];
      d.p_d[j] = x[2 * j + 1];
    }
    d.p_dg = x.tail(spec.num_dg());
    return d;
  }
  Vector to_vector() const {
    const Eigen::Index G = p_c.size();
    Vector x(2 * G + p_dg.size());
    for (Eigen::Index j = 0; j < G; ++j) {
      x[2 * j] = p_c[j];
      x[2 * j + 1] = p_d[j];
    }
    x.tail(p_dg.size()) = p_dg;
    return x;
  }
};

inline int idx_pc(int j) { return 2 * j; }
inline int idx_pd(int j) { return 2 * j + 1; }
inline int idx_dg(const MicrogridSpec& spec, int k) { return 2 * spec.num_ges() + k; }

/// Net active and reactive injections per bus (MW, MVar).
inline std::pair<Vector, Vector> injections(const MicrogridSpec& spec, const DispatchDecision& x, const Realization& real) {
  const double kl = reactive_ratio(spec.pricing.load_power_factor);
  Vector p = real.res - real.load;
  Vector q = -kl * real.load;
  for (int j = 0; j < spec.num_ges(); ++j) {
    const double net = x.p_d[j] - x.p_c[j];
    p[spec.ges[j].bus] += net;
    q[spec.ges[j].bus] += reactive_ratio(spec.ges[j].power_factor) * net;
  }
  for (int k = 0; k < spec.num_dg(); ++k) p[spec.dg[k].bus] += x.p_dg[k];
  return {p, q};
}

/// Import through the substation (positive = buying), lossless balance.
inline double tie_line_power([[maybe_unused]] const MicrogridSpec& spec, const DispatchDecision& x, const Realization& real) {
  return real.load.sum() - real.res.sum() - x.p_dg.sum() - (x.p_d - x.p_c).sum();
}

struct CostParts {
  double ges = 0.0, grid = 0.0, dg = 0.0;
  double total() const { return ges + grid + dg; }
};

inline CostParts stage_cost(const MicrogridSpec& spec, const DispatchDecision& x, const Realization& real) {
  const double dt = spec.pricing.dt;
  CostParts c;
  for (int j = 0; j < spec.num_ges(); ++j)
    c.ges += (spec.ges[j].cost_discharge * x.p_d[j] + spec.ges[j].cost_charge * x.p_c[j]) * dt;
  c.grid = real.price * tie_line_power(spec, x, real) * dt;
  for (int k = 0; k < spec.num_dg(); ++k) {
    const auto& d = spec.dg[k];
    const double p = x.p_dg[k];
    c.dg += (d.a * p * p + d.b * p + d.c) * dt;
  }
  return c;
}

/// sum_t c1 (P_t - P_{t-1})^2 + c2 (P_t - mean P)^2.
inline double smoothing_penalty(const std::vector<double>& grid, double p0, double c1, double c2) {
  require(!grid.empty(), "smoothing_penalty: empty sequence");
  const double mean = std::accumulate(grid.begin(), grid.end(), 0.0) / static_cast<double>(grid.size());
  double s = 0.0, prev = p0;
  for (double p : grid) {
    s += c1 * (p - prev) * (p - prev) + c2 * (p - mean) * (p - mean);
    prev = p;
  }
  return s;
}

struct FluctuationIndices {
  double xi1 = 0.0;  // mean absolute step
  double xi2 = 0.0;  // mean absolute deviation from the mean
};

inline FluctuationIndices fluctuation_indices(const std::vector<double>& grid) {
  require(grid.size() >= 2, "fluctuation_indices: need at least two periods");
  const double T = static_cast<double>(grid.size());
  const double mean = std::accumulate(grid.begin(), grid.end(), 0.0) / T;
  FluctuationIndices f;
  for (std::size_t t = 0; t + 1 < grid.size(); ++t) f.xi1 += std::abs(grid[t + 1] - grid[t]);
  f.xi1 /= T - 1;
  for (double p : grid) f.xi2 += std::abs(p - mean);
  f.xi2 /= T;
  return f;
}

/// Percentage of (bus, period) samples inside [v_min, v_max].
inline double voltage_satisfaction(const std::vector<Vector>& profiles, double v_min, double v_max) {
  require(v_min < v_max, "voltage_satisfaction: empty limit band");
  std::size_t n = 0, ok = 0;
  for (const auto& v : profiles)
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      ++n;
      if (v[i] >= v_min && v[i] <= v_max) ++ok;
    }
  require(n > 0, "voltage_satisfaction: no samples");
  return 100.0 * static_cast<double>(ok) / static_cast<double>(n);
}

/// Monitored-bus voltages for a decision and realization.
inline Vector monitored_voltages(const MicrogridSpec& spec, const DispatchDecision& x, const Realization& real) {
  const auto [p, q] = injections(spec, x, real);
  const auto pf = distflow_solve(spec.network, p, q);
  Vector v(spec.network.monitored.size());
  for (std::size_t i = 0; i < spec.network.monitored.size(); ++i) v[i] = pf.voltage[spec.network.monitored[i]];
  return v;
}

/// Affine voltage model of the monitored buses in terms of the decision:
/// V = v0 + Jx, with v0 the voltage at x = 0 for the given realization.
struct VoltageModel {
  Matrix J;   // monitored x decision_dim
  Vector v0;  // monitored
};

inline Matrix voltage_jacobian(const MicrogridSpec& spec, const VoltageSensitivity& s) {
  const int M = static_cast<int>(spec.network.monitored.size());
  Matrix J = Matrix::Zero(M, spec.decision_dim());
  for (int i = 0; i < M; ++i) {
    const int m = spec.network.monitored[i];
    for (int j = 0; j < spec.num_ges(); ++j) {
      const int b = spec.ges[j].bus;
      const double d = s.sp(m, b) + reactive_ratio(spec.ges[j].power_factor) * s.sq(m, b);
      J(i, idx_pc(j)) = -d;
      J(i, idx_pd(j)) = d;
    }
    for (int k = 0; k < spec.num_dg(); ++k) J(i, idx_dg(spec, k)) = s.sp(spec.network.monitored[i], spec.dg[k].bus);
  }
  return J;
}

inline Vector voltage_offset(const MicrogridSpec& spec, const VoltageSensitivity& s, const Vector& load, const Vector& res) {
  const double kl = reactive_ratio(spec.pricing.load_power_factor);
  const Vector p = res - load;
  const Vector q = -kl * load;
  Vector v0(spec.network.monitored.size());
  for (std::size_t i = 0; i < spec.network.monitored.size(); ++i) {
    const int m = spec.network.monitored[i];
    v0[i] = spec.network.v_source + s.sp.row(m).dot(p) + s.sq.row(m).dot(q);
  }
  return v0;
}

// ---------------------------------------------------------------- day-long program

/// Variable layout of the day program. Per period t: [P_c, P_d, SoC] per
/// GES, P_DG per DG, P_grid; one trailing variable for the mean import.
/// Branch flows and voltages are affine in these and enter as rows.
struct DayLayout {
  int G = 0, D = 0, T = 0;
  int per_period() const { return 3 * G + D + 1; }
  int num_vars() const { return T * per_period() + 1; }
  int pc(int t, int j) const { return t * per_period() + 3 * j; }
  int pd(int t, int j) const { return t * per_period() + 3 * j + 1; }
  int soc(int t, int j) const { return t * per_period() + 3 * j + 2; }
  int dg(int t, int k) const { return t * per_period() + 3 * G + k; }
  int grid(int t) const { return t * per_period() + 3 * G + D; }
  int mean_grid() const { return T * per_period(); }
};

struct DayProgram {
  convex::QuadraticProgram qp;
  DayLayout layout;
};

inline DayProgram build_day_qp(const MicrogridSpec& spec, const ScenarioDay& day, bool include_soc_cycle) {
  spec.validate();
  const int T = spec.horizon;
  const int B = spec.network.bus_count;
  day.validate(T, B);
  DayLayout L{spec.num_ges(), spec.num_dg(), T};
  const double dt = spec.pricing.dt;
  const auto bounds = reformulated_bounds(spec);
  const auto sens = voltage_sensitivity(spec.network);
  const Matrix J = voltage_jacobian(spec, sens);
  convex::QpBuilder b(L.num_vars());

  for (int t = 0; t < T; ++t) {
    const double price = day.price[t];
    for (int j = 0; j < L.G; ++j) {
      const auto& g = spec.ges[j];
      b.set_bounds(L.pc(t, j), 0.0, bounds[j].pc_max[t]);
      b.set_bounds(L.pd(t, j), 0.0, bounds[j].pd_max[t]);
      b.set_bounds(L.soc(t, j), bounds[j].soc_min[t], bounds[j].soc_max[t]);
      b.add_linear(L.pc(t, j), g.cost_charge * dt);
      b.add_linear(L.pd(t, j), g.cost_discharge * dt);
      // SoC_t - (1-E) SoC_{t-1} - eta_c dt/S P_c + dt/(eta_d S) P_d = pi_t
      std::vector<std::pair<int, double>> row{{L.soc(t, j), 1.0},
                                              {L.pc(t, j), -g.eta_c * dt / g.capacity_mwh},
                                              {L.pd(t, j), dt / (g.eta_d * g.capacity_mwh)}};
      double rhs = baseline_at(g, t);
      if (t == 0)
        rhs += (1.0 - g.self_discharge) * g.soc_init;
      else
        row.emplace_back(L.soc(t - 1, j), -(1.0 - g.self_discharge));
      b.add_row(row, rhs, rhs);
    }
    for (int k = 0; k < L.D; ++k) {
      const auto& d = spec.dg[k];
      double lo = d.p_min, hi = d.p_max;
      if (t == 0) {
        lo = std::max(lo, d.p_init - d.ramp_down);
        hi = std::min(hi, d.p_init + d.ramp_up);
      } else {
        b.add_row({{L.dg(t, k), 1.0}, {L.dg(t - 1, k), -1.0}}, -d.ramp_down, d.ramp_up);
      }
      require(lo <= hi, "DG " + d.id + ": initial ramp window does not meet the output limits");
      b.set_bounds(L.dg(t, k), lo, hi);
      b.add_quad(L.dg(t, k), L.dg(t, k), 2.0 * d.a * dt);
      b.add_linear(L.dg(t, k), d.b * dt);
      b.add_constant(d.c * dt);
    }
    b.add_linear(L.grid(t), price * dt);
    // P_grid + sum P_DG + sum (P_d - P_c) = load - RES
    std::vector<std::pair<int, double>> bal{{L.grid(t), 1.0}};
    for (int k = 0; k < L.D; ++k) bal.emplace_back(L.dg(t, k), 1.0);
    for (int j = 0; j < L.G; ++j) {
      bal.emplace_back(L.pd(t, j), 1.0);
      bal.emplace_back(L.pc(t, j), -1.0);
    }
    const double net = day.load.row(t).sum() - day.res.row(t).sum();
    b.add_row(bal, net, net);
    // Monitored voltages, affine in the decision.
    const Vector v0 = voltage_offset(spec, sens, day.load.row(t).transpose(), day.res.row(t).transpose());
    for (int i = 0; i < J.rows(); ++i) {
      std::vector<std::pair<int, double>> row;
      for (int j = 0; j < L.G; ++j) {
        row.emplace_back(L.pc(t, j), J(i, idx_pc(j)));
        row.emplace_back(L.pd(t, j), J(i, idx_pd(j)));
      }
      for (int k = 0; k < L.D; ++k) row.emplace_back(L.dg(t, k), J(i, idx_dg(spec, k)));
      b.add_row(row, spec.network.v_min - v0[i], spec.network.v_max - v0[i]);
    }
    // Smoothing: c1 (P_t - P_{t-1})^2 + c2 (P_t - mean)^2
    if (t > 0)
      b.add_square({{L.grid(t), 1.0}, {L.grid(t - 1), -1.0}}, 0.0, spec.pricing.c_pl1);
    else if (day.initial_grid)
      b.add_square({{L.grid(0), 1.0}}, -*day.initial_grid, spec.pricing.c_pl1);
    b.add_square({{L.grid(t), 1.0}, {L.mean_grid(), -1.0}}, 0.0, spec.pricing.c_pl2);
  }
  {
    std::vector<std::pair<int, double>> row{{L.mean_grid(), static_cast<double>(T)}};
    for (int t = 0; t < T; ++t) row.emplace_back(L.grid(t), -1.0);
    b.add_row(row, 0.0, 0.0);
  }
  if (include_soc_cycle)
    for (int j = 0; j < L.G; ++j) b.add_row({{L.soc(T - 1, j), 1.0}}, spec.ges[j].soc_init, spec.ges[j].soc_init);
  return {b.build(), L};
}

/// Trajectories read back from a solved day program.
struct DayTrajectory {
  std::vector<Vector> actions;          // decision vectors per period
  std::vector<std::vector<double>> soc;  // [ges][t], state after period t
  std::vector<double> grid;              // MW per period
};

inline DayTrajectory extract_trajectory(const MicrogridSpec& spec, const DayLayout& L, const Vector& x) {
  DayTrajectory tr;
  tr.soc.assign(L.G, std::vector<double>(L.T));
  for (int t = 0; t < L.T; ++t) {
    Vector a(spec.decision_dim());
    for (int j = 0; j < L.G; ++j) {
      a[idx_pc(j)] = std::max(0.0, x[L.pc(t, j)]);
      a[idx_pd(j)] = std::max(0.0, x[L.pd(t, j)]);
      tr.soc[j][t] = x[L.soc(t, j)];
    }
    for (int k = 0; k < L.D; ++k) a[idx_dg(spec, k)] = x[L.dg(t, k)];
    tr.actions.push_back(a);
    tr.grid.push_back(x[L.grid(t)]);
  }
  return tr;
}

}  // namespace mgd::mg
