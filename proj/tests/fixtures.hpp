#pragma once

// Small hand-sized instances shared by several test files.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mgd/dispatch_sim.hpp"
#include "mgd/microgrid.hpp"
#include "mgd/two_stage.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace mgd;
using namespace mgd::mg;

inline BoundDistribution flat(int T, double mu, double sigma = 0.0) {
  return {std::vector<double>(T, mu), std::vector<double>(T, sigma)};
}

/// Two buses, one GES and one DG at the far bus, T periods.
inline MicrogridSpec tiny_spec(int T = 2) {
  MicrogridSpec s;
  s.horizon = T;
  s.network.bus_count = 2;
  s.network.branches = {{0, 1, 0.01, 0.01}};
  s.network.base_mva = 1.0;
  s.network.v_min = 0.9;
  s.network.v_max = 1.1;
  s.network.monitored = {1};
  GesSpec g;
  g.id = "es";
  g.bus = 1;
  g.capacity_mwh = 1.0;
  g.eta_c = 0.9;
  g.eta_d = 0.9;
  g.cost_charge = 1.0;
  g.cost_discharge = 2.0;
  g.pc_max = flat(T, 0.6);
  g.pd_max = flat(T, 0.6);
  g.soc_max = flat(T, 0.9);
  g.soc_min = flat(T, 0.1);
  g.soc_init = 0.5;
  s.ges.push_back(g);
  DgSpec d;
  d.id = "dg";
  d.bus = 1;
  d.a = 10.0;
  d.b = 30.0;
  d.c = 0.0;
  d.p_min = 0.0;
  d.p_max = 1.0;
  d.ramp_up = 1.0;
  d.ramp_down = 1.0;
  d.p_init = 0.0;
  s.dg.push_back(d);
  s.pricing.dt = 1.0 / 12.0;
  s.pricing.c_pl1 = 0.0;
  s.pricing.c_pl2 = 0.0;
  s.pricing.tou = std::vector<double>(T, 50.0);
  s.load_share = {0.0, 1.0};
  return s;
}

/// Zero RES, flat load at the far bus, given prices.
inline ScenarioDay flat_day(int T, double load, const std::vector<double>& prices, const std::string& id = "flat") {
  ScenarioDay d;
  d.id = id;
  d.load = Matrix::Zero(T, 2);
  d.load.col(1).setConstant(load);
  d.res = Matrix::Zero(T, 2);
  d.price = Eigen::Map<const Vector>(prices.data(), T);
  return d;
}

// Brute-force value of the two-period tiny day program over a lattice of
// (P_c, P_d, P_DG) per period. Per-period quantities are tabulated first.
inline double lattice_day(const MicrogridSpec& s, const ScenarioDay& day, bool cycle, int k, double cycle_tol) {
  const auto& g = s.ges[0];
  const auto& d = s.dg[0];
  const auto pc = oracle::linspace(0, 0.6, k), pd = oracle::linspace(0, 0.6, k), pg = oracle::linspace(0, 1, 2 * k - 1);
  struct Cell {
    double c, dch, p, cost, grid;
    bool volt_ok;
  };
  std::vector<std::vector<Cell>> cells(2);
  for (int t = 0; t < 2; ++t) {
    const auto r = day.at(t);
    for (double c : pc)
      for (double dc : pd)
        for (double p : pg) {
          DispatchDecision x;
          x.p_c = Vector::Constant(1, c);
          x.p_d = Vector::Constant(1, dc);
          x.p_dg = Vector::Constant(1, p);
          const Vector v = monitored_voltages(s, x, r);
          cells[t].push_back({c, dc, p, stage_cost(s, x, r).total(), tie_line_power(s, x, r),
                              v[0] >= s.network.v_min && v[0] <= s.network.v_max});
        }
  }
  double best = kInf;
  for (const auto& a : cells[0]) {
    if (!a.volt_ok || std::abs(a.p - d.p_init) > d.ramp_up + 1e-12) continue;
    const double s1 = soc_transition(g.soc_init, a.c, a.dch, g, s.pricing.dt);
    if (s1 < 0.1 - 1e-12 || s1 > 0.9 + 1e-12) continue;
    for (const auto& b : cells[1]) {
      if (!b.volt_ok || std::abs(b.p - a.p) > d.ramp_up + 1e-12) continue;
      const double s2 = soc_transition(s1, b.c, b.dch, g, s.pricing.dt);
      if (s2 < 0.1 - 1e-12 || s2 > 0.9 + 1e-12) continue;
      if (cycle && std::abs(s2 - g.soc_init) > cycle_tol) continue;
      // smoothing with P_0 = P_1: c1 (P_2 - P_1)^2 + c2 sum (P_t - mean)^2
      const double half = 0.5 * (b.grid - a.grid);
      const double cost = a.cost + b.cost + s.pricing.c_pl1 * 4 * half * half + s.pricing.c_pl2 * 2 * half * half;
      best = std::min(best, cost);
    }
  }
  return best;
}

struct CollapseResult {
  double mad = 0.0;   // mean absolute tie-line deviation of M3 from M4, MW
  double peak = 0.0;  // peak absolute tie-line power of M4, MW
};

/// M3 with a library holding only the true day and a vanishing bandwidth,
/// against M4 on that day. Storage the learner can follow and a DG that stays
/// at its limit keep the comparison about the reference itself.
inline CollapseResult reference_collapse() {
  const int T = 288;
  auto s = tiny_spec(T);
  s.ges[0].capacity_mwh = 2.0;
  std::vector<double> price(T);
  for (int t = 0; t < T; ++t) price[t] = 100.0 + 40.0 * std::sin(2.0 * M_PI * t / T);
  auto day = flat_day(T, 4.0, price, "true");
  for (int t = 0; t < T; ++t) day.load(t, 1) = 4.0 + std::sin(2.0 * M_PI * t / T + 1.0);
  const sim::DispatchModel m(s);
  ts::ScenarioLibrary lib;
  lib.days = {day};
  lib.compute_scales();
  ts::ExPostSequences seq;
  seq.ges_ids = {"es"};
  seq.entries = {ts::solve_ex_post(s, day)};
  sim::SimOptions o;
  o.tau = 1e-6;
  const auto m3 = sim::run_day(sim::Policy::M3, m, day, &lib, &seq, o);
  const auto m4 = sim::run_m4(m, day, o);
  CollapseResult r;
  for (int t = 0; t < T; ++t) {
    r.mad += std::abs(m3.grid[t] - m4.grid[t]) / T;
    r.peak = std::max(r.peak, std::abs(m4.grid[t]));
  }
  return r;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("mgd-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixture
