#pragma once

// Default desk-scale microgrid: the 33-bus radial feeder with two storage
// assets (a battery and a flexible-load virtual store), two dispatchable
// generators, one PV and one wind site, about 5 MW of load.

#include <cmath>
#include <vector>

#include "mgd/microgrid.hpp"

namespace mgd::mg {

namespace detail {

// Branch data of the 33-bus test feeder: from, to (1-based), R, X in ohms.
struct FeederBranch {
  int from, to;
  double r, x;
};
inline const std::vector<FeederBranch>& feeder33_branches() {
  static const std::vector<FeederBranch> b = {
      {1, 2, 0.0922, 0.0470},   {2, 3, 0.4930, 0.2511},   {3, 4, 0.3660, 0.1864},   {4, 5, 0.3811, 0.1941},
      {5, 6, 0.8190, 0.7070},   {6, 7, 0.1872, 0.6188},   {7, 8, 0.7114, 0.2351},   {8, 9, 1.0300, 0.7400},
      {9, 10, 1.0440, 0.7400},  {10, 11, 0.1966, 0.0650}, {11, 12, 0.3744, 0.1238}, {12, 13, 1.4680, 1.1550},
      {13, 14, 0.5416, 0.7129}, {14, 15, 0.5910, 0.5260}, {15, 16, 0.7463, 0.5450}, {16, 17, 1.2890, 1.7210},
      {17, 18, 0.7320, 0.5740}, {2, 19, 0.1640, 0.1565},  {19, 20, 1.5042, 1.3554}, {20, 21, 0.4095, 0.4784},
      {21, 22, 0.7089, 0.9373}, {3, 23, 0.4512, 0.3083},  {23, 24, 0.8980, 0.7091}, {24, 25, 0.8960, 0.7011},
      {6, 26, 0.2030, 0.1034},  {26, 27, 0.2842, 0.1447}, {27, 28, 1.0590, 0.9337}, {28, 29, 0.8042, 0.7006},
      {29, 30, 0.5075, 0.2585}, {30, 31, 0.9744, 0.9630}, {31, 32, 0.3105, 0.3619}, {32, 33, 0.3410, 0.5302}};
  return b;
}
// Nominal active loads (kW) of buses 1..33, used only as load shares.
inline const std::vector<double>& feeder33_loads_kw() {
  static const std::vector<double> l = {0,   100, 90,  120, 60, 60, 200, 200, 60, 60, 45,  60,  60,  120, 60,  60, 60,
                                        90,  90,  90,  90,  90, 90, 420, 420, 60, 60, 60,  120, 200, 150, 210, 60};
  return l;
}

inline double tier_price(double hour, double valley, double flat, double peak) {
  if (hour < 7.0) return valley;
  if ((hour >= 10.0 && hour < 12.0) || (hour >= 17.0 && hour < 21.0)) return peak;
  return flat;
}

}  // namespace detail

struct DefaultSpecOptions {
  int horizon = 288;
  // Multiplies every branch impedance. The desk-scale load (about 5 MW) is
  // above the feeder's nominal 3.7 MW, so the lines are shortened to keep the
  // day program feasible while the voltage limits still bind at peak.
  double impedance_scale = 0.6;
  double base_kv = 12.66;
  double base_mva = 10.0;
};

/// Bus numbering follows the feeder's 1-based labels minus one.
inline MicrogridSpec default_spec(const DefaultSpecOptions& opt = {}) {
  MicrogridSpec s;
  const int T = opt.horizon;
  s.horizon = T;
  const double dt = 24.0 / T;
  auto& net = s.network;
  net.bus_count = 33;
  net.base_mva = opt.base_mva;
  const double zbase = opt.base_kv * opt.base_kv / opt.base_mva;
  for (const auto& b : detail::feeder33_branches())
    net.branches.push_back({b.from - 1, b.to - 1, opt.impedance_scale * b.r / zbase, opt.impedance_scale * b.x / zbase});
  net.v_source = 1.0;
  net.v_min = 0.95;
  net.v_max = 1.05;
  net.monitored = {17, 21, 24, 29, 32};  // feeder ends and device buses

  const auto& kw = detail::feeder33_loads_kw();
  double total = 0;
  for (double v : kw) total += v;
  for (double v : kw) s.load_share.push_back(v / total);

  auto hour_of = [&](int t) { return (t + 0.5) * dt; };

  GesSpec es;
  es.id = "es";
  es.bus = 17;
  es.capacity_mwh = 5.6;
  es.eta_c = 0.95;
  es.eta_d = 0.95;
  es.self_discharge = 0.0;
  es.cost_charge = 2.0;
  es.cost_discharge = 4.0;
  es.power_factor = 0.95;
  es.soc_init = 0.5;
  for (int t = 0; t < T; ++t) {
    es.pc_max.mu.push_back(1.4);
    es.pc_max.sigma.push_back(0.03);
    es.pd_max.mu.push_back(1.4);
    es.pd_max.sigma.push_back(0.03);
    es.soc_max.mu.push_back(0.92);
    es.soc_max.sigma.push_back(0.01);
    es.soc_min.mu.push_back(0.08);
    es.soc_min.sigma.push_back(0.01);
  }

  // Flexible-load store: availability follows occupancy, the band breathes
  // over the day, and the baseline term models the natural SoC drift.
  GesSpec ves;
  ves.id = "ves";
  ves.bus = 32;
  ves.capacity_mwh = 2.1;
  ves.eta_c = 0.98;
  ves.eta_d = 0.98;
  ves.self_discharge = 0.001;
  ves.cost_charge = 1.0;
  ves.cost_discharge = 3.0;
  ves.power_factor = 0.9;
  ves.soc_init = 0.5;
  for (int t = 0; t < T; ++t) {
    const double h = hour_of(t);
    const double occ = 0.5 + 0.5 * std::exp(-std::pow((h - 14.0) / 6.0, 2));
    ves.pc_max.mu.push_back(0.7 * occ);
    ves.pc_max.sigma.push_back(0.02);
    ves.pd_max.mu.push_back(0.7 * occ);
    ves.pd_max.sigma.push_back(0.02);
    ves.soc_max.mu.push_back(0.85 + 0.03 * std::cos(2 * M_PI * (h - 15.0) / 24.0));
    ves.soc_max.sigma.push_back(0.015);
    ves.soc_min.mu.push_back(0.15 + 0.03 * std::cos(2 * M_PI * (h - 3.0) / 24.0));
    ves.soc_min.sigma.push_back(0.015);
    ves.baseline.push_back(0.0005 + 0.0004 * std::sin(2 * M_PI * (h - 9.0) / 24.0));
  }
  s.ges = {es, ves};

  DgSpec d1;
  d1.id = "dg1";
  d1.bus = 24;
  d1.a = 12.0;
  d1.b = 52.0;
  d1.c = 6.0;
  d1.p_min = 0.0;
  d1.p_max = 1.5;
  d1.ramp_up = 0.1;
  d1.ramp_down = 0.1;
  d1.p_init = 0.3;
  DgSpec d2 = d1;
  d2.id = "dg2";
  d2.bus = 29;
  d2.a = 16.0;
  d2.b = 58.0;
  d2.c = 4.0;
  d2.p_max = 1.0;
  d2.ramp_up = 0.08;
  d2.ramp_down = 0.08;
  d2.p_init = 0.2;
  s.dg = {d1, d2};

  auto& pr = s.pricing;
  pr.dt = dt;
  pr.c_pl1 = 0.5;
  pr.c_pl2 = 0.05;
  pr.phi1 = 1e4;
  pr.phi2 = 1e-4;
  pr.epsilon = 0.05;
  pr.load_power_factor = 0.95;
  for (int t = 0; t < T; ++t) pr.tou.push_back(detail::tier_price(hour_of(t), 40.0, 70.0, 110.0));

  s.pv_buses = {17};
  s.wind_buses = {32};
  return s;
}

}  // namespace mgd::mg
