// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. The first argument is the unit test binary.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mgd/app.hpp"
#include "mgd/default_spec.hpp"
#include "qp_check.hpp"

using namespace mgd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Benchmark rows keyed by (policy, sigma label).
struct BenchRow {
  double cost = 0, vs = 0;
};
using BenchTable = std::map<std::pair<std::string, std::string>, BenchRow>;

BenchTable read_benchmark(const fs::path& file) {
  std::istringstream in(io::read_file(file));
  std::string line;
  std::getline(in, line);
  BenchTable t;
  while (std::getline(in, line)) {
    std::vector<std::string> c;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) c.push_back(cell);
    require(c.size() == 10, "acceptance: unexpected benchmark row '" + line + "'");
    t[{c[0], c[1]}] = {std::stod(c[3]), std::stod(c[8])};
  }
  return t;
}

int run_benchmark(const fixture::TempDir& dir, const std::string& config, const fs::path& out, std::uint64_t seed) {
  const fs::path cfg = dir.path / "config.json";
  io::write_file_atomic(cfg, config);
  std::ostringstream log;
  app::CommandOptions o;
  o.config = cfg;
  o.out = out;
  o.seed = seed;
  o.threads = 0;
  o.log = &log;
  return app::cmd_benchmark(o);
}

// Regret and violations grow sublinearly on the synthetic problem.
Outcome regret_sublinearity() {
  const app::RegretConfig rc;
  const auto s = app::regret_benchmark(rc, 20240601, 0);
  bool per_round_falls = true;
  for (std::size_t k = 1; k < s.rows.size(); ++k) {
    const auto& a = s.rows[k - 1];
    const auto& b = s.rows[k];
    per_round_falls = per_round_falls && b.regret / b.horizon < a.regret / a.horizon && b.vio_hard / b.horizon < a.vio_hard / a.horizon;
  }
  Outcome o;
  o.pass = s.regret_slope <= rc.regret_slope_max && s.violation_slope <= rc.violation_slope_max && per_round_falls;
  o.detail = "regret slope " + fmt("%.3f", s.regret_slope) + " (max " + fmt("%.2f", rc.regret_slope_max) + "), violation slope " +
             fmt("%.3f", s.violation_slope) + " (max " + fmt("%.2f", rc.violation_slope_max) + ")" +
             (per_round_falls ? ", per-round values fall" : ", per-round values do not fall");
  return o;
}

// Both QP methods agree with an independent projected-gradient oracle.
Outcome qp_equivalence() {
  std::mt19937_64 rng(917);
  double worst_obj = 0, worst_kkt = 0;
  int failed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    const int m = static_cast<int>(rng() % 11);
    const auto d = oracle::random_qp(rng, n, m);
    const auto ref = oracle::projected_gradient(d, 1e-8);
    if (ref.residual >= 1e-7) {
      ++failed;
      continue;
    }
    for (auto method : {convex::QpMethod::Admm, convex::QpMethod::InteriorPoint}) {
      convex::QpSettings st;
      st.method = method;
      const auto r = convex::solve_qp(qp_check::from_dense(d), st);
      if (!r.ok()) {
        ++failed;
        continue;
      }
      worst_obj = std::max(worst_obj, std::abs(r.objective - ref.objective) / std::max(1.0, std::abs(ref.objective)));
      const auto k = qp_check::kkt(d, r);
      worst_kkt = std::max({worst_kkt, k.stationarity, k.feasibility, k.complementarity});
    }
  }
  Outcome o;
  o.pass = failed == 0 && worst_obj <= 1e-4 && worst_kkt <= 1e-5;
  o.detail = "50 programs, both methods: worst relative objective gap " + fmt("%.1e", worst_obj) + ", worst KKT residual " +
             fmt("%.1e", worst_kkt) + (failed ? ", " + std::to_string(failed) + " unsolved" : "");
  return o;
}

Outcome unit_suite(const std::string& binary) {
  Outcome o;
  if (binary.empty()) {
    o.detail = "no unit test binary given";
    return o;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = std::system(("\"" + binary + "\" --gtest_brief=1 > /dev/null 2>&1").c_str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.pass = rc == 0 && secs < 30.0;
  o.detail = std::string(rc == 0 ? "all unit tests pass" : "unit tests fail") + " in " + fmt("%.1f", secs) + " s (limit 30 s)";
  return o;
}

// Cost ordering and voltage satisfaction on the default feeder, noiseless.
Outcome ordering(const BenchTable& t, bool voltage) {
  auto get = [&](const std::string& p) { return t.at({p, "0"}); };
  const auto m3 = get("M3"), m3a = get("M3-a"), m3b = get("M3-b"), m3c = get("M3-c"), m4 = get("M4");
  Outcome o;
  if (!voltage) {
    o.pass = m4.cost <= m3.cost && m3.cost <= std::min(m3b.cost, m3c.cost) && std::min(m3b.cost, m3c.cost) <= m3a.cost &&
             m3.cost <= 1.10 * m4.cost;
    o.detail = "mean cost M4 " + fmt("%.0f", m4.cost) + ", M3 " + fmt("%.0f", m3.cost) + ", M3-b " + fmt("%.0f", m3b.cost) +
               ", M3-c " + fmt("%.0f", m3c.cost) + ", M3-a " + fmt("%.0f", m3a.cost) + " $; M3 is " +
               fmt("%.2f", 100.0 * (m3.cost / m4.cost - 1.0)) + "% above M4";
  } else {
    o.pass = m3.vs >= m3a.vs && m3.vs >= 95.0 && std::abs(m4.vs - 100.0) < 1e-9;
    o.detail = "voltage satisfaction M3 " + fmt("%.2f", m3.vs) + "%, M3-a " + fmt("%.2f", m3a.vs) + "%, M4 " + fmt("%.2f", m4.vs) + "%";
  }
  return o;
}

// Mean M3 cost rises and voltage satisfaction falls as observations get noisier.
Outcome noise_trend(const fixture::TempDir& dir) {
  std::vector<double> sigmas;
  for (int k = 1; k <= 5; ++k) sigmas.push_back(10.0 * k / 3.0);
  const app::json cfg = {{"noise", {{"sigma", sigmas}}},
                         {"data", {{"library", {{"synthetic", {{"days", 20}}}}}, {"test", {{"synthetic", {{"days", 20}}}}}}},
                         {"run", {{"policies", app::json::array({"M3", "M4"})}}}};
  Outcome o;
  if (run_benchmark(dir, cfg.dump(), dir.path / "noise", 11) != app::kOk) {
    o.detail = "benchmark run failed";
    return o;
  }
  const auto t = read_benchmark(dir.path / "noise" / "benchmark.csv");
  std::vector<BenchRow> rows;
  for (double s : sigmas) rows.push_back(t.at({"M3", io::format_double(s)}));
  int cost_inv = 0, vs_inv = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    cost_inv += rows[k].cost < rows[k - 1].cost;
    vs_inv += rows[k].vs > rows[k - 1].vs;
  }
  o.pass = cost_inv <= 1 && vs_inv <= 1;
  o.detail = "M3 over sigma 10/3..50/3: cost " + fmt("%.0f", rows.front().cost) + " to " + fmt("%.0f", rows.back().cost) + " $ (" +
             std::to_string(cost_inv) + " inversions), satisfaction " + fmt("%.2f", rows.front().vs) + "% to " +
             fmt("%.2f", rows.back().vs) + "% (" + std::to_string(vs_inv) + " inversions), at most 1 allowed";
  return o;
}

// Poisoning the current and future periods leaves every online decision unchanged.
Outcome causality() {
  const sim::DispatchModel model(mg::default_spec());
  io::SynthConfig lc;
  lc.days = 6;
  lc.seed = 5;
  const auto lib = io::generate_synthetic(lc, model.spec);
  const auto seq = app::solve_library(lib, model.spec, {}, 0);
  io::SynthConfig tc;
  tc.days = 1;
  tc.seed = 55;
  tc.id_prefix = "test";
  const auto day = io::generate_synthetic(tc, model.spec).days.front();
  const int T = model.spec.horizon;
  int mismatches = 0;
  std::string names;
  for (sim::Policy p : {sim::Policy::M3, sim::Policy::M3a, sim::Policy::M3b, sim::Policy::M3c}) {
    const auto clean = sim::run_policy(p, model, day, &lib, &seq.sequences, {});
    mg::ScenarioDay dirty = day;
    for (int t = 0; t < T; ++t) {
      dirty.load.row(t) = dirty.load.row(t) * 3.0 + Eigen::RowVectorXd::Constant(dirty.buses(), 1.0);
      dirty.res.row(t) *= 0.1;
      dirty.price[t] = 900.0 + t;
    }
    sim::SimOptions o;
    o.after_decision = [&](int t) {
      dirty.load.row(t) = day.load.row(t);
      dirty.res.row(t) = day.res.row(t);
      dirty.price[t] = day.price[t];
    };
    const auto sentinel = sim::run_policy(p, model, dirty, &lib, &seq.sequences, o);
    for (int t = 0; t < T; ++t) mismatches += !(sentinel.actions[t] == clean.actions[t]);
    names += (names.empty() ? "" : ", ") + std::string(sim::to_string(p));
  }
  Outcome o;
  o.pass = seq.failures.empty() && mismatches == 0;
  o.detail = names + " on a " + std::to_string(T) + "-period day: " + std::to_string(mismatches) +
             " actions differ (M4 plans with hindsight and is exempt)";
  return o;
}

Outcome determinism(const fixture::TempDir& dir, const std::string& config, const fs::path& first) {
  Outcome o;
  const fs::path second = dir.path / "repeat";
  if (run_benchmark(dir, config, second, 1) != app::kOk) {
    o.detail = "repeat benchmark run failed";
    return o;
  }
  bool same = true;
  for (const char* f : {"benchmark.csv", "benchmark_days.csv"}) same = same && io::read_file(first / f) == io::read_file(second / f);
  o.pass = same;
  o.detail = same ? "two seeded benchmark runs wrote byte-identical tables" : "seeded benchmark runs differ";
  return o;
}

Outcome collapse() {
  const auto c = fixture::reference_collapse();
  Outcome o;
  o.pass = c.mad <= 0.02 * c.peak;
  o.detail = "library holding only the true day, tau 1e-6: mean tie-line gap " + fmt("%.4f", c.mad) + " MW, " +
             fmt("%.2f", 100.0 * c.mad / c.peak) + "% of the " + fmt("%.2f", c.peak) + " MW peak (limit 2%)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string unit_binary = argc > 1 ? argv[1] : "";
  fixture::TempDir dir("acceptance");
  const std::string bench_cfg = R"({"run": {"replicates": 3}})";
  const fs::path bench_out = dir.path / "bench";

  std::optional<BenchTable> bench;
  auto benchmark_table = [&]() -> const BenchTable& {
    if (!bench) {
      require(run_benchmark(dir, bench_cfg, bench_out, 1) == app::kOk, "benchmark run failed");
      bench = read_benchmark(bench_out / "benchmark.csv");
    }
    return *bench;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"regret and violation sublinearity", regret_sublinearity},
      {"QP solver against an independent oracle", qp_equivalence},
      {"unit test suite", [&] { return unit_suite(unit_binary); }},
      {"cost ordering of the policies", [&] { return ordering(benchmark_table(), false); }},
      {"voltage satisfaction", [&] { return ordering(benchmark_table(), true); }},
      {"noise robustness trend", [&] { return noise_trend(dir); }},
      {"decisions use only past data", causality},
      {"seeded runs are reproducible", [&] { return determinism(dir, bench_cfg, bench_out); }},
      {"reference collapses onto the ex-post optimum", collapse},
  };

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("[%s] %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
