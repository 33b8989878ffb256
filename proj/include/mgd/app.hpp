#pragma once

// Batch commands behind the command-line tool: run configuration, offline
// precomputation, day simulation, policy benchmark tables and the synthetic
// regret benchmark. Every command writes files atomically and returns an
// exit status (0 ok, 1 configuration, 2 runtime or infeasible, 3 gate failed).

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mgd/dispatch_sim.hpp"
#include "mgd/scenario_io.hpp"
#include "mgd/synthetic_oco.hpp"
#include "mgd/two_stage.hpp"

namespace mgd::app {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using sim::DayResult;
using sim::Policy;

enum ExitCode : int { kOk = 0, kConfig = 1, kRuntime = 2, kGate = 3 };

// ---------------------------------------------------------------- configuration

/// Where a set of days comes from: a directory of scenario CSVs or the generator.
struct DaySource {
  std::optional<fs::path> dir;
  io::SynthConfig synth;
};

struct RegretConfig {
  std::vector<int> horizons{1000, 4000, 16000};
  int seeds = 3;
  int dim = 4;
  int rows = 2;
  bool stationary = false;
  double regret_slope_max = 0.7;
  double violation_slope_max = 1.05;
};

struct RunConfig {
  fs::path base_dir = ".";  // relative paths resolve against the config file
  mg::MicrogridSpec spec;
  sim::SimOptions sim;
  std::vector<double> noise_levels{0.0};
  DaySource library, test;
  fs::path offline_dir = "offline";
  std::vector<Policy> policies{Policy::M3, Policy::M3a, Policy::M3b, Policy::M3c, Policy::M4};
  std::vector<std::string> days;  // test day ids to run; empty runs all
  int threads = 0;                // 0: hardware concurrency
  int replicates = 1;             // benchmark repetitions with derived seeds
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<double, double>> weight_grid;  // (phi1, phi2) sensitivity runs of M3
  RegretConfig regret;
};

namespace detail {

using io::detail::check_keys;
using io::detail::read_key;

inline io::SynthConfig read_synth(const json& j, io::SynthConfig c, const std::string& where) {
  check_keys(j, where,
             {"days", "seed", "id_prefix", "mean_load_mw", "morning_peak_hour", "evening_peak_hour", "morning_peak",
              "evening_peak", "peak_width_h", "pv_capacity_mw", "sunrise_hour", "sunset_hour", "wind_capacity_mw", "wind_mean",
              "wind_std", "wind_corr", "volatility", "day_load_std", "load_noise_std", "cloud_prob", "valley_price",
              "flat_price", "peak_price", "valley_end_hour", "peak_windows", "price_deviation"});
  read_key(j, "days", c.days, where);
  read_key(j, "seed", c.seed, where);
  read_key(j, "id_prefix", c.id_prefix, where);
  read_key(j, "mean_load_mw", c.mean_load_mw, where);
  read_key(j, "morning_peak_hour", c.morning_peak_hour, where);
  read_key(j, "evening_peak_hour", c.evening_peak_hour, where);
  read_key(j, "morning_peak", c.morning_peak, where);
  read_key(j, "evening_peak", c.evening_peak, where);
  read_key(j, "peak_width_h", c.peak_width_h, where);
  read_key(j, "pv_capacity_mw", c.pv_capacity_mw, where);
  read_key(j, "sunrise_hour", c.sunrise_hour, where);
  read_key(j, "sunset_hour", c.sunset_hour, where);
  read_key(j, "wind_capacity_mw", c.wind_capacity_mw, where);
  read_key(j, "wind_mean", c.wind_mean, where);
  read_key(j, "wind_std", c.wind_std, where);
  read_key(j, "wind_corr", c.wind_corr, where);
  read_key(j, "volatility", c.volatility, where);
  read_key(j, "day_load_std", c.day_load_std, where);
  read_key(j, "load_noise_std", c.load_noise_std, where);
  read_key(j, "cloud_prob", c.cloud_prob, where);
  read_key(j, "valley_price", c.valley_price, where);
  read_key(j, "flat_price", c.flat_price, where);
  read_key(j, "peak_price", c.peak_price, where);
  read_key(j, "valley_end_hour", c.valley_end_hour, where);
  read_key(j, "peak_windows", c.peak_windows, where);
  read_key(j, "price_deviation", c.price_deviation, where);
  c.validate();
  return c;
}

inline DaySource read_source(const json& j, const fs::path& base, io::SynthConfig defaults, const std::string& where) {
  check_keys(j, where, {"dir", "synthetic"});
  require(j.contains("dir") != j.contains("synthetic"), where + ": give exactly one of 'dir' or 'synthetic'");
  DaySource s;
  s.synth = defaults;
  if (j.contains("dir")) {
    s.dir = base / j.at("dir").get<std::string>();
  } else {
    s.synth = read_synth(j.at("synthetic"), defaults, where + ".synthetic");
  }
  return s;
}

inline io::SynthConfig default_library_synth() {
  io::SynthConfig c;
  c.days = 20;
  c.seed = 1;
  return c;
}

inline io::SynthConfig default_test_synth() {
  io::SynthConfig c;
  c.days = 5;
  c.seed = 1001;
  c.id_prefix = "test";
  return c;
}

}  // namespace detail

/// Parses a run configuration. Sections: network, devices, pricing (the
/// spec), oco, reference, noise, solver, data, run, regret.
inline RunConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  detail::check_keys(j, "config", {"network", "devices", "pricing", "oco", "reference", "noise", "solver", "data", "run", "regret"});
  RunConfig c;
  c.base_dir = base_dir;
  c.spec = io::spec_from_json(j);
  c.sim.phi1 = c.spec.pricing.phi1;
  c.sim.phi2 = c.spec.pricing.phi2;

  const json oco = j.value("oco", json::object());
  detail::check_keys(oco, "oco", {"chi", "delta", "phi1", "phi2", "voltage_margin", "round_benchmark"});
  detail::read_key(oco, "chi", c.sim.chi, "oco");
  detail::read_key(oco, "delta", c.sim.delta, "oco");
  detail::read_key(oco, "phi1", c.sim.phi1, "oco");
  detail::read_key(oco, "phi2", c.sim.phi2, "oco");
  detail::read_key(oco, "voltage_margin", c.sim.voltage_margin, "oco");
  detail::read_key(oco, "round_benchmark", c.sim.round_benchmark, "oco");
  require(0.0 < c.sim.chi && c.sim.chi < c.sim.delta && c.sim.delta < 0.5, "oco: need 0 < chi < delta < 1/2");
  require(c.sim.phi1 >= 0.0 && c.sim.phi2 >= 0.0, "oco: tracking weights must be nonnegative");
  require(c.sim.voltage_margin >= 0.0 && c.sim.voltage_margin < 0.5 * (c.spec.network.v_max - c.spec.network.v_min),
          "oco: voltage margin must be nonnegative and smaller than half the voltage band");
  c.spec.pricing.phi1 = c.sim.phi1;
  c.spec.pricing.phi2 = c.sim.phi2;

  const json ref = j.value("reference", json::object());
  detail::check_keys(ref, "reference", {"tau"});
  detail::read_key(ref, "tau", c.sim.tau, "reference");
  require(c.sim.tau > 0.0, "reference.tau must be positive");

  const json noise = j.value("noise", json::object());
  detail::check_keys(noise, "noise", {"sigma", "voltage_tol"});
  if (noise.contains("sigma")) {
    const auto& s = noise.at("sigma");
    c.noise_levels = s.is_array() ? s.get<std::vector<double>>() : std::vector<double>{s.get<double>()};
  }
  require(!c.noise_levels.empty(), "noise.sigma: give at least one level");
  for (double s : c.noise_levels) require(s >= 0.0 && std::isfinite(s), "noise.sigma: levels must be nonnegative");
  detail::read_key(noise, "voltage_tol", c.sim.voltage_tol, "noise");
  require(c.sim.voltage_tol >= 0.0, "noise.voltage_tol must be nonnegative");

  const json sol = j.value("solver", json::object());
  detail::check_keys(sol, "solver", {"tol", "max_iter"});
  detail::read_key(sol, "tol", c.sim.solver.tol, "solver");
  detail::read_key(sol, "max_iter", c.sim.solver.max_iter, "solver");
  require(c.sim.solver.tol > 0.0 && c.sim.solver.max_iter >= 1, "solver: tol must be positive and max_iter at least 1");

  const json data = j.value("data", json::object());
  detail::check_keys(data, "data", {"library", "test", "offline_dir"});
  c.library.synth = detail::default_library_synth();
  c.test.synth = detail::default_test_synth();
  if (data.contains("library")) c.library = detail::read_source(data.at("library"), base_dir, c.library.synth, "data.library");
  if (data.contains("test")) c.test = detail::read_source(data.at("test"), base_dir, c.test.synth, "data.test");
  if (data.contains("offline_dir")) c.offline_dir = base_dir / data.at("offline_dir").get<std::string>();
  else c.offline_dir = base_dir / c.offline_dir;

  const json run = j.value("run", json::object());
  detail::check_keys(run, "run", {"policies", "days", "threads", "replicates", "seed", "weight_grid"});
  if (run.contains("policies")) {
    c.policies.clear();
    for (const auto& p : run.at("policies")) c.policies.push_back(sim::parse_policy(p.get<std::string>()));
  }
  require(!c.policies.empty(), "run.policies: select at least one policy");
  detail::read_key(run, "days", c.days, "run");
  detail::read_key(run, "threads", c.threads, "run");
  detail::read_key(run, "replicates", c.replicates, "run");
  if (run.contains("seed")) c.seed = run.at("seed").get<std::uint64_t>();
  if (run.contains("weight_grid"))
    for (const auto& w : run.at("weight_grid")) {
      require(w.is_array() && w.size() == 2, "run.weight_grid: each entry is [phi1, phi2]");
      c.weight_grid.emplace_back(w[0].get<double>(), w[1].get<double>());
    }
  require(c.threads >= 0 && c.replicates >= 1, "run: threads must be nonnegative and replicates at least 1");

  const json rg = j.value("regret", json::object());
  detail::check_keys(rg, "regret", {"horizons", "seeds", "dim", "rows", "stationary", "regret_slope_max", "violation_slope_max"});
  detail::read_key(rg, "horizons", c.regret.horizons, "regret");
  detail::read_key(rg, "seeds", c.regret.seeds, "regret");
  detail::read_key(rg, "dim", c.regret.dim, "regret");
  detail::read_key(rg, "rows", c.regret.rows, "regret");
  detail::read_key(rg, "stationary", c.regret.stationary, "regret");
  detail::read_key(rg, "regret_slope_max", c.regret.regret_slope_max, "regret");
  detail::read_key(rg, "violation_slope_max", c.regret.violation_slope_max, "regret");
  return c;
}

inline RunConfig load_config(const std::optional<fs::path>& path) {
  if (!path) return parse_config(json::object(), fs::current_path());
  json j;
  try {
    j = json::parse(io::read_file(*path), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path->string() + ": " + e.what());
  }
  return parse_config(j, path->has_parent_path() ? path->parent_path() : fs::path("."));
}

// ---------------------------------------------------------------- worker pool

inline int worker_count(int requested, std::size_t jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min<int>(n, static_cast<int>(std::max<std::size_t>(jobs, 1))));
}

/// Runs fn(i) for i in [0, n) on a bounded pool; exceptions are kept per job.
inline std::vector<std::exception_ptr> parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = worker_count(threads, n);
  std::vector<std::thread> pool;
  for (int k = 1; k < w; ++k) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return errors;
}

inline std::string error_text(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& x) {
    return x.what();
  } catch (...) {
    return "unknown error";
  }
}

// ---------------------------------------------------------------- data loading

inline ts::ScenarioLibrary load_days(const DaySource& src, const mg::MicrogridSpec& spec) {
  if (src.dir) return io::load_library(*src.dir, spec);
  return io::generate_synthetic(src.synth, spec);
}

/// Content hash of a library, so a manifest also detects changed scenario data.
inline std::string library_hash(const ts::ScenarioLibrary& lib, const mg::MicrogridSpec& spec) {
  std::uint64_t h = fnv1a("library");
  for (const auto& d : lib.days) h = mix_seed(h ^ fnv1a(d.id + "\n" + io::format_scenario(d, spec)));
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct OfflineOutcome {
  ts::ExPostSequences sequences;
  std::vector<std::pair<std::string, std::string>> failures;  // id, message
};

inline OfflineOutcome solve_library(const ts::ScenarioLibrary& lib, const mg::MicrogridSpec& spec,
                                    const ts::SolverOptions& solver, int threads) {
  OfflineOutcome out;
  for (const auto& g : spec.ges) out.sequences.ges_ids.push_back(g.id);
  std::vector<ts::ExPostEntry> entries(lib.days.size());
  const auto errors = parallel_for(lib.days.size(), threads, [&](std::size_t i) { entries[i] = ts::solve_ex_post(spec, lib.days[i], solver); });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (errors[i]) out.failures.emplace_back(lib.days[i].id, error_text(errors[i]));
    else out.sequences.entries.push_back(std::move(entries[i]));
  }
  return out;
}

inline ts::ExPostSequences load_offline(const RunConfig& c, const ts::ScenarioLibrary& lib) {
  auto seq = io::load_sequences(c.offline_dir, io::spec_hash(c.spec, c.sim.solver));
  const auto data = io::read_manifest_value(c.offline_dir, "data_hash");
  const auto now = library_hash(lib, c.spec);
  if (data != now)
    throw StaleLibraryError("offline library in " + c.offline_dir.string() + " was built from different scenario data (" + data +
                            ", now " + now + "); re-run the offline stage (with --force to overwrite)");
  return io::align_sequences(seq, lib);
}

inline bool needs_reference(const std::vector<Policy>& ps) {
  return std::any_of(ps.begin(), ps.end(), [](Policy p) { return p != Policy::M4 && p != Policy::M3a; });
}

inline std::vector<const mg::ScenarioDay*> select_days(const ts::ScenarioLibrary& lib, const std::vector<std::string>& ids) {
  std::vector<const mg::ScenarioDay*> out;
  if (ids.empty()) {
    for (const auto& d : lib.days) out.push_back(&d);
    return out;
  }
  for (const auto& id : ids) {
    const auto it = std::find_if(lib.days.begin(), lib.days.end(), [&](const mg::ScenarioDay& d) { return d.id == id; });
    if (it == lib.days.end()) throw ConfigError("run.days: no test day with id '" + id + "'");
    out.push_back(&*it);
  }
  return out;
}

// ---------------------------------------------------------------- result files

inline std::string sigma_label(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sigma-%.4f", s);
  return buf;
}

inline json number_or_null(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json day_result_json(const DayResult& r, bool timing) {
  json j;
  j["policy"] = r.policy;
  j["day"] = r.day_id;
  j["noise_sigma"] = r.noise_sigma;
  j["cost_usd"] = {{"ges", r.cost.ges},           {"grid", r.cost.grid},     {"dg", r.cost.dg},
                   {"operating", r.cost.total()}, {"smoothing", r.smoothing}, {"total", r.total_cost}};
  j["fluctuation_mw"] = {{"xi1", r.fluctuation.xi1}, {"xi2", r.fluctuation.xi2}};
  j["voltage_satisfaction_pct"] = r.voltage_satisfaction;
  j["relaxed_rounds"] = r.relaxed_rounds;
  if (r.oco)
    j["oco"] = {{"dynamic_regret", number_or_null(r.oco->dynamic_regret)},
                {"regret_covered", r.oco->regret_covered},
                {"benchmark_coverage", r.oco->benchmark_coverage},
                {"vio_hard", r.oco->vio_hard},
                {"vio_soft", r.oco->vio_soft},
                {"path_length", r.oco->path_length}};
  else
    j["oco"] = nullptr;
  j["wall_seconds"] = timing ? json(r.wall_seconds) : json(nullptr);
  return j;
}

/// Header `t,grid_mw,soc_<ges>...,pc_<ges>_mw...,pd_<ges>_mw...,pdg_<dg>_mw...`.
inline std::string trajectory_csv(const DayResult& r, const mg::MicrogridSpec& spec) {
  std::string out = "t,grid_mw";
  for (const auto& g : spec.ges) out += ",soc_" + g.id;
  for (const auto& g : spec.ges) out += ",pc_" + g.id + "_mw";
  for (const auto& g : spec.ges) out += ",pd_" + g.id + "_mw";
  for (const auto& d : spec.dg) out += ",pdg_" + d.id + "_mw";
  out += '\n';
  for (std::size_t t = 0; t < r.grid.size(); ++t) {
    out += std::to_string(t) + ',' + io::format_double(r.grid[t]);
    const auto d = mg::DispatchDecision::from_vector(spec, r.actions[t]);
    for (int j = 0; j < spec.num_ges(); ++j) out += ',' + io::format_double(r.soc[j][t]);
    for (int j = 0; j < spec.num_ges(); ++j) out += ',' + io::format_double(d.p_c[j]);
    for (int j = 0; j < spec.num_ges(); ++j) out += ',' + io::format_double(d.p_d[j]);
    for (int k = 0; k < spec.num_dg(); ++k) out += ',' + io::format_double(d.p_dg[k]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- commands

struct CommandOptions {
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool timing = false;
  std::optional<int> threads;
  std::ostream* log = &std::cout;
};

inline RunConfig resolve(const CommandOptions& o) {
  RunConfig c = load_config(o.config);
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.seed = o.seed;
  c.sim.timing = o.timing;
  return c;
}

/// Writes the synthetic library and test days (and the full spec) as files.
inline int cmd_generate(const CommandOptions& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "generate: --out is required");
  auto lib_cfg = c.library.synth;
  auto test_cfg = c.test.synth;
  if (c.seed) {
    lib_cfg.seed = derive_seed(*c.seed, string_id("library"));
    test_cfg.seed = derive_seed(*c.seed, string_id("test"));
  }
  const auto lib = io::generate_synthetic(lib_cfg, c.spec);
  const auto test = io::generate_synthetic(test_cfg, c.spec);
  io::save_library(lib, o.out / "library", c.spec);
  io::save_library(test, o.out / "test", c.spec);
  io::write_file_atomic(o.out / "spec.json", io::spec_to_json(c.spec).dump(2) + "\n");
  *o.log << "wrote " << lib.size() << " library days and " << test.size() << " test days to " << o.out.string() << "\n";
  return kOk;
}

/// Solves and persists the ex-post sequences of the scenario library.
inline int cmd_offline(const CommandOptions& o) {
  RunConfig c = resolve(o);
  if (!o.out.empty()) c.offline_dir = o.out;
  const auto lib = load_days(c.library, c.spec);
  const std::string hash = io::spec_hash(c.spec, c.sim.solver);
  const std::string data = library_hash(lib, c.spec);

  if (fs::exists(c.offline_dir / io::kManifestName)) {
    const auto m = io::read_manifest(c.offline_dir);
    const bool same = m.spec_hash == hash && io::read_manifest_value(c.offline_dir, "data_hash") == data;
    bool complete = same && m.scenarios.size() == lib.days.size();
    for (std::size_t i = 0; complete && i < lib.days.size(); ++i)
      complete = m.scenarios[i].first == lib.days[i].id && fs::exists(c.offline_dir / (lib.days[i].id + ".csv"));
    if (complete) {
      *o.log << "offline library in " << c.offline_dir.string() << " is up to date (" << lib.size() << " scenarios)\n";
      return kOk;
    }
    if (!o.force)
      throw StaleLibraryError("offline library in " + c.offline_dir.string() + " was built from a different spec or library (" +
                              m.spec_hash + "); re-run with --force to rebuild it");
  }

  const auto res = solve_library(lib, c.spec, c.sim.solver, c.threads);
  if (!res.failures.empty()) {
    std::cerr << "offline stage failed for " << res.failures.size() << " scenario(s):\n";
    for (const auto& [id, msg] : res.failures) std::cerr << "  " << id << ": " << msg << "\n";
    return kRuntime;
  }
  io::persist_sequences(res.sequences, c.offline_dir, hash, c.sim.solver, {{"data_hash", data}});
  double total = 0.0;
  for (const auto& e : res.sequences.entries) {
    *o.log << e.id << "  ex-post cost " << io::format_double(e.cost) << " $\n";
    total += e.cost;
  }
  *o.log << "solved " << res.sequences.size() << " scenarios, mean cost " << io::format_double(total / res.sequences.size())
         << " $, written to " << c.offline_dir.string() << "\n";
  return kOk;
}

struct Job {
  double sigma;
  Policy policy;
  const mg::ScenarioDay* day;
  std::pair<double, double> weights;
};

struct JobResult {
  std::optional<DayResult> result;
  std::string error;
};

inline std::vector<JobResult> run_jobs(const std::vector<Job>& jobs, const sim::DispatchModel& m, const ts::ScenarioLibrary* lib,
                                       const ts::ExPostSequences* seq, const sim::SimOptions& base, int threads) {
  std::vector<JobResult> out(jobs.size());
  const auto errors = parallel_for(jobs.size(), threads, [&](std::size_t i) {
    auto opt = base;
    opt.noise_sigma = jobs[i].sigma;
    opt.phi1 = jobs[i].weights.first;
    opt.phi2 = jobs[i].weights.second;
    out[i].result = sim::run_policy(jobs[i].policy, m, *jobs[i].day, lib, seq, opt);
  });
  for (std::size_t i = 0; i < jobs.size(); ++i)
    if (errors[i]) out[i].error = error_text(errors[i]);
  return out;
}

/// Runs the selected policies on the selected test days for every noise level.
inline int cmd_simulate(const CommandOptions& o) {
  RunConfig c = resolve(o);
  require(!o.out.empty(), "simulate: --out is required");
  c.sim.seed = c.seed.value_or(1);
  const auto lib = load_days(c.library, c.spec);
  std::optional<ts::ExPostSequences> seq;
  if (needs_reference(c.policies)) seq = load_offline(c, lib);
  const auto test = load_days(c.test, c.spec);
  const auto days = select_days(test, c.days);
  const sim::DispatchModel model(c.spec);

  std::vector<Job> jobs;
  for (double s : c.noise_levels)
    for (Policy p : c.policies)
      for (const auto* d : days) jobs.push_back({s, p, d, {c.sim.phi1, c.sim.phi2}});
  const auto results = run_jobs(jobs, model, &lib, seq ? &*seq : nullptr, c.sim, c.threads);

  json runs = json::array(), failures = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    const fs::path dir = o.out / sigma_label(job.sigma) / sim::to_string(job.policy);
    if (!results[i].result) {
      failures.push_back({{"policy", sim::to_string(job.policy)}, {"day", job.day->id}, {"noise_sigma", job.sigma}, {"error", results[i].error}});
      continue;
    }
    const auto& r = *results[i].result;
    io::write_file_atomic(dir / (r.day_id + ".json"), day_result_json(r, c.sim.timing).dump(2) + "\n");
    io::write_file_atomic(dir / (r.day_id + "_trajectory.csv"), trajectory_csv(r, c.spec));
    runs.push_back({{"policy", r.policy}, {"day", r.day_id}, {"noise_sigma", r.noise_sigma}, {"total_cost_usd", r.total_cost},
                    {"voltage_satisfaction_pct", r.voltage_satisfaction},
                    {"result", (fs::path(sigma_label(job.sigma)) / r.policy / (r.day_id + ".json")).generic_string()}});
  }
  json summary = {{"seed", c.sim.seed}, {"runs", runs}, {"failures", failures}};
  io::write_file_atomic(o.out / "summary.json", summary.dump(2) + "\n");
  *o.log << "simulated " << runs.size() << " policy-days into " << o.out.string();
  if (!failures.empty()) *o.log << " (" << failures.size() << " aborted, see summary.json)";
  *o.log << "\n";
  for (const auto& f : failures) std::cerr << f["policy"].get<std::string>() << " on " << f["day"].get<std::string>() << ": " << f["error"].get<std::string>() << "\n";
  return failures.empty() ? kOk : kRuntime;
}

struct TableRow {
  std::string policy;
  double sigma = 0.0;
  int days = 0;
  double cost = 0, operating = 0, smoothing = 0, xi1 = 0, xi2 = 0, vs = 0, wall = 0;
};

inline std::string na_or(bool timing, double v) { return timing ? io::format_double(v) : "NA"; }

/// Policy comparison over replicated synthetic (or file-based) test sets.
inline int cmd_benchmark(const CommandOptions& o) {
  RunConfig c = resolve(o);
  require(!o.out.empty(), "benchmark: --out is required");
  require(o.seed.has_value(), "benchmark: --seed is required");
  std::vector<Policy> unique;
  for (Policy p : c.policies)
    if (std::find(unique.begin(), unique.end(), p) == unique.end()) unique.push_back(p);
  require(unique.size() >= 2, "benchmark: select at least two policies to compare");
  const std::uint64_t master = *o.seed;
  const sim::DispatchModel model(c.spec);

  std::map<std::pair<double, std::string>, TableRow> table;
  std::vector<std::pair<double, std::string>> order;
  std::string detail = "replicate,day,policy,noise_sigma,total_cost_usd,operating_cost_usd,smoothing_usd,xi1_mw,xi2_mw,voltage_satisfaction_pct,vio_hard,wall_seconds\n";
  std::string weights_csv = "phi1,phi2,noise_sigma,days,avg_cost_usd,voltage_satisfaction_pct\n";
  std::map<std::tuple<double, double, double>, std::pair<int, std::pair<double, double>>> wtable;
  json failures = json::array();

  for (int r = 0; r < c.replicates; ++r) {
    const auto rr = static_cast<std::uint64_t>(r);
    DaySource libsrc = c.library, testsrc = c.test;
    libsrc.synth.seed = derive_seed(master, string_id("library"), rr);
    testsrc.synth.seed = derive_seed(master, string_id("test"), rr);
    const auto lib = load_days(libsrc, c.spec);
    const auto test = load_days(testsrc, c.spec);
    const auto days = select_days(test, c.days);
    std::optional<ts::ExPostSequences> seq;
    if (needs_reference(unique) || !c.weight_grid.empty()) {
      if (c.library.dir) {
        seq = load_offline(c, lib);
      } else {
        auto res = solve_library(lib, c.spec, c.sim.solver, c.threads);
        if (!res.failures.empty()) {
          for (const auto& [id, msg] : res.failures) std::cerr << "replicate " << r << ", scenario " << id << ": " << msg << "\n";
          return kRuntime;
        }
        seq = std::move(res.sequences);
      }
    }
    auto opt = c.sim;
    opt.seed = derive_seed(master, string_id("noise"), rr);

    std::vector<Job> jobs;
    for (double s : c.noise_levels)
      for (Policy p : unique)
        for (const auto* d : days) jobs.push_back({s, p, d, {c.sim.phi1, c.sim.phi2}});
    const std::size_t main_jobs = jobs.size();
    for (const auto& w : c.weight_grid)
      for (double s : c.noise_levels)
        for (const auto* d : days) jobs.push_back({s, Policy::M3, d, w});
    const auto results = run_jobs(jobs, model, &lib, seq ? &*seq : nullptr, opt, c.threads);

    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto& job = jobs[i];
      if (!results[i].result) {
        failures.push_back({{"replicate", r}, {"policy", sim::to_string(job.policy)}, {"day", job.day->id},
                            {"noise_sigma", job.sigma}, {"error", results[i].error}});
        continue;
      }
      const auto& d = *results[i].result;
      if (i >= main_jobs) {
        auto& w = wtable[{job.weights.first, job.weights.second, job.sigma}];
        ++w.first;
        w.second.first += d.total_cost;
        w.second.second += d.voltage_satisfaction;
        continue;
      }
      const auto key = std::make_pair(job.sigma, d.policy);
      if (!table.count(key)) order.push_back(key);
      auto& row = table[key];
      row.policy = d.policy;
      row.sigma = job.sigma;
      ++row.days;
      row.cost += d.total_cost;
      row.operating += d.cost.total();
      row.smoothing += d.smoothing;
      row.xi1 += d.fluctuation.xi1;
      row.xi2 += d.fluctuation.xi2;
      row.vs += d.voltage_satisfaction;
      row.wall += d.wall_seconds;
      detail += std::to_string(r) + ',' + d.day_id + ',' + d.policy + ',' + io::format_double(job.sigma) + ',' +
                io::format_double(d.total_cost) + ',' + io::format_double(d.cost.total()) + ',' + io::format_double(d.smoothing) +
                ',' + io::format_double(d.fluctuation.xi1) + ',' + io::format_double(d.fluctuation.xi2) + ',' +
                io::format_double(d.voltage_satisfaction) + ',' + (d.oco ? io::format_double(d.oco->vio_hard) : "NA") + ',' +
                na_or(c.sim.timing, d.wall_seconds) + '\n';
    }
  }

  std::string csv = "policy,noise_sigma,days,avg_cost_usd,avg_operating_cost_usd,avg_smoothing_usd,xi1_mw,xi2_mw,voltage_satisfaction_pct,avg_wall_seconds\n";
  for (const auto& key : order) {
    const auto& row = table[key];
    const double n = row.days;
    csv += row.policy + ',' + io::format_double(row.sigma) + ',' + std::to_string(row.days) + ',' + io::format_double(row.cost / n) +
           ',' + io::format_double(row.operating / n) + ',' + io::format_double(row.smoothing / n) + ',' +
           io::format_double(row.xi1 / n) + ',' + io::format_double(row.xi2 / n) + ',' + io::format_double(row.vs / n) + ',' +
           na_or(c.sim.timing, row.wall / n) + '\n';
  }
  io::write_file_atomic(o.out / "benchmark.csv", csv);
  io::write_file_atomic(o.out / "benchmark_days.csv", detail);
  if (!c.weight_grid.empty()) {
    for (const auto& [k, v] : wtable)
      weights_csv += io::format_double(std::get<0>(k)) + ',' + io::format_double(std::get<1>(k)) + ',' +
                     io::format_double(std::get<2>(k)) + ',' + std::to_string(v.first) + ',' +
                     io::format_double(v.second.first / v.first) + ',' + io::format_double(v.second.second / v.first) + '\n';
    io::write_file_atomic(o.out / "weight_sensitivity.csv", weights_csv);
  }
  if (!failures.empty()) io::write_file_atomic(o.out / "failures.json", json{{"failures", failures}}.dump(2) + "\n");
  *o.log << csv;
  for (const auto& f : failures) std::cerr << f.dump() << "\n";
  return failures.empty() ? kOk : kRuntime;
}

struct RegretRow {
  int horizon = 0;
  double regret = 0, vio_hard = 0, vio_soft = 0, path_length = 0;
};

struct RegretSummary {
  std::vector<RegretRow> rows;  // seed averages per horizon
  double regret_slope = 0, violation_slope = 0;
  bool pass = false;
};

inline RegretSummary regret_benchmark(const RegretConfig& rc, std::uint64_t master, int threads, double chi = 0.1, double delta = 0.2) {
  require(rc.horizons.size() >= 3, "regret: the horizon grid needs at least three points");
  for (std::size_t i = 0; i < rc.horizons.size(); ++i) {
    require(rc.horizons[i] >= 100, "regret: horizons must be at least 100");
    require(i == 0 || rc.horizons[i] > rc.horizons[i - 1], "regret: horizons must be strictly increasing");
  }
  require(rc.seeds >= 1, "regret: need at least one seed");
  const std::size_t H = rc.horizons.size(), S = static_cast<std::size_t>(rc.seeds);
  std::vector<oco::OcoMetrics> m(H * S);
  const auto errors = parallel_for(H * S, threads, [&](std::size_t k) {
    sim::SyntheticOcoConfig sc;
    sc.horizon = rc.horizons[k / S];
    sc.seed = derive_seed(master, string_id("regret"), k % S);
    sc.dim = rc.dim;
    sc.rows = rc.rows;
    sc.stationary = rc.stationary;
    sc.chi = chi;
    sc.delta = delta;
    m[k] = sim::synthetic_oco_benchmark(sc).metrics;
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  RegretSummary out;
  std::vector<double> x, reg, vio;
  for (std::size_t h = 0; h < H; ++h) {
    RegretRow row;
    row.horizon = rc.horizons[h];
    for (std::size_t s = 0; s < S; ++s) {
      const auto& mm = m[h * S + s];
      row.regret += mm.dynamic_regret.value_or(0.0) / S;
      row.vio_hard += mm.vio_hard / S;
      row.vio_soft += mm.vio_soft / S;
      row.path_length += mm.path_length / S;
    }
    out.rows.push_back(row);
    x.push_back(row.horizon);
    reg.push_back(std::max(row.regret, 1e-300));
    vio.push_back(std::max(row.vio_hard, 1e-300));
  }
  out.regret_slope = oco::loglog_slope(x, reg);
  out.violation_slope = oco::loglog_slope(x, vio);
  out.pass = out.regret_slope <= rc.regret_slope_max && out.violation_slope <= rc.violation_slope_max;
  return out;
}

/// Regret and violation growth of the learner on the synthetic family.
inline int cmd_regret_bench(const CommandOptions& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "regret-bench: --out is required");
  const auto s = regret_benchmark(c.regret, c.seed.value_or(1), c.threads, c.sim.chi, c.sim.delta);
  std::string csv = "horizon,seeds,dynamic_regret,vio_hard,vio_soft,path_length,regret_per_round,vio_hard_per_round\n";
  for (const auto& r : s.rows)
    csv += std::to_string(r.horizon) + ',' + std::to_string(c.regret.seeds) + ',' + io::format_double(r.regret) + ',' +
           io::format_double(r.vio_hard) + ',' + io::format_double(r.vio_soft) + ',' + io::format_double(r.path_length) + ',' +
           io::format_double(r.regret / r.horizon) + ',' + io::format_double(r.vio_hard / r.horizon) + '\n';
  io::write_file_atomic(o.out / "regret.csv", csv);
  std::string slopes = "metric,loglog_slope,threshold,pass\n";
  slopes += "dynamic_regret," + io::format_double(s.regret_slope) + ',' + io::format_double(c.regret.regret_slope_max) + ',' +
            (s.regret_slope <= c.regret.regret_slope_max ? "true" : "false") + '\n';
  slopes += "vio_hard," + io::format_double(s.violation_slope) + ',' + io::format_double(c.regret.violation_slope_max) + ',' +
            (s.violation_slope <= c.regret.violation_slope_max ? "true" : "false") + '\n';
  io::write_file_atomic(o.out / "regret_slopes.csv", slopes);
  *o.log << csv << slopes;
  return s.pass ? kOk : kGate;
}

/// Maps exceptions to the exit-code contract.
template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const StaleLibraryError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace mgd::app
