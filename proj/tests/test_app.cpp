#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mgd/app.hpp"

using namespace mgd;
using namespace mgd::app;
namespace fs = std::filesystem;

namespace {

// 24 periods of one hour, five library days and two test days.
json small_config() {
  return json::parse(R"({
    "network": {"horizon": 24},
    "data": {
      "library": {"synthetic": {"days": 5, "seed": 4}},
      "test": {"synthetic": {"days": 2, "seed": 40, "id_prefix": "test"}},
      "offline_dir": "offline"
    },
    "run": {"policies": ["M3", "M4"], "threads": 1}
  })");
}

struct Workspace {
  fixture::TempDir dir{"app"};
  std::ostringstream log;

  fs::path write_config(const json& j, const std::string& name = "config.json") {
    const fs::path p = dir.path / name;
    io::write_file_atomic(p, j.dump(2));
    return p;
  }
  CommandOptions options(const fs::path& config, const std::string& out) {
    CommandOptions o;
    o.config = config;
    o.out = out.empty() ? fs::path() : dir.path / out;
    o.log = &log;
    return o;
  }
};

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Config, DefaultsAndValidation) {
  const auto c = parse_config(json::object());
  EXPECT_EQ(c.policies.size(), 5u);
  EXPECT_EQ(c.library.synth.days, 20);
  EXPECT_EQ(c.test.synth.days, 5);
  EXPECT_EQ(c.test.synth.id_prefix, "test");
  EXPECT_EQ(c.sim.phi1, 1e4);
  EXPECT_EQ(c.sim.phi2, 1e-4);
  EXPECT_EQ(c.noise_levels, std::vector<double>{0.0});
  EXPECT_THROW(parse_config(json::parse(R"({"runs": {}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"oco": {"chi": 0.3}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"run": {"policies": ["M9"]}})")), ConfigError);
  const auto n = parse_config(json::parse(R"({"noise": {"sigma": [0, 3.5]}, "run": {"weight_grid": [[1, 2]]}})"));
  EXPECT_EQ(n.noise_levels, (std::vector<double>{0.0, 3.5}));
  EXPECT_EQ(n.weight_grid.size(), 1u);
  EXPECT_EQ(sigma_label(10.0 / 3.0), "sigma-3.3333");
}

TEST(Offline, WritesOneFilePerScenarioAndSkipsWhenUpToDate) {
  Workspace w;
  const auto cfg = w.write_config(small_config());
  EXPECT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kOk);
  const fs::path off = w.dir.path / "offline";
  EXPECT_EQ(count_files(off, ".csv"), 5);
  EXPECT_TRUE(fs::exists(off / io::kManifestName));
  const auto stamp = fs::last_write_time(off / io::kManifestName);
  w.log.str("");
  EXPECT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kOk);
  EXPECT_NE(w.log.str().find("up to date"), std::string::npos) << w.log.str();
  EXPECT_EQ(fs::last_write_time(off / io::kManifestName), stamp);
}

TEST(Offline, ChangedSpecNeedsForce) {
  Workspace w;
  auto j = small_config();
  const auto cfg = w.write_config(j);
  ASSERT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kOk);
  const auto before = io::read_manifest(w.dir.path / "offline").spec_hash;
  j["network"]["v_min"] = 0.93;
  const auto changed = w.write_config(j, "changed.json");
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_offline(w.options(changed, "")); }), kConfig);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("--force"), std::string::npos);
  auto o = w.options(changed, "");
  o.force = true;
  EXPECT_EQ(guarded([&] { return cmd_offline(o); }), kOk);
  EXPECT_NE(io::read_manifest(w.dir.path / "offline").spec_hash, before);
  // Simulation against a stale library is refused too.
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_simulate(w.options(cfg, "sim")); }), kConfig);
  testing::internal::GetCapturedStderr();
}

TEST(Offline, InfeasibleScenariosExitWithTheirIds) {
  Workspace w;
  auto j = small_config();
  j["network"]["v_min"] = 0.999;  // no dispatch can hold this
  const auto cfg = w.write_config(j);
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kRuntime);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("day-000"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(w.dir.path / "offline" / io::kManifestName));
}

TEST(Simulate, WritesResultsPerPolicyAndDay) {
  Workspace w;
  auto j = small_config();
  j["run"]["days"] = {"test-001"};
  const auto cfg = w.write_config(j);
  ASSERT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kOk);
  ASSERT_EQ(guarded([&] { return cmd_simulate(w.options(cfg, "sim")); }), kOk);
  const fs::path base = w.dir.path / "sim" / "sigma-0.0000";
  for (const char* p : {"M3", "M4"}) {
    EXPECT_TRUE(fs::exists(base / p / "test-001.json")) << p;
    EXPECT_TRUE(fs::exists(base / p / "test-001_trajectory.csv")) << p;
    EXPECT_EQ(count_files(base / p, ".json"), 1);
  }
  const auto r = json::parse(io::read_file(base / "M3" / "test-001.json"));
  EXPECT_EQ(r["policy"], "M3");
  EXPECT_TRUE(r["oco"].is_object());
  EXPECT_TRUE(r["wall_seconds"].is_null());
  const auto m4 = json::parse(io::read_file(base / "M4" / "test-001.json"));
  EXPECT_TRUE(m4["oco"].is_null());
  const auto traj = lines_of(io::read_file(base / "M3" / "test-001_trajectory.csv"));
  EXPECT_EQ(traj.size(), 25u);
  EXPECT_EQ(traj.front().rfind("t,grid_mw,soc_", 0), 0u);
  const auto summary = json::parse(io::read_file(w.dir.path / "sim" / "summary.json"));
  EXPECT_EQ(summary["runs"].size(), 2u);
  EXPECT_TRUE(summary["failures"].empty());
}

TEST(Simulate, RepeatsByteForByteAndNamesNoiseLevels) {
  Workspace w;
  auto j = small_config();
  j["noise"]["sigma"] = {0.0, 10.0 / 3.0, 50.0 / 3.0};
  j["run"]["days"] = {"test-000"};
  const auto cfg = w.write_config(j);
  ASSERT_EQ(guarded([&] { return cmd_offline(w.options(cfg, "")); }), kOk);
  ASSERT_EQ(guarded([&] { return cmd_simulate(w.options(cfg, "a")); }), kOk);
  ASSERT_EQ(guarded([&] { return cmd_simulate(w.options(cfg, "b")); }), kOk);
  for (const char* level : {"sigma-0.0000", "sigma-3.3333", "sigma-16.6667"})
    for (const char* p : {"M3", "M4"})
      for (const char* f : {"test-000.json", "test-000_trajectory.csv"}) {
        const auto rel = fs::path(level) / p / f;
        ASSERT_TRUE(fs::exists(w.dir.path / "a" / rel)) << rel;
        EXPECT_EQ(io::read_file(w.dir.path / "a" / rel), io::read_file(w.dir.path / "b" / rel)) << rel;
      }
  EXPECT_EQ(io::read_file(w.dir.path / "a" / "summary.json"), io::read_file(w.dir.path / "b" / "summary.json"));
  EXPECT_NE(io::read_file(w.dir.path / "a" / "sigma-0.0000" / "M3" / "test-000.json"),
            io::read_file(w.dir.path / "a" / "sigma-16.6667" / "M3" / "test-000.json"));
}

TEST(Simulate, MissingOfflineLibraryIsAConfigError) {
  Workspace w;
  const auto cfg = w.write_config(small_config());
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_simulate(w.options(cfg, "sim")); }), kConfig);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("offline"), std::string::npos);
}

TEST(Benchmark, OneRowPerPolicyAndDeterministic) {
  Workspace w;
  auto j = small_config();
  j["run"]["policies"] = {"M3", "M3-a", "M3-b", "M3-c", "M4"};
  j["data"]["test"]["synthetic"]["days"] = 5;
  const auto cfg = w.write_config(j);
  auto o = w.options(cfg, "b1");
  o.seed = 7;
  ASSERT_EQ(guarded([&] { return cmd_benchmark(o); }), kOk);
  const auto rows = lines_of(io::read_file(w.dir.path / "b1" / "benchmark.csv"));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "policy,noise_sigma,days,avg_cost_usd,avg_operating_cost_usd,avg_smoothing_usd,xi1_mw,xi2_mw,voltage_satisfaction_pct,avg_wall_seconds");
  for (std::size_t k = 1; k < rows.size(); ++k) {
    EXPECT_NE(rows[k].find(",5,"), std::string::npos) << rows[k];
    EXPECT_EQ(rows[k].substr(rows[k].size() - 3), ",NA");
  }
  auto o2 = w.options(cfg, "b2");
  o2.seed = 7;
  ASSERT_EQ(guarded([&] { return cmd_benchmark(o2); }), kOk);
  for (const char* f : {"benchmark.csv", "benchmark_days.csv"})
    EXPECT_EQ(io::read_file(w.dir.path / "b1" / f), io::read_file(w.dir.path / "b2" / f)) << f;
  auto o3 = w.options(cfg, "b3");
  o3.seed = 8;
  ASSERT_EQ(guarded([&] { return cmd_benchmark(o3); }), kOk);
  EXPECT_NE(io::read_file(w.dir.path / "b1" / "benchmark.csv"), io::read_file(w.dir.path / "b3" / "benchmark.csv"));
}

TEST(Benchmark, RejectsMissingSeedAndSinglePolicy) {
  Workspace w;
  auto j = small_config();
  const auto cfg = w.write_config(j);
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_benchmark(w.options(cfg, "b")); }), kConfig);
  j["run"]["policies"] = {"M3", "M3"};
  const auto single = w.write_config(j, "single.json");
  auto o = w.options(single, "b");
  o.seed = 1;
  EXPECT_EQ(guarded([&] { return cmd_benchmark(o); }), kConfig);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("--seed"), std::string::npos) << err;
  EXPECT_NE(err.find("two policies"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(w.dir.path / "b" / "benchmark.csv"));
}

TEST(Benchmark, WeightGridAddsSensitivityTable) {
  Workspace w;
  auto j = small_config();
  j["data"]["test"]["synthetic"]["days"] = 1;
  j["run"]["weight_grid"] = {{1e3, 1e-4}, {1e4, 1e-2}};
  const auto cfg = w.write_config(j);
  auto o = w.options(cfg, "b");
  o.seed = 2;
  ASSERT_EQ(guarded([&] { return cmd_benchmark(o); }), kOk);
  const auto rows = lines_of(io::read_file(w.dir.path / "b" / "weight_sensitivity.csv"));
  EXPECT_EQ(rows.size(), 3u);
}

TEST(RegretBench, ThreeRowsTwoSlopesAndGateExitCode) {
  Workspace w;
  auto j = json::parse(R"({"regret": {"horizons": [100, 200, 400], "seeds": 2}})");
  const auto cfg = w.write_config(j);
  const int rc = guarded([&] { return cmd_regret_bench(w.options(cfg, "r")); });
  EXPECT_TRUE(rc == kOk || rc == kGate);
  const auto rows = lines_of(io::read_file(w.dir.path / "r" / "regret.csv"));
  EXPECT_EQ(rows.size(), 4u);
  const auto slopes = lines_of(io::read_file(w.dir.path / "r" / "regret_slopes.csv"));
  EXPECT_EQ(slopes.size(), 3u);
  j["regret"]["regret_slope_max"] = -5.0;
  const auto strict = w.write_config(j, "strict.json");
  EXPECT_EQ(guarded([&] { return cmd_regret_bench(w.options(strict, "s")); }), kGate);
  j["regret"]["horizons"] = {100, 200};
  const auto bad = w.write_config(j, "bad.json");
  testing::internal::CaptureStderr();
  EXPECT_EQ(guarded([&] { return cmd_regret_bench(w.options(bad, "x")); }), kConfig);
  testing::internal::GetCapturedStderr();
}

TEST(RegretBench, StationaryFamilyHasNoPath) {
  RegretConfig rc;
  rc.horizons = {100, 200, 400};
  rc.seeds = 1;
  rc.stationary = true;
  const auto s = regret_benchmark(rc, 3, 1);
  for (const auto& r : s.rows) EXPECT_EQ(r.path_length, 0.0);
}

TEST(Generate, WritesLibraryTestAndSpec) {
  Workspace w;
  const auto cfg = w.write_config(small_config());
  ASSERT_EQ(guarded([&] { return cmd_generate(w.options(cfg, "gen")); }), kOk);
  EXPECT_EQ(count_files(w.dir.path / "gen" / "library", ".csv"), 5);
  EXPECT_EQ(count_files(w.dir.path / "gen" / "test", ".csv"), 2);
  // The written files drive the offline stage like the synthetic source did.
  auto j = small_config();
  j["data"]["library"] = {{"dir", "gen/library"}};
  j["data"]["test"] = {{"dir", "gen/test"}};
  j["run"]["days"] = {"test-000"};
  const auto files = w.write_config(j, "files.json");
  ASSERT_EQ(guarded([&] { return cmd_offline(w.options(files, "")); }), kOk);
  EXPECT_EQ(guarded([&] { return cmd_simulate(w.options(files, "sim")); }), kOk);
  const auto spec = io::spec_from_json(json::parse(io::read_file(w.dir.path / "gen" / "spec.json")));
  EXPECT_EQ(spec.horizon, 24);
}
