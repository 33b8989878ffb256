// mgdispatch: offline precomputation, day simulation, policy benchmarks and
// the synthetic regret benchmark.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgd/app.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Two-stage microgrid dispatch: offline ex-post learning and online reference tracking"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, out;
    std::uint64_t seed = 0;
    bool force = false, timing = false;
    int threads = -1;
  };
  Flags f;
  auto add_common = [&f](CLI::App* sub, bool out_required) {
    sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", f.out, "output directory");
    if (out_required) out->required();
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_flag("--force", f.force, "rebuild artifacts that no longer match the configuration");
    sub->add_option("--threads", f.threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic scenario library and test set");
  add_common(gen, true);
  auto* off = app.add_subcommand("offline", "solve and persist the ex-post sequences of the library");
  add_common(off, false);
  auto* simc = app.add_subcommand("simulate", "run policies over test days and write per-day results");
  add_common(simc, true);
  simc->add_flag("--timing", f.timing, "record wall-clock time (outputs are then not reproducible)");
  auto* bench = app.add_subcommand("benchmark", "compare policies over replicated test sets");
  add_common(bench, true);
  bench->add_flag("--timing", f.timing, "fill the wall-clock column (outputs are then not reproducible)");
  auto* reg = app.add_subcommand("regret-bench", "regret and violation growth on the synthetic OCO family");
  add_common(reg, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : mgd::app::kConfig;
  }

  mgd::app::CommandOptions o;
  if (!f.config.empty()) o.config = f.config;
  o.out = f.out;
  CLI::App* used = app.get_subcommands().front();
  if (used->count("--seed")) o.seed = f.seed;
  if (f.threads >= 0) o.threads = f.threads;
  o.force = f.force;
  o.timing = f.timing;

  return mgd::app::guarded([&] {
    if (used == gen) return mgd::app::cmd_generate(o);
    if (used == off) return mgd::app::cmd_offline(o);
    if (used == simc) return mgd::app::cmd_simulate(o);
    if (used == bench) return mgd::app::cmd_benchmark(o);
    return mgd::app::cmd_regret_bench(o);
  });
}
