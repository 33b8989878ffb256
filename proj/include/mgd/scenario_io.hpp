#pragma once

// Scenario synthesis, scenario and sequence files, and the JSON run config.
//
// Files are plain CSV with explicit headers. Numbers are written with 17
// significant digits and parsed with from_chars, so roundtrips are exact and
// independent of the process locale. Every write goes to a temporary name in
// the target directory and is renamed into place.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "mgd/core.hpp"
#include "mgd/default_spec.hpp"
#include "mgd/microgrid.hpp"
#include "mgd/two_stage.hpp"

namespace mgd::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using mg::MicrogridSpec;
using mg::ScenarioDay;
using ts::ExPostSequences;
using ts::ScenarioLibrary;

// ---------------------------------------------------------------- number formatting

/// Shortest text that reads back to the same double (at most 17 digits).
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e || b == e) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------- atomic writes

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- synthetic scenarios

struct SynthConfig {
  int days = 20;
  std::uint64_t seed = 1;
  std::string id_prefix = "day";  // day ids are <prefix>-000, <prefix>-001, ...
  // Load: base level plus two Gaussian peaks, in multiples of the daily mean.
  double mean_load_mw = 5.0;
  double morning_peak_hour = 9.5;
  double evening_peak_hour = 19.0;
  double morning_peak = 0.25;
  double evening_peak = 0.45;
  double peak_width_h = 2.2;
  // Solar bell between sunrise and sunset, wind as a clipped AR(1) process.
  double pv_capacity_mw = 2.3;
  double sunrise_hour = 6.0;
  double sunset_hour = 18.5;
  double wind_capacity_mw = 1.3;
  double wind_mean = 0.4;       // fraction of capacity
  double wind_std = 0.22;       // stationary std, fraction of capacity
  double wind_corr = 0.985;     // per-interval autocorrelation
  // Volatility scales every random component; 0 gives identical smooth days.
  double volatility = 1.0;
  double day_load_std = 0.08;   // day-to-day load level
  double load_noise_std = 0.03; // per bus, per interval
  double cloud_prob = 0.6;      // chance of a cloudy spell per day
  // Prices: three tiers, each scaled per day by up to +-price_deviation.
  double valley_price = 40.0, flat_price = 70.0, peak_price = 110.0;
  double valley_end_hour = 7.0;
  std::vector<std::pair<double, double>> peak_windows{{10.0, 12.0}, {17.0, 21.0}};
  double price_deviation = 0.15;

  void validate() const {
    require(days >= 1, "synth: day count must be at least 1");
    require(!id_prefix.empty() && id_prefix.find_first_of("/\\,") == std::string::npos, "synth: id prefix must be a plain name");
    require(volatility >= 0.0, "synth: volatility must be nonnegative");
    require(mean_load_mw > 0.0 && pv_capacity_mw >= 0.0 && wind_capacity_mw >= 0.0, "synth: capacities must be nonnegative");
    require(sunrise_hour < sunset_hour, "synth: sunrise must precede sunset");
    require(wind_corr >= 0.0 && wind_corr < 1.0, "synth: wind autocorrelation must lie in [0, 1)");
    require(price_deviation >= 0.0 && price_deviation < 1.0, "synth: price deviation must lie in [0, 1)");
    require(valley_price >= 0.0 && flat_price >= 0.0 && peak_price >= 0.0, "synth: prices must be nonnegative");
  }
};

namespace detail {

inline double standard_normal(std::mt19937_64& rng) { return mg::detail::box_muller(rng).first; }
inline double uniform_pm1(std::mt19937_64& rng) { return 2.0 * mg::detail::unit_uniform(rng) - 1.0; }

inline double load_shape(const SynthConfig& c, double h) {
  const auto bump = [&](double centre) {
    const double d = std::remainder(h - centre, 24.0);
    return std::exp(-0.5 * (d / c.peak_width_h) * (d / c.peak_width_h));
  };
  return 0.7 + c.morning_peak * bump(c.morning_peak_hour) + c.evening_peak * bump(c.evening_peak_hour) -
         0.15 * bump(3.5);
}

inline double solar_shape(const SynthConfig& c, double h) {
  if (h <= c.sunrise_hour || h >= c.sunset_hour) return 0.0;
  const double s = std::sin(M_PI * (h - c.sunrise_hour) / (c.sunset_hour - c.sunrise_hour));
  return std::pow(s, 1.5);
}

inline int price_tier(const SynthConfig& c, double h) {
  if (h < c.valley_end_hour) return 0;
  for (const auto& [a, b] : c.peak_windows)
    if (h >= a && h < b) return 2;
  return 1;
}

inline std::string day_id(const std::string& prefix, int d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%03d", d);
  return prefix + buf;
}

}  // namespace detail

/// Synthetic days at the spec's resolution. The day-level demand factor also
/// lifts that day's prices, so busy days are expensive days.
inline ScenarioLibrary generate_synthetic(const SynthConfig& cfg, const MicrogridSpec& spec) {
  cfg.validate();
  const int T = spec.horizon;
  const int B = spec.network.bus_count;
  require(static_cast<int>(spec.load_share.size()) == B, "synth: spec needs a load share per bus");
  const double dt_h = 24.0 / T;
  const double v = cfg.volatility;

  std::vector<double> shape(T);
  double mean_shape = 0.0;
  for (int t = 0; t < T; ++t) mean_shape += (shape[t] = detail::load_shape(cfg, (t + 0.5) * dt_h)) / T;

  ScenarioLibrary lib;
  for (int d = 0; d < cfg.days; ++d) {
    std::mt19937_64 rng(derive_seed(cfg.seed, string_id("synthetic-day"), static_cast<std::uint64_t>(d)));
    ScenarioDay day;
    day.id = detail::day_id(cfg.id_prefix, d);
    day.load = Matrix::Zero(T, B);
    day.res = Matrix::Zero(T, B);
    day.price = Vector::Zero(T);

    const double level_z = std::clamp(detail::standard_normal(rng), -2.5, 2.5);
    const double level = 1.0 + v * cfg.day_load_std * level_z;
    // Loads: shared diurnal shape times per-bus AR(1) multiplicative noise.
    const double rho = 0.95;
    std::vector<double> ar(B, 0.0);
    for (int b = 0; b < B; ++b) ar[b] = detail::standard_normal(rng);
    for (int t = 0; t < T; ++t) {
      const double total = cfg.mean_load_mw * level * shape[t] / mean_shape;
      for (int b = 0; b < B; ++b) {
        ar[b] = rho * ar[b] + std::sqrt(1.0 - rho * rho) * detail::standard_normal(rng);
        const double mult = std::max(0.0, 1.0 + v * cfg.load_noise_std * ar[b]);
        day.load(t, b) = total * spec.load_share[b] * mult;
      }
    }

    // Solar: clearness per day plus an optional cloudy spell.
    const double clear = std::clamp(1.0 - v * 0.35 * mg::detail::unit_uniform(rng), 0.0, 1.0);
    const bool cloudy = v > 0.0 && mg::detail::unit_uniform(rng) < cfg.cloud_prob;
    const double cloud_start = cfg.sunrise_hour + (cfg.sunset_hour - cfg.sunrise_hour - 2.0) * mg::detail::unit_uniform(rng);
    const double cloud_len = 1.0 + 2.0 * mg::detail::unit_uniform(rng);
    const double cloud_depth = std::min(1.0, v * (0.3 + 0.4 * mg::detail::unit_uniform(rng)));
    double flicker = 0.0;
    // Wind: AR(1) around the mean capacity factor.
    double w = detail::standard_normal(rng);
    for (int t = 0; t < T; ++t) {
      const double h = (t + 0.5) * dt_h;
      flicker = 0.9 * flicker + std::sqrt(1.0 - 0.81) * detail::standard_normal(rng);
      double pv = cfg.pv_capacity_mw * detail::solar_shape(cfg, h) * clear * (1.0 + v * 0.05 * flicker);
      if (cloudy && h >= cloud_start && h < cloud_start + cloud_len) pv *= 1.0 - cloud_depth;
      pv = std::clamp(pv, 0.0, cfg.pv_capacity_mw);
      w = cfg.wind_corr * w + std::sqrt(1.0 - cfg.wind_corr * cfg.wind_corr) * detail::standard_normal(rng);
      const double wind = cfg.wind_capacity_mw * std::clamp(cfg.wind_mean + v * cfg.wind_std * w, 0.0, 1.0);
      for (int b : spec.pv_buses) day.res(t, b) += pv / static_cast<double>(spec.pv_buses.size());
      for (int b : spec.wind_buses) day.res(t, b) += wind / static_cast<double>(spec.wind_buses.size());
    }

    // Prices: tier levels scaled per day, tied partly to the demand level.
    double tier_mult[3];
    for (int k = 0; k < 3; ++k) {
      const double u = 0.5 * detail::uniform_pm1(rng) + 0.5 * std::clamp(level_z / 2.0, -1.0, 1.0);
      tier_mult[k] = 1.0 + v * cfg.price_deviation * std::clamp(u, -1.0, 1.0);
    }
    const double tier_price[3] = {cfg.valley_price, cfg.flat_price, cfg.peak_price};
    for (int t = 0; t < T; ++t) {
      const int k = detail::price_tier(cfg, (t + 0.5) * dt_h);
      day.price[t] = tier_price[k] * tier_mult[k];
    }
    lib.days.push_back(std::move(day));
  }
  lib.compute_scales();
  return lib;
}


// ---------------------------------------------------------------- CSV reading

namespace detail {

struct CsvCell {
  std::string text;
  std::size_t column;  // 1-based character column
};

struct CsvLine {
  std::size_t number;  // 1-based line number
  std::vector<CsvCell> cells;
};

/// Splits text into comma-separated cells; blank lines are skipped.
inline std::vector<CsvLine> split_csv(const std::string& text) {
  std::vector<CsvLine> out;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      CsvLine l{line_no, {}};
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        const std::size_t stop = comma == std::string::npos ? line.size() : comma;
        l.cells.push_back({line.substr(start, stop - start), start + 1});
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      out.push_back(std::move(l));
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

inline double cell_number(const std::string& file, const CsvLine& l, std::size_t k) {
  const auto& c = l.cells[k];
  const auto v = parse_double(c.text);
  if (!v || !std::isfinite(*v)) throw ParseError(file, l.number, c.column, "expected a finite number, found '" + c.text + "'");
  return *v;
}

/// Parses "<prefix><int><suffix>"; returns -1 when the name has another form.
inline int column_index(const std::string& name, const std::string& prefix, const std::string& suffix) {
  if (name.size() <= prefix.size() + suffix.size() || name.compare(0, prefix.size(), prefix) != 0 ||
      name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
    return -1;
  const std::string mid = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
  int v = -1;
  const auto r = std::from_chars(mid.data(), mid.data() + mid.size(), v);
  if (r.ec != std::errc() || r.ptr != mid.data() + mid.size() || v < 0) return -1;
  return v;
}

inline void check_row_count(const std::string& file, std::size_t rows, int T) {
  if (static_cast<int>(rows) != T)
    throw ConfigError(file + ": expected " + std::to_string(T) + " data rows (one per period), found " + std::to_string(rows));
}

}  // namespace detail

// ---------------------------------------------------------------- scenario files

/// Buses that carry a RES column: the spec's PV and wind sites.
inline std::vector<int> res_buses(const MicrogridSpec& spec) {
  std::set<int> b(spec.pv_buses.begin(), spec.pv_buses.end());
  b.insert(spec.wind_buses.begin(), spec.wind_buses.end());
  return {b.begin(), b.end()};
}

/// Header `t,price_usd_per_mwh,load_<bus>_mw...,res_<bus>_mw...`; buses are 0-based.
inline std::string format_scenario(const ScenarioDay& day, const MicrogridSpec& spec) {
  const int B = spec.network.bus_count;
  day.validate(spec.horizon, B);
  const auto rb = res_buses(spec);
  for (int b = 0; b < B; ++b)
    if (std::find(rb.begin(), rb.end(), b) == rb.end())
      require(day.res.col(b).isZero(0.0), "scenario " + day.id + ": RES at bus " + std::to_string(b) + ", which has no RES site");
  std::string out = "t,price_usd_per_mwh";
  for (int b = 0; b < B; ++b) out += ",load_" + std::to_string(b) + "_mw";
  for (int b : rb) out += ",res_" + std::to_string(b) + "_mw";
  out += '\n';
  for (int t = 0; t < day.horizon(); ++t) {
    out += std::to_string(t) + ',' + format_double(day.price[t]);
    for (int b = 0; b < B; ++b) out += ',' + format_double(day.load(t, b));
    for (int b : rb) out += ',' + format_double(day.res(t, b));
    out += '\n';
  }
  return out;
}

inline ScenarioDay parse_scenario(const std::string& text, const std::string& file, const std::string& id,
                                  const MicrogridSpec& spec) {
  const int B = spec.network.bus_count;
  const auto lines = detail::split_csv(text);
  if (lines.empty()) throw ParseError(file, 1, 1, "empty file, expected a header row");
  const auto& head = lines.front();
  if (head.cells.size() < 2 || head.cells[0].text != "t" || head.cells[1].text != "price_usd_per_mwh")
    throw ParseError(file, head.number, 1, "header must start with 't,price_usd_per_mwh'");

  // Column k -> (kind, bus); kind 0 load, 1 RES.
  std::vector<std::pair<int, int>> role(head.cells.size(), {-1, -1});
  std::vector<bool> has_load(B, false), has_res(B, false);
  for (std::size_t k = 2; k < head.cells.size(); ++k) {
    const auto& c = head.cells[k];
    int kind = 0;
    int b = detail::column_index(c.text, "load_", "_mw");
    if (b < 0) {
      kind = 1;
      b = detail::column_index(c.text, "res_", "_mw");
    }
    if (b < 0) throw ParseError(file, head.number, c.column, "unknown column '" + c.text + "'");
    if (b >= B) throw ParseError(file, head.number, c.column, "column '" + c.text + "' names bus " + std::to_string(b) + ", but the network has " + std::to_string(B) + " buses");
    auto& seen = kind == 0 ? has_load : has_res;
    if (seen[b]) throw ParseError(file, head.number, c.column, "duplicate column '" + c.text + "'");
    seen[b] = true;
    role[k] = {kind, b};
  }
  for (int b = 0; b < B; ++b)
    if (!has_load[b]) throw ParseError(file, head.number, 1, "header is missing column load_" + std::to_string(b) + "_mw for bus " + std::to_string(b));
  for (int b : res_buses(spec))
    if (!has_res[b]) throw ParseError(file, head.number, 1, "header is missing column res_" + std::to_string(b) + "_mw for RES bus " + std::to_string(b));

  const std::size_t rows = lines.size() - 1;
  ScenarioDay day;
  day.id = id;
  day.load = Matrix::Zero(static_cast<Eigen::Index>(rows), B);
  day.res = Matrix::Zero(static_cast<Eigen::Index>(rows), B);
  day.price = Vector::Zero(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& l = lines[r + 1];
    if (l.cells.size() != head.cells.size()) {
      const std::size_t col = l.cells.size() < head.cells.size() ? l.cells.back().column + l.cells.back().text.size() : l.cells[head.cells.size()].column;
      throw ParseError(file, l.number, col, "expected " + std::to_string(head.cells.size()) + " cells, found " + std::to_string(l.cells.size()));
    }
    const double t = detail::cell_number(file, l, 0);
    if (t != static_cast<double>(r)) throw ParseError(file, l.number, 1, "expected period " + std::to_string(r) + ", found '" + l.cells[0].text + "'");
    day.price[static_cast<Eigen::Index>(r)] = detail::cell_number(file, l, 1);
    for (std::size_t k = 2; k < l.cells.size(); ++k) {
      const double v = detail::cell_number(file, l, k);
      if (v < 0.0) throw ParseError(file, l.number, l.cells[k].column, "negative power '" + l.cells[k].text + "'");
      auto& m = role[k].first == 0 ? day.load : day.res;
      m(static_cast<Eigen::Index>(r), role[k].second) = v;
    }
  }
  return day;
}

inline ScenarioDay load_scenario(const fs::path& path, const MicrogridSpec& spec) {
  auto day = parse_scenario(read_file(path), path.string(), path.stem().string(), spec);
  detail::check_row_count(path.string(), static_cast<std::size_t>(day.horizon()), spec.horizon);
  return day;
}

inline void save_scenario(const ScenarioDay& day, const fs::path& path, const MicrogridSpec& spec) {
  write_file_atomic(path, format_scenario(day, spec));
}

/// Every `*.csv` in dir, in file-name order; the file stem is the day id.
inline ScenarioLibrary load_library(const fs::path& dir, const MicrogridSpec& spec) {
  if (!fs::is_directory(dir)) throw ConfigError("scenario directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("scenario directory " + dir.string() + " holds no .csv files");
  ScenarioLibrary lib;
  std::string first;
  for (const auto& f : files) {
    auto day = parse_scenario(read_file(f), f.string(), f.stem().string(), spec);
    if (lib.days.empty()) {
      first = f.string();
    } else if (day.horizon() != lib.days.front().horizon()) {
      throw ConfigError("horizon mismatch: " + f.string() + " has " + std::to_string(day.horizon()) + " periods but " +
                        first + " has " + std::to_string(lib.days.front().horizon()));
    }
    detail::check_row_count(f.string(), static_cast<std::size_t>(day.horizon()), spec.horizon);
    lib.days.push_back(std::move(day));
  }
  lib.compute_scales();
  return lib;
}

inline void save_library(const ScenarioLibrary& lib, const fs::path& dir, const MicrogridSpec& spec) {
  fs::create_directories(dir);
  for (const auto& d : lib.days) save_scenario(d, dir / (d.id + ".csv"), spec);
}

// ---------------------------------------------------------------- spec JSON

namespace detail {

inline json bound_json(const mg::BoundDistribution& b) { return {{"mu", b.mu}, {"sigma", b.sigma}}; }

/// Rejects keys outside `allowed`, so misspelt settings do not pass silently.
inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

/// A per-period series: an array of length T or one number repeated T times.
inline std::vector<double> read_series(const json& v, int T, const std::string& where) {
  if (v.is_number()) return std::vector<double>(static_cast<std::size_t>(T), v.get<double>());
  if (!v.is_array()) throw ConfigError(where + ": expected a number or an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(where + ": expected numbers");
    out.push_back(e.get<double>());
  }
  if (static_cast<int>(out.size()) != T)
    throw ConfigError(where + ": expected " + std::to_string(T) + " values, found " + std::to_string(out.size()));
  return out;
}

inline mg::BoundDistribution read_bound(const json& j, int T, const std::string& where) {
  check_keys(j, where, {"mu", "sigma"});
  mg::BoundDistribution b;
  if (!j.contains("mu")) throw ConfigError(where + ": missing 'mu'");
  b.mu = read_series(j.at("mu"), T, where + ".mu");
  b.sigma = j.contains("sigma") ? read_series(j.at("sigma"), T, where + ".sigma") : std::vector<double>(T, 0.0);
  return b;
}

inline mg::GesSpec read_ges(const json& j, int T, const std::string& where) {
  check_keys(j, where, {"id", "bus", "capacity_mwh", "eta_c", "eta_d", "self_discharge", "baseline", "cost_charge",
                        "cost_discharge", "pc_max", "pd_max", "soc_max", "soc_min", "power_factor", "soc_init"});
  mg::GesSpec g;
  read_key(j, "id", g.id, where);
  read_key(j, "bus", g.bus, where);
  read_key(j, "capacity_mwh", g.capacity_mwh, where);
  read_key(j, "eta_c", g.eta_c, where);
  read_key(j, "eta_d", g.eta_d, where);
  read_key(j, "self_discharge", g.self_discharge, where);
  if (j.contains("baseline") && !(j.at("baseline").is_array() && j.at("baseline").empty()))
    g.baseline = read_series(j.at("baseline"), T, where + ".baseline");
  read_key(j, "cost_charge", g.cost_charge, where);
  read_key(j, "cost_discharge", g.cost_discharge, where);
  for (const auto& [key, field] : {std::pair<const char*, mg::BoundDistribution*>{"pc_max", &g.pc_max}, {"pd_max", &g.pd_max},
                                   {"soc_max", &g.soc_max}, {"soc_min", &g.soc_min}}) {
    if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
    *field = read_bound(j.at(key), T, where + "." + key);
  }
  read_key(j, "power_factor", g.power_factor, where);
  read_key(j, "soc_init", g.soc_init, where);
  return g;
}

inline mg::DgSpec read_dg(const json& j, const std::string& where) {
  check_keys(j, where, {"id", "bus", "a", "b", "c", "p_min", "p_max", "ramp_up", "ramp_down", "p_init"});
  mg::DgSpec d;
  read_key(j, "id", d.id, where);
  read_key(j, "bus", d.bus, where);
  read_key(j, "a", d.a, where);
  read_key(j, "b", d.b, where);
  read_key(j, "c", d.c, where);
  read_key(j, "p_min", d.p_min, where);
  read_key(j, "p_max", d.p_max, where);
  read_key(j, "ramp_up", d.ramp_up, where);
  read_key(j, "ramp_down", d.ramp_down, where);
  read_key(j, "p_init", d.p_init, where);
  return d;
}

}  // namespace detail

/// Full, explicit spec: sections network, devices and pricing.
inline json spec_to_json(const MicrogridSpec& s) {
  json net;
  net["horizon"] = s.horizon;
  net["bus_count"] = s.network.bus_count;
  net["base_mva"] = s.network.base_mva;
  net["v_source"] = s.network.v_source;
  net["v_min"] = s.network.v_min;
  net["v_max"] = s.network.v_max;
  net["monitored"] = s.network.monitored;
  json br = json::array();
  for (const auto& b : s.network.branches) br.push_back({b.from, b.to, b.r, b.x});
  net["branches"] = br;

  json dev;
  dev["distribution"] = s.distribution;
  json ges = json::array();
  for (const auto& g : s.ges)
    ges.push_back({{"id", g.id}, {"bus", g.bus}, {"capacity_mwh", g.capacity_mwh}, {"eta_c", g.eta_c}, {"eta_d", g.eta_d},
                   {"self_discharge", g.self_discharge}, {"baseline", g.baseline}, {"cost_charge", g.cost_charge},
                   {"cost_discharge", g.cost_discharge}, {"pc_max", detail::bound_json(g.pc_max)},
                   {"pd_max", detail::bound_json(g.pd_max)}, {"soc_max", detail::bound_json(g.soc_max)},
                   {"soc_min", detail::bound_json(g.soc_min)}, {"power_factor", g.power_factor}, {"soc_init", g.soc_init}});
  dev["ges"] = ges;
  json dg = json::array();
  for (const auto& d : s.dg)
    dg.push_back({{"id", d.id}, {"bus", d.bus}, {"a", d.a}, {"b", d.b}, {"c", d.c}, {"p_min", d.p_min}, {"p_max", d.p_max},
                  {"ramp_up", d.ramp_up}, {"ramp_down", d.ramp_down}, {"p_init", d.p_init}});
  dev["dg"] = dg;
  dev["pv_buses"] = s.pv_buses;
  dev["wind_buses"] = s.wind_buses;
  dev["load_share"] = s.load_share;

  json pr;
  pr["dt_h"] = s.pricing.dt;
  pr["tou"] = s.pricing.tou;
  pr["c_pl1"] = s.pricing.c_pl1;
  pr["c_pl2"] = s.pricing.c_pl2;
  pr["epsilon"] = s.pricing.epsilon;
  pr["load_power_factor"] = s.pricing.load_power_factor;
  return {{"network", net}, {"devices", dev}, {"pricing", pr}};
}

/// Builds a spec from the network, devices and pricing sections of a config.
/// `network.preset = "feeder33"` (the default when no branches are given)
/// starts from the built-in feeder with its devices and prices; every other
/// key overrides that starting point. Device lists replace the preset's.
inline MicrogridSpec spec_from_json(const json& cfg) {
  const json net = cfg.value("network", json::object());
  const json dev = cfg.value("devices", json::object());
  const json pr = cfg.value("pricing", json::object());
  detail::check_keys(net, "network", {"preset", "impedance_scale", "base_kv", "horizon", "bus_count", "base_mva", "v_source",
                                      "v_min", "v_max", "monitored", "branches"});
  detail::check_keys(dev, "devices", {"distribution", "ges", "dg", "pv_buses", "wind_buses", "load_share"});
  detail::check_keys(pr, "pricing", {"dt_h", "tou", "c_pl1", "c_pl2", "epsilon", "load_power_factor"});

  std::string preset = net.contains("branches") ? "none" : "feeder33";
  detail::read_key(net, "preset", preset, "network");
  MicrogridSpec s;
  if (preset == "feeder33") {
    mg::DefaultSpecOptions o;
    detail::read_key(net, "horizon", o.horizon, "network");
    detail::read_key(net, "impedance_scale", o.impedance_scale, "network");
    detail::read_key(net, "base_kv", o.base_kv, "network");
    detail::read_key(net, "base_mva", o.base_mva, "network");
    require(o.horizon >= 1 && o.impedance_scale > 0.0 && o.base_kv > 0.0 && o.base_mva > 0.0,
            "network: preset parameters must be positive");
    s = mg::default_spec(o);
  } else if (preset == "none") {
    require(!net.contains("impedance_scale") && !net.contains("base_kv"),
            "network: impedance_scale and base_kv apply to the feeder33 preset only");
    s.pricing.tou.clear();
  } else {
    throw ConfigError("network.preset: unknown preset '" + preset + "' (expected feeder33 or none)");
  }
  detail::read_key(net, "horizon", s.horizon, "network");
  detail::read_key(net, "bus_count", s.network.bus_count, "network");
  if (preset == "none") detail::read_key(net, "base_mva", s.network.base_mva, "network");
  detail::read_key(net, "v_source", s.network.v_source, "network");
  detail::read_key(net, "v_min", s.network.v_min, "network");
  detail::read_key(net, "v_max", s.network.v_max, "network");
  detail::read_key(net, "monitored", s.network.monitored, "network");
  if (net.contains("branches")) {
    s.network.branches.clear();
    for (const auto& b : net.at("branches")) {
      if (!b.is_array() || b.size() != 4) throw ConfigError("network.branches: each branch is [from, to, r_pu, x_pu]");
      s.network.branches.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<double>(), b[3].get<double>()});
    }
  }
  const int T = s.horizon;

  detail::read_key(dev, "distribution", s.distribution, "devices");
  if (dev.contains("ges")) {
    s.ges.clear();
    int k = 0;
    for (const auto& g : dev.at("ges")) s.ges.push_back(detail::read_ges(g, T, "devices.ges[" + std::to_string(k++) + "]"));
  }
  if (dev.contains("dg")) {
    s.dg.clear();
    int k = 0;
    for (const auto& d : dev.at("dg")) s.dg.push_back(detail::read_dg(d, "devices.dg[" + std::to_string(k++) + "]"));
  }
  detail::read_key(dev, "pv_buses", s.pv_buses, "devices");
  detail::read_key(dev, "wind_buses", s.wind_buses, "devices");
  detail::read_key(dev, "load_share", s.load_share, "devices");

  detail::read_key(pr, "dt_h", s.pricing.dt, "pricing");
  if (pr.contains("tou")) s.pricing.tou = detail::read_series(pr.at("tou"), T, "pricing.tou");
  detail::read_key(pr, "c_pl1", s.pricing.c_pl1, "pricing");
  detail::read_key(pr, "c_pl2", s.pricing.c_pl2, "pricing");
  detail::read_key(pr, "epsilon", s.pricing.epsilon, "pricing");
  detail::read_key(pr, "load_power_factor", s.pricing.load_power_factor, "pricing");
  s.validate();
  return s;
}

/// Hash of everything the offline stage depends on: the spec and the solver tolerance.
inline std::string spec_hash(const MicrogridSpec& spec, const ts::SolverOptions& opt) {
  const std::string canon = spec_to_json(spec).dump() + "|tol=" + format_double(opt.tol);
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  return buf;
}

// ---------------------------------------------------------------- ex-post sequences

inline std::string format_sequence(const ts::ExPostEntry& e, const std::vector<std::string>& ges_ids) {
  std::string out = "t,grid_mw";
  for (const auto& id : ges_ids) out += ",soc_" + id;
  out += '\n';
  for (std::size_t t = 0; t < e.grid.size(); ++t) {
    out += std::to_string(t) + ',' + format_double(e.grid[t]);
    for (std::size_t j = 0; j < ges_ids.size(); ++j) out += ',' + format_double(e.soc[j][t]);
    out += '\n';
  }
  return out;
}

inline ts::ExPostEntry parse_sequence(const std::string& text, const std::string& file, const std::string& id,
                                      const std::vector<std::string>& ges_ids) {
  const auto lines = detail::split_csv(text);
  if (lines.empty()) throw ParseError(file, 1, 1, "empty file, expected a header row");
  const auto& head = lines.front();
  std::vector<std::string> expect{"t", "grid_mw"};
  for (const auto& g : ges_ids) expect.push_back("soc_" + g);
  for (std::size_t k = 0; k < expect.size(); ++k) {
    if (k >= head.cells.size()) throw ParseError(file, head.number, head.cells.back().column, "header is missing column " + expect[k]);
    if (head.cells[k].text != expect[k])
      throw ParseError(file, head.number, head.cells[k].column, "expected column " + expect[k] + ", found '" + head.cells[k].text + "'");
  }
  if (head.cells.size() != expect.size()) throw ParseError(file, head.number, head.cells[expect.size()].column, "unexpected extra column");
  ts::ExPostEntry e;
  e.id = id;
  e.soc.assign(ges_ids.size(), {});
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto& l = lines[r];
    if (l.cells.size() != expect.size())
      throw ParseError(file, l.number, 1, "expected " + std::to_string(expect.size()) + " cells, found " + std::to_string(l.cells.size()));
    if (detail::cell_number(file, l, 0) != static_cast<double>(r - 1))
      throw ParseError(file, l.number, 1, "expected period " + std::to_string(r - 1));
    e.grid.push_back(detail::cell_number(file, l, 1));
    for (std::size_t j = 0; j < ges_ids.size(); ++j) e.soc[j].push_back(detail::cell_number(file, l, 2 + j));
  }
  return e;
}

struct SequenceManifest {
  std::string spec_hash;
  ts::SolverOptions solver;
  std::vector<std::string> ges_ids;
  std::vector<std::pair<std::string, double>> scenarios;  // id, optimal cost
};

inline constexpr const char* kManifestName = "manifest.json";

inline SequenceManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) throw ConfigError("no offline library in " + dir.string() + " (missing " + path.string() + "); run the offline stage first");
  json j;
  try {
    j = json::parse(read_file(path));
    SequenceManifest m;
    m.spec_hash = j.at("spec_hash").get<std::string>();
    m.solver.tol = j.at("solver").at("tol").get<double>();
    m.solver.max_iter = j.at("solver").at("max_iter").get<int>();
    m.ges_ids = j.at("ges").get<std::vector<std::string>>();
    for (const auto& s : j.at("scenarios")) m.scenarios.emplace_back(s.at("id").get<std::string>(), s.at("cost").get<double>());
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed manifest: " + e.what());
  }
}

/// A string field of the manifest; empty when absent.
inline std::string read_manifest_value(const fs::path& dir, const std::string& key) {
  read_manifest(dir);
  const json j = json::parse(read_file(dir / kManifestName));
  const auto it = j.find(key);
  return it != j.end() && it->is_string() ? it->get<std::string>() : std::string();
}

/// One CSV per scenario plus a manifest holding the spec hash and solver settings.
/// `extra` adds string fields to the manifest (for example a data hash).
inline void persist_sequences(const ExPostSequences& seq, const fs::path& dir, const std::string& hash,
                              const ts::SolverOptions& solver, const std::map<std::string, std::string>& extra = {}) {
  fs::create_directories(dir);
  json scen = json::array();
  for (const auto& e : seq.entries) {
    require(e.soc.size() == seq.ges_ids.size(), "persist_sequences: scenario " + e.id + " has the wrong GES count");
    write_file_atomic(dir / (e.id + ".csv"), format_sequence(e, seq.ges_ids));
    scen.push_back({{"id", e.id}, {"file", e.id + ".csv"}, {"cost", e.cost}});
  }
  json m;
  m["format"] = 1;
  m["spec_hash"] = hash;
  for (const auto& [k, v] : extra) m[k] = v;
  m["solver"] = {{"tol", solver.tol}, {"max_iter", solver.max_iter}};
  m["ges"] = seq.ges_ids;
  m["scenarios"] = scen;
  // The manifest goes last, so a crash mid-write never leaves a valid-looking library.
  write_file_atomic(dir / kManifestName, m.dump(2) + "\n");
}

/// Loads a persisted library. A hash differing from `expected_hash` means the
/// spec or solver changed since the offline stage ran.
inline ExPostSequences load_sequences(const fs::path& dir, const std::string& expected_hash) {
  const auto m = read_manifest(dir);
  if (m.spec_hash != expected_hash)
    throw StaleLibraryError("offline library in " + dir.string() + " was built for spec hash " + m.spec_hash +
                            " but the current spec hashes to " + expected_hash +
                            "; re-run the offline stage (with --force to overwrite)");
  ExPostSequences seq;
  seq.ges_ids = m.ges_ids;
  for (const auto& [id, cost] : m.scenarios) {
    const fs::path f = dir / (id + ".csv");
    if (!fs::exists(f)) throw ConfigError("offline library in " + dir.string() + ": scenario " + id + " is listed in the manifest but " + f.string() + " is missing");
    auto e = parse_sequence(read_file(f), f.string(), id, m.ges_ids);
    e.cost = cost;
    seq.entries.push_back(std::move(e));
  }
  return seq;
}

/// Orders stored sequences like the library days; every day needs one.
inline ExPostSequences align_sequences(const ExPostSequences& seq, const ScenarioLibrary& lib) {
  ExPostSequences out;
  out.ges_ids = seq.ges_ids;
  for (const auto& d : lib.days) {
    const auto it = std::find_if(seq.entries.begin(), seq.entries.end(), [&](const ts::ExPostEntry& e) { return e.id == d.id; });
    if (it == seq.entries.end()) throw StaleLibraryError("offline library has no sequence for scenario " + d.id + "; re-run the offline stage");
    require(static_cast<int>(it->grid.size()) == d.horizon(), "offline sequence " + d.id + " has the wrong length");
    out.entries.push_back(*it);
  }
  return out;
}

}  // namespace mgd::io
