#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/sample.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

/// One engine's full trajectory: per-cycle operating settings and sensor
/// readings. Cycles run 1..L without gaps.
struct UnitRecord {
  int unit_id = 0;
  std::vector<int> cycles;
  std::vector<std::array<double, 3>> settings;
  std::vector<std::vector<double>> sensors;  // one row per cycle

  int length() const { return static_cast<int>(cycles.size()); }
};

struct CmapssData {
  std::vector<UnitRecord> train;
  std::vector<UnitRecord> test;
  std::vector<double> test_rul;  // remaining cycles past each test unit's last row
};

namespace detail {

inline std::vector<UnitRecord> parse_cmapss_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<UnitRecord> units;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream row(line);
    std::vector<double> fields;
    std::string tok;
    while (row >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric token '" + tok + "'");
      }
      if (used != tok.size())
        throw ParseError(path + ":" + std::to_string(line_no) + ": non-numeric token '" + tok + "'");
      fields.push_back(v);
    }
    if (fields.size() != 26)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 26 fields, got " +
                       std::to_string(fields.size()));
    const int unit = static_cast<int>(fields[0]);
    const int cycle = static_cast<int>(fields[1]);
    if (units.empty() || units.back().unit_id != unit) {
      units.push_back(UnitRecord{});
      units.back().unit_id = unit;
    }
    UnitRecord& u = units.back();
    const int expect = u.length() + 1;
    if (cycle != expect)
      throw ParseError(path + ":" + std::to_string(line_no) + ": unit " + std::to_string(unit) +
                       " cycle " + std::to_string(cycle) + ", expected " + std::to_string(expect));
    u.cycles.push_back(cycle);
    u.settings.push_back({fields[2], fields[3], fields[4]});
    u.sensors.emplace_back(fields.begin() + 5, fields.end());
  }
  return units;
}

}  // namespace detail

/// Loads train/test trajectories and the test-unit remaining-life list for
/// one subset (e.g. "FD001") from `dir`.
inline CmapssData load_cmapss(const std::string& dir, const std::string& subset) {
  CmapssData data;
  data.train = detail::parse_cmapss_file(dir + "/train_" + subset + ".txt");
  data.test = detail::parse_cmapss_file(dir + "/test_" + subset + ".txt");
  const std::string rul_path = dir + "/RUL_" + subset + ".txt";
  std::ifstream in(rul_path);
  if (!in) throw IoError("cannot open " + rul_path);
  double v = 0.0;
  while (in >> v) data.test_rul.push_back(v);
  if (data.test_rul.size() != data.test.size())
    throw ParseError(rul_path + ": " + std::to_string(data.test_rul.size()) +
                     " entries for " + std::to_string(data.test.size()) + " test units");
  return data;
}

/// 1-based ids of the informative sensors, in output order.
inline const std::vector<int>& informative_sensor_ids() {
  static const std::vector<int> ids = {2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21};
  return ids;
}

/// Restricts every record to the informative sensors, preserving their
/// listed order.
inline std::vector<UnitRecord> select_sensors(const std::vector<UnitRecord>& records) {
  const std::vector<int>& ids = informative_sensor_ids();
  std::vector<UnitRecord> out;
  out.reserve(records.size());
  for (const UnitRecord& u : records) {
    UnitRecord r;
    r.unit_id = u.unit_id;
    r.cycles = u.cycles;
    r.settings = u.settings;
    r.sensors.reserve(u.sensors.size());
    for (const std::vector<double>& row : u.sensors) {
      std::vector<double> sel;
      sel.reserve(ids.size());
      for (int id : ids) sel.push_back(row[static_cast<std::size_t>(id - 1)]);
      r.sensors.push_back(std::move(sel));
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Operating regimes and their per-sensor training statistics.
struct ConditionModel {
  std::vector<std::array<double, 3>> centroids;
  std::vector<std::vector<double>> mean;    // [condition][sensor]
  std::vector<std::vector<double>> stddev;  // 1.0 where the sensor is constant
  std::vector<std::vector<bool>> constant;
  double warn_distance = 0.5;

  int condition_count() const { return static_cast<int>(centroids.size()); }

  int assign(const std::array<double, 3>& s) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      double d = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double diff = s[static_cast<std::size_t>(i)] - centroids[c][static_cast<std::size_t>(i)];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  double distance_to(int c, const std::array<double, 3>& s) const {
    double d = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double diff = s[static_cast<std::size_t>(i)] - centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
      d += diff * diff;
    }
    return std::sqrt(d);
  }
};

namespace detail {

/// Accumulates mean and standard deviation per (condition, sensor) in row
/// order. The same code path serves the single-regime global variant, so a
/// one-condition fit is bitwise identical to global standardization.
inline void fit_stats(const std::vector<UnitRecord>& train, ConditionModel& model) {
  const std::size_t n_cond = model.centroids.size();
  const std::size_t n_sens = train.empty() ? 0 : train[0].sensors[0].size();
  std::vector<std::vector<double>> sum(n_cond, std::vector<double>(n_sens, 0.0));
  std::vector<std::vector<double>> sumsq(n_cond, std::vector<double>(n_sens, 0.0));
  std::vector<std::size_t> count(n_cond, 0);
  for (const UnitRecord& u : train) {
    for (std::size_t r = 0; r < u.sensors.size(); ++r) {
      const int c = model.assign(u.settings[r]);
      ++count[static_cast<std::size_t>(c)];
      for (std::size_t s = 0; s < n_sens; ++s) {
        const double x = u.sensors[r][s];
        sum[static_cast<std::size_t>(c)][s] += x;
        sumsq[static_cast<std::size_t>(c)][s] += x * x;
      }
    }
  }
  model.mean.assign(n_cond, std::vector<double>(n_sens, 0.0));
  model.stddev.assign(n_cond, std::vector<double>(n_sens, 1.0));
  model.constant.assign(n_cond, std::vector<bool>(n_sens, false));
  for (std::size_t c = 0; c < n_cond; ++c) {
    if (count[c] == 0) {
      std::fill(model.constant[c].begin(), model.constant[c].end(), true);
      continue;
    }
    const double n = static_cast<double>(count[c]);
    for (std::size_t s = 0; s < n_sens; ++s) {
      const double mu = sum[c][s] / n;
      const double var = sumsq[c][s] / n - mu * mu;
      model.mean[c][s] = mu;
      if (var > 1e-12) {
        model.stddev[c][s] = std::sqrt(var);
      } else {
        model.constant[c][s] = true;
      }
    }
  }
}

}  // namespace detail

/// Discovers operating regimes from the training split (unique setting
/// triples after rounding each setting to 2 decimals) and fits per-regime
/// sensor statistics. Never sees test data.
inline ConditionModel fit_conditions(const std::vector<UnitRecord>& train) {
  ConditionModel model;
  std::vector<std::array<double, 3>> rounded;
  for (const UnitRecord& u : train)
    for (const std::array<double, 3>& s : u.settings) {
      std::array<double, 3> r;
      for (int i = 0; i < 3; ++i) r[static_cast<std::size_t>(i)] = std::round(s[static_cast<std::size_t>(i)] * 100.0) / 100.0;
      rounded.push_back(r);
    }
  std::sort(rounded.begin(), rounded.end());
  rounded.erase(std::unique(rounded.begin(), rounded.end()), rounded.end());
  model.centroids = std::move(rounded);
  detail::fit_stats(train, model);
  return model;
}

/// Per-regime z-scoring with training statistics. Sensors constant within a
/// regime map to zero. Points far from every centroid are still assigned to
/// the nearest one, with a note in `warnings`.
inline std::vector<UnitRecord> apply_cs(const ConditionModel& model,
                                        const std::vector<UnitRecord>& records,
                                        std::vector<std::string>* warnings = nullptr) {
  std::vector<UnitRecord> out = records;
  for (UnitRecord& u : out) {
    for (std::size_t r = 0; r < u.sensors.size(); ++r) {
      const int c = model.assign(u.settings[r]);
      if (warnings != nullptr && model.distance_to(c, u.settings[r]) > model.warn_distance)
        warnings->push_back("unit " + std::to_string(u.unit_id) + " cycle " +
                            std::to_string(u.cycles[r]) + " far from every regime centroid");
      for (std::size_t s = 0; s < u.sensors[r].size(); ++s) {
        if (model.constant[static_cast<std::size_t>(c)][s]) {
          u.sensors[r][s] = 0.0;
        } else {
          u.sensors[r][s] = (u.sensors[r][s] - model.mean[static_cast<std::size_t>(c)][s]) /
                            model.stddev[static_cast<std::size_t>(c)][s];
        }
      }
    }
  }
  return out;
}

/// Single z-score per sensor from training statistics, ignoring regimes.
/// Implemented as a one-regime fit so it shares arithmetic with apply_cs.
inline std::vector<UnitRecord> global_standardize(const std::vector<UnitRecord>& train,
                                                  const std::vector<UnitRecord>& records,
                                                  std::vector<std::string>* warnings = nullptr) {
  ConditionModel model;
  model.centroids.push_back({0.0, 0.0, 0.0});
  model.warn_distance = std::numeric_limits<double>::infinity();
  detail::fit_stats(train, model);
  if (warnings != nullptr)
    for (std::size_t s = 0; s < model.constant[0].size(); ++s)
      if (model.constant[0][s])
        warnings->push_back("sensor column " + std::to_string(s) + " is constant; mapped to 0");
  return apply_cs(model, records);
}

/// s'_t = rho * s_t + (1 - rho) * s'_{t-1}, seeded with the first value.
inline std::vector<double> ewma(std::span<const double> series, double rho) {
  if (!(rho > 0.0) || rho > 1.0) throw ConfigError("ewma rho must lie in (0, 1]");
  std::vector<double> out;
  out.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i)
    out.push_back(i == 0 ? series[0] : rho * series[i] + (1.0 - rho) * out.back());
  return out;
}

/// EWMA smoothing of every sensor channel, per unit.
inline std::vector<UnitRecord> ewma_records(const std::vector<UnitRecord>& records, double rho) {
  std::vector<UnitRecord> out = records;
  for (UnitRecord& u : out) {
    if (u.sensors.empty()) continue;
    const std::size_t n_sens = u.sensors[0].size();
    std::vector<double> channel(u.sensors.size());
    for (std::size_t s = 0; s < n_sens; ++s) {
      for (std::size_t r = 0; r < u.sensors.size(); ++r) channel[r] = u.sensors[r][s];
      std::vector<double> smooth = ewma(channel, rho);
      for (std::size_t r = 0; r < u.sensors.size(); ++r) u.sensors[r][s] = smooth[r];
    }
  }
  return out;
}

/// Clamps a raw remaining-life value to the training cap.
inline double cap_rul(double raw, double cap = 125.0) {
  if (raw < 0.0) throw Error("negative remaining life " + std::to_string(raw));
  return std::min(raw, cap);
}

struct WindowingConfig {
  int window = 15;
  int stride = 1;
  double time_scale = 1.0;  // divisor for the cycle index, typically max train life
  double rul_cap = 125.0;
};

/// Sliding windows over one unit. The window ending at cycle c carries
/// run_time c / time_scale and the capped remaining life at c, scaled to
/// [0, 1] by the cap. `rul_at_end` is the unit's remaining life after its
/// last recorded cycle (0 for run-to-failure training units).
inline std::vector<SampleWindow> unit_windows(const UnitRecord& u, const WindowingConfig& cfg,
                                              double rul_at_end = 0.0,
                                              std::vector<std::string>* warnings = nullptr) {
  std::vector<SampleWindow> out;
  const int L = u.length();
  if (L < cfg.window) {
    if (warnings != nullptr)
      warnings->push_back("unit " + std::to_string(u.unit_id) + " has " + std::to_string(L) +
                          " cycles, shorter than the window " + std::to_string(cfg.window) +
                          "; skipped");
    return out;
  }
  const int f = static_cast<int>(u.sensors[0].size());
  for (int end = cfg.window - 1; end < L; end += cfg.stride) {
    SampleWindow w;
    w.features = Tensor::zeros({cfg.window, f});
    for (int r = 0; r < cfg.window; ++r) {
      const std::vector<double>& row = u.sensors[static_cast<std::size_t>(end - cfg.window + 1 + r)];
      for (int s = 0; s < f; ++s)
        w.features.data[static_cast<std::size_t>(r) * f + s] = row[static_cast<std::size_t>(s)];
    }
    const double cycle = static_cast<double>(u.cycles[static_cast<std::size_t>(end)]);
    const double raw_rul = static_cast<double>(L) - cycle + rul_at_end;
    w.run_time = cycle / cfg.time_scale;
    w.rul = cap_rul(raw_rul, cfg.rul_cap) / cfg.rul_cap;
    out.push_back(std::move(w));
  }
  return out;
}

/// Longest life in a unit list, the default run-time normalizer.
inline double max_cycle(const std::vector<UnitRecord>& units) {
  int best = 1;
  for (const UnitRecord& u : units) best = std::max(best, u.length());
  return static_cast<double>(best);
}

struct CmapssPipelineConfig {
  int window = 15;
  int stride = 1;
  double ewma_rho = 0.1;
  double rul_cap = 125.0;
  bool use_cs = true;  // false: global standardization
  int max_train_units = 0;  // 0 keeps every unit
};

struct ProcessedCmapss {
  std::vector<std::vector<SampleWindow>> train_units;
  std::vector<std::vector<SampleWindow>> test_units;  // empty vector where a unit was too short
  std::vector<double> test_rul;                       // raw file values, uncapped
  std::vector<int> train_unit_ids;
  std::vector<int> test_unit_ids;
  double time_scale = 1.0;
  ConditionModel conditions;
};

/// Full preprocessing chain: informative sensors, regime-based z-scoring
/// fitted on train only, EWMA smoothing, then windows with normalized
/// run-time and capped scaled labels.
inline ProcessedCmapss process_cmapss(const CmapssData& data, const CmapssPipelineConfig& cfg,
                                      std::vector<std::string>* warnings = nullptr) {
  std::vector<UnitRecord> train = select_sensors(data.train);
  if (cfg.max_train_units > 0 && static_cast<int>(train.size()) > cfg.max_train_units)
    train.resize(static_cast<std::size_t>(cfg.max_train_units));
  std::vector<UnitRecord> test = select_sensors(data.test);

  ProcessedCmapss out;
  out.test_rul = data.test_rul;
  if (cfg.use_cs) {
    out.conditions = fit_conditions(train);
    train = apply_cs(out.conditions, train, warnings);
    test = apply_cs(out.conditions, test, warnings);
  } else {
    std::vector<UnitRecord> fit_on = train;
    train = global_standardize(fit_on, train, warnings);
    test = global_standardize(fit_on, test, warnings);
  }
  train = ewma_records(train, cfg.ewma_rho);
  test = ewma_records(test, cfg.ewma_rho);

  WindowingConfig wcfg;
  wcfg.window = cfg.window;
  wcfg.stride = cfg.stride;
  wcfg.rul_cap = cfg.rul_cap;
  wcfg.time_scale = max_cycle(train);
  out.time_scale = wcfg.time_scale;

  for (const UnitRecord& u : train) {
    out.train_units.push_back(unit_windows(u, wcfg, 0.0, warnings));
    out.train_unit_ids.push_back(u.unit_id);
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.test_units.push_back(unit_windows(test[i], wcfg, data.test_rul[i], warnings));
    out.test_unit_ids.push_back(test[i].unit_id);
  }
  return out;
}

}  // namespace metapinn
