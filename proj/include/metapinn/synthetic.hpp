#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "metapinn/cmapss.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/sample.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

struct FleetSpec {
  int units = 20;
  int min_life = 60;
  int max_life = 100;
  int features = 14;
  int window = 15;
  int stride = 1;
  double noise = 0.02;
  double drift = 0.3;  // per-unit spread of the feature response
  double rul_cap = 125.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (units < 1) throw ConfigError("fleet.units must be >= 1");
    if (min_life < 2 || max_life < min_life)
      throw ConfigError("fleet.min_life/max_life must satisfy 2 <= min <= max");
    if (features < 1) throw ConfigError("fleet.features must be >= 1");
    if (window < 1 || window > min_life)
      throw ConfigError("fleet.window must lie in [1, min_life]");
    if (noise < 0.0) throw ConfigError("fleet.noise must be >= 0");
    if (drift < 0.0) throw ConfigError("fleet.drift must be >= 0");
    if (!(rul_cap > 0.0)) throw ConfigError("fleet.rul_cap must be > 0");
  }
};

struct SyntheticFleet {
  std::vector<std::vector<SampleWindow>> units;
  std::vector<int> unit_ids;
  std::vector<int> lives;
  double time_scale = 1.0;
};

namespace detail {

inline double feature_shape(int kind, double s) {
  switch (kind & 3) {
    case 0: return s;
    case 1: return s * s;
    case 2: return std::tanh(2.0 * s);
    default: return std::sqrt(s);
  }
}

}  // namespace detail

/// Seeded fleet of run-to-failure units. Each unit follows a monotone latent
/// degradation s(c) = (c / L)^gamma; every feature is a smooth fleet-level
/// function of s with a unit-specific response factor plus Gaussian noise.
/// Labels count exact remaining cycles, capped and scaled by the cap;
/// run_time is the cycle index over the fleet's longest life.
inline SyntheticFleet synthesize_degradation_fleet(const FleetSpec& spec) {
  spec.validate();
  Rng root(spec.seed);

  Rng fleet_rng = root.split(1);
  std::vector<double> amp(static_cast<std::size_t>(spec.features));
  std::vector<int> shape(static_cast<std::size_t>(spec.features));
  for (int j = 0; j < spec.features; ++j) {
    const double sign = fleet_rng.uniform() < 0.5 ? -1.0 : 1.0;
    amp[static_cast<std::size_t>(j)] = sign * fleet_rng.uniform(0.5, 1.5);
    shape[static_cast<std::size_t>(j)] = static_cast<int>(fleet_rng.uniform_int(0, 3));
  }

  SyntheticFleet fleet;
  fleet.time_scale = static_cast<double>(spec.max_life);
  for (int u = 0; u < spec.units; ++u) {
    Rng unit_rng = root.split(2, static_cast<std::uint64_t>(u));
    Rng noise_rng = root.split(3, static_cast<std::uint64_t>(u));
    const int life = static_cast<int>(unit_rng.uniform_int(spec.min_life, spec.max_life));
    const double gamma = unit_rng.uniform(0.9, 1.4);
    std::vector<double> factor(static_cast<std::size_t>(spec.features));
    for (int j = 0; j < spec.features; ++j)
      factor[static_cast<std::size_t>(j)] = 1.0 + spec.drift * unit_rng.uniform(-1.0, 1.0);

    // trajectory[c - 1] holds the feature row at cycle c
    std::vector<std::vector<double>> traj(static_cast<std::size_t>(life));
    for (int c = 1; c <= life; ++c) {
      const double s = std::pow(static_cast<double>(c) / life, gamma);
      std::vector<double>& row = traj[static_cast<std::size_t>(c - 1)];
      row.resize(static_cast<std::size_t>(spec.features));
      for (int j = 0; j < spec.features; ++j)
        row[static_cast<std::size_t>(j)] =
            amp[static_cast<std::size_t>(j)] * factor[static_cast<std::size_t>(j)] *
                detail::feature_shape(shape[static_cast<std::size_t>(j)], s) +
            spec.noise * noise_rng.normal();
    }

    std::vector<SampleWindow> windows;
    for (int end = spec.window - 1; end < life; end += spec.stride) {
      SampleWindow w;
      w.features = Tensor::zeros({spec.window, spec.features});
      for (int r = 0; r < spec.window; ++r)
        for (int j = 0; j < spec.features; ++j)
          w.features.data[static_cast<std::size_t>(r) * spec.features + j] =
              traj[static_cast<std::size_t>(end - spec.window + 1 + r)][static_cast<std::size_t>(j)];
      const double cycle = static_cast<double>(end + 1);
      w.run_time = cycle / fleet.time_scale;
      w.rul = cap_rul(static_cast<double>(life) - cycle, spec.rul_cap) / spec.rul_cap;
      windows.push_back(std::move(w));
    }
    fleet.units.push_back(std::move(windows));
    fleet.unit_ids.push_back(u);
    fleet.lives.push_back(life);
  }
  return fleet;
}

struct CmapssSimSpec {
  std::string subset = "FD001";
  int train_units = -1;  // -1 picks the subset's catalog count
  int test_units = -1;
  int min_life = 80;
  int max_life = 160;
  double setting_jitter = 0.004;  // below half the 2-decimal rounding step
  std::uint64_t seed = 7;
};

namespace detail {

inline const std::vector<std::array<double, 3>>& sim_regimes(const std::string& subset) {
  static const std::vector<std::array<double, 3>> single = {{0.0, 0.0, 100.0}};
  static const std::vector<std::array<double, 3>> six = {
      {0.0, 0.0, 100.0},  {10.0, 0.25, 100.0}, {20.0, 0.7, 100.0},
      {25.0, 0.62, 60.0}, {35.0, 0.84, 100.0}, {42.0, 0.84, 100.0}};
  return (subset == "FD002" || subset == "FD004") ? six : single;
}

inline void sim_catalog_counts(const std::string& subset, int& train, int& test) {
  if (subset == "FD001") { train = 100; test = 100; }
  else if (subset == "FD002") { train = 260; test = 259; }
  else if (subset == "FD003") { train = 100; test = 100; }
  else if (subset == "FD004") { train = 249; test = 248; }
  else throw ConfigError("unknown subset '" + subset + "'");
}

struct SimSensorModel {
  std::array<double, 21> base;
  std::array<double, 21> amp;    // degradation swing; 0 for constant sensors
  std::array<double, 21> sigma;  // noise scale
  std::array<double, 21> expo;   // trend exponent

  SimSensorModel() {
    const std::array<double, 21> b0 = {518.67, 642.0, 1580.0,  1400.0, 14.62, 21.61, 554.0,
                                       2388.0, 9050.0, 1.3,     47.5,   521.0, 2388.0, 8130.0,
                                       8.44,   0.03,   392.0,   2388.0, 100.0, 38.9,  23.3};
    base = b0;
    for (int s = 0; s < 21; ++s) {
      const int id = s + 1;
      const bool constant = (id == 1 || id == 5 || id == 18 || id == 19);
      const double scale = std::abs(b0[static_cast<std::size_t>(s)]) + 0.01;
      const double dir = (s % 2 == 0) ? 1.0 : -1.0;
      amp[static_cast<std::size_t>(s)] = constant ? 0.0 : dir * 0.03 * scale;
      sigma[static_cast<std::size_t>(s)] = constant ? 0.0 : 0.001 * scale;
      expo[static_cast<std::size_t>(s)] = 1.0 + 0.5 * (s % 3);
    }
  }

  double regime_offset(int s, int r) const {
    const double scale = std::abs(base[static_cast<std::size_t>(s)]) + 0.01;
    const int h = ((s + 1) * 7919 + r * 104729) % 11;
    return 0.02 * scale * (static_cast<double>(h) - 5.0) / 5.0;
  }
};

inline void sim_write_unit(std::ostream& out, const CmapssSimSpec& spec,
                           const SimSensorModel& model, int unit_id, int full_life,
                           int observed, Rng& rng) {
  const std::vector<std::array<double, 3>>& regimes = sim_regimes(spec.subset);
  out << std::fixed;
  for (int c = 1; c <= observed; ++c) {
    const int r = regimes.size() == 1
                      ? 0
                      : static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(regimes.size()) - 1));
    out << unit_id << ' ' << c;
    for (int i = 0; i < 3; ++i) {
      const double jitter = rng.uniform(-spec.setting_jitter, spec.setting_jitter);
      out << ' ' << std::setprecision(4) << regimes[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)] + jitter;
    }
    const double d = static_cast<double>(c) / full_life;
    for (int s = 0; s < 21; ++s) {
      const double value = model.base[static_cast<std::size_t>(s)] + model.regime_offset(s, r) +
                           model.amp[static_cast<std::size_t>(s)] *
                               std::pow(d, model.expo[static_cast<std::size_t>(s)]) +
                           model.sigma[static_cast<std::size_t>(s)] * rng.normal();
      out << ' ' << std::setprecision(4) << value;
    }
    out << '\n';
  }
}

}  // namespace detail

/// Writes train/test/RUL files for one subset in the 26-column turbofan
/// format. Multi-condition subsets cycle through six operating regimes whose
/// settings, rounded to 2 decimals, recover exactly six distinct triples.
/// Train units run to failure; test units are truncated early and their
/// remaining cycles go to the RUL file. Fully determined by the seed.
inline void simulate_cmapss_files(const std::string& dir, const CmapssSimSpec& spec) {
  int def_train = 0;
  int def_test = 0;
  detail::sim_catalog_counts(spec.subset, def_train, def_test);
  const int n_train = spec.train_units > 0 ? spec.train_units : def_train;
  const int n_test = spec.test_units > 0 ? spec.test_units : def_test;
  if (spec.min_life < 20 || spec.max_life < spec.min_life)
    throw ConfigError("sim lives must satisfy 20 <= min <= max");
  if (!(spec.setting_jitter >= 0.0) || spec.setting_jitter >= 0.005)
    throw ConfigError("sim setting_jitter must lie in [0, 0.005)");

  const detail::SimSensorModel model;
  Rng root(spec.seed);

  std::ofstream train(dir + "/train_" + spec.subset + ".txt");
  if (!train) throw IoError("cannot write " + dir + "/train_" + spec.subset + ".txt");
  for (int u = 1; u <= n_train; ++u) {
    Rng rng = root.split(1, static_cast<std::uint64_t>(u));
    const int life = static_cast<int>(rng.uniform_int(spec.min_life, spec.max_life));
    detail::sim_write_unit(train, spec, model, u, life, life, rng);
  }

  std::ofstream test(dir + "/test_" + spec.subset + ".txt");
  std::ofstream rul(dir + "/RUL_" + spec.subset + ".txt");
  if (!test || !rul) throw IoError("cannot write test/RUL files under " + dir);
  for (int u = 1; u <= n_test; ++u) {
    Rng rng = root.split(2, static_cast<std::uint64_t>(u));
    const int life = static_cast<int>(rng.uniform_int(spec.min_life, spec.max_life));
    int observed = static_cast<int>(std::llround(life * rng.uniform(0.4, 0.9)));
    observed = std::max(20, std::min(life - 1, observed));
    detail::sim_write_unit(test, spec, model, u, life, observed, rng);
    rul << life - observed << '\n';
  }
}

}  // namespace metapinn
