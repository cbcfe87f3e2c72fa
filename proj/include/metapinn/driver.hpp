#pragma once

#include <string>
#include <vector>

#include "metapinn/cache.hpp"
#include "metapinn/cmapss.hpp"
#include "metapinn/config.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/synthetic.hpp"
#include "metapinn/tasks.hpp"

namespace metapinn {

/// A config's training data in task form, with the processed source kept
/// for evaluation.
struct DatasetBundle {
  std::vector<MetaTask> tasks;
  ProcessedCmapss processed;  // filled for cmapss and cache sources
  bool has_processed = false;
  int window = 0;
  int features = 0;
  std::vector<std::string> warnings;
};

/// Checks that the model's input geometry matches the dataset's windows.
inline void require_geometry(const RunConfig& cfg, int window, int features) {
  if (cfg.model.hsm.time_steps != window)
    throw ConfigError("hsm.time_steps is " + std::to_string(cfg.model.hsm.time_steps) +
                      " but the dataset windows have " + std::to_string(window) + " rows");
  if (cfg.model.hsm.input_features != features)
    throw ConfigError("hsm.input_features is " + std::to_string(cfg.model.hsm.input_features) +
                      " but the dataset windows have " + std::to_string(features) + " columns");
}

inline DatasetBundle load_dataset(const RunConfig& cfg) {
  DatasetBundle bundle;
  TaskBuildConfig tcfg;
  tcfg.support_fraction = cfg.dataset.support_fraction;
  tcfg.seed = cfg.seed;

  if (cfg.dataset.kind == "synthetic") {
    const SyntheticFleet fleet = synthesize_degradation_fleet(cfg.fleet);
    bundle.window = cfg.fleet.window;
    bundle.features = cfg.fleet.features;
    bundle.tasks = build_meta_tasks(fleet.units, tcfg, &fleet.unit_ids, &bundle.warnings);
  } else if (cfg.dataset.kind == "cmapss") {
    const std::string root = effective_data_root(cfg);
    const CmapssData raw = load_cmapss(root, cfg.dataset.subset);
    CmapssPipelineConfig pcfg;
    pcfg.window = cfg.dataset.window;
    pcfg.stride = cfg.dataset.stride;
    pcfg.ewma_rho = cfg.dataset.ewma_rho;
    pcfg.rul_cap = cfg.dataset.rul_cap;
    pcfg.use_cs = cfg.dataset.use_cs;
    pcfg.max_train_units = cfg.dataset.max_train_units;
    bundle.processed = process_cmapss(raw, pcfg, &bundle.warnings);
    bundle.has_processed = true;
    bundle.window = pcfg.window;
    bundle.features = static_cast<int>(informative_sensor_ids().size());
    bundle.tasks = build_meta_tasks(bundle.processed.train_units, tcfg,
                                    &bundle.processed.train_unit_ids, &bundle.warnings);
  } else if (cfg.dataset.kind == "cache") {
    if (cfg.dataset.cache_path.empty())
      throw ConfigError("dataset.cache_path is required when dataset.kind is cache");
    bundle.processed = load_cache(cfg.dataset.cache_path, &bundle.window, &bundle.features);
    bundle.has_processed = true;
    bundle.tasks = build_meta_tasks(bundle.processed.train_units, tcfg,
                                    &bundle.processed.train_unit_ids, &bundle.warnings);
  } else {
    throw ConfigError("dataset.kind must be cmapss, synthetic, or cache");
  }
  require_geometry(cfg, bundle.window, bundle.features);
  if (bundle.tasks.empty()) throw Error("the dataset produced no usable tasks");
  return bundle;
}

/// Seeded split into a training pool and a held-out remainder.
inline void split_tasks(const std::vector<MetaTask>& tasks, double train_fraction,
                        std::uint64_t seed, std::vector<MetaTask>& train,
                        std::vector<MetaTask>& held_out) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  const int n = static_cast<int>(tasks.size());
  if (n < 2) throw Error("need at least 2 tasks to split");
  Rng rng = Rng(seed).split(0x7370);
  const std::vector<int> perm = rng.permutation(n);
  int n_train = static_cast<int>(std::llround(train_fraction * n));
  n_train = std::max(1, std::min(n - 1, n_train));
  train.clear();
  held_out.clear();
  for (int i = 0; i < n; ++i) {
    const MetaTask& t = tasks[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    if (i < n_train) {
      train.push_back(t);
    } else {
      held_out.push_back(t);
    }
  }
}

}  // namespace metapinn
