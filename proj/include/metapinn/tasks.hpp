#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/sample.hpp"

namespace metapinn {

struct TaskBuildConfig {
  double support_fraction = 0.5;
  int min_samples = 2;  // tasks below this are dropped
  std::uint64_t seed = 0;

  void validate() const {
    if (!(support_fraction > 0.0) || !(support_fraction < 1.0))
      throw ConfigError("tasks.support_fraction must lie in (0, 1)");
    if (min_samples < 2) throw ConfigError("tasks.min_samples must be >= 2");
  }
};

/// One meta-task per unit: the unit's windows are split into disjoint
/// support and query sets by a seeded permutation. Units with fewer than
/// `min_samples` windows are dropped with a note in `warnings`.
inline std::vector<MetaTask> build_meta_tasks(const std::vector<std::vector<SampleWindow>>& units,
                                              const TaskBuildConfig& cfg,
                                              const std::vector<int>* unit_ids = nullptr,
                                              std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  Rng base(cfg.seed);
  std::vector<MetaTask> tasks;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const std::vector<SampleWindow>& windows = units[u];
    const int unit_id = unit_ids != nullptr ? (*unit_ids)[u] : static_cast<int>(u);
    const int n = static_cast<int>(windows.size());
    if (n < cfg.min_samples) {
      if (warnings != nullptr)
        warnings->push_back("unit " + std::to_string(unit_id) + " has " + std::to_string(n) +
                            " windows, fewer than " + std::to_string(cfg.min_samples) +
                            "; task dropped");
      continue;
    }
    int n_support = static_cast<int>(std::llround(cfg.support_fraction * n));
    n_support = std::max(1, std::min(n - 1, n_support));
    Rng rng = base.split(0x73706C69, static_cast<std::uint64_t>(u));
    const std::vector<int> perm = rng.permutation(n);
    MetaTask task;
    task.id = static_cast<int>(tasks.size());
    task.provenance = "unit " + std::to_string(unit_id);
    for (int i = 0; i < n; ++i) {
      const SampleWindow& w = windows[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      if (i < n_support) {
        task.support.push_back(w);
      } else {
        task.query.push_back(w);
      }
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace metapinn
