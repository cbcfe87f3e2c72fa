#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "metapinn/cmapss.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/meta.hpp"
#include "metapinn/metrics.hpp"
#include "metapinn/networks.hpp"
#include "metapinn/sample.hpp"
#include "metapinn/tasks.hpp"

namespace metapinn {

/// Model outputs for a window list, rescaled from the trained [0, 1] label
/// range back to cycles and clamped to the valid label range.
inline std::vector<double> predict_windows(const ModelConfig& cfg, const ParameterSet& params,
                                           const std::vector<SampleWindow>& windows,
                                           double rul_cap) {
  std::vector<double> out;
  out.reserve(windows.size());
  for (const SampleWindow& w : windows)
    out.push_back(std::clamp(predict(cfg, params, w.features, w.run_time) * rul_cap, 0.0, rul_cap));
  return out;
}

struct LastPointEval {
  MetricsReport report;
  int skipped_units = 0;
  std::vector<int> unit_ids;  // units that contributed a prediction
};

/// Benchmark protocol: one prediction per test unit, taken at its last
/// available window, scored against the capped remaining life from the
/// truth file. Before predicting, the model adapts to the unit on up to
/// `meta.shots` of its earlier windows, drawn by a per-unit seeded stream;
/// shots = 0 scores the initialization as-is. Units too short to fill a
/// window are skipped and counted.
inline LastPointEval evaluate_last_point(const ModelConfig& cfg, const ParameterSet& params,
                                         const ProcessedCmapss& data, const MetaConfig& meta,
                                         double rul_cap, const Rng& rng_base,
                                         std::vector<std::string>* warnings = nullptr) {
  LastPointEval out;
  std::vector<double> truth;
  std::vector<double> pred;
  for (std::size_t i = 0; i < data.test_units.size(); ++i) {
    const std::vector<SampleWindow>& windows = data.test_units[i];
    if (windows.empty()) {
      ++out.skipped_units;
      if (warnings != nullptr)
        warnings->push_back("test unit " + std::to_string(data.test_unit_ids[i]) +
                            " has no full window; skipped");
      continue;
    }
    const int unit_id = data.test_unit_ids[i];
    Rng unit_rng = rng_base.split(0x6C617374, static_cast<std::uint64_t>(unit_id));
    std::vector<SampleWindow> support;
    const int pool = static_cast<int>(windows.size()) - 1;  // the last window is the target
    const int shots = std::min(meta.shots, pool);
    if (shots > 0) {
      const std::vector<int> idx = detail::draw_batch(pool, shots, unit_rng);
      for (int k : idx) support.push_back(windows[static_cast<std::size_t>(k)]);
    }
    const ParameterSet theta = few_shot_adapt(cfg, params, support, meta, unit_rng.split(1));
    const SampleWindow& last = windows.back();
    truth.push_back(cap_rul(data.test_rul[i], rul_cap));
    pred.push_back(
        std::clamp(predict(cfg, theta, last.features, last.run_time) * rul_cap, 0.0, rul_cap));
    out.unit_ids.push_back(unit_id);
  }
  if (truth.empty()) throw Error("no test unit produced a prediction");
  out.report = compute_metrics(truth, pred);
  return out;
}

/// Per-unit few-shot protocol: adapt on the first `shots` support samples of
/// each task, then score the pooled query predictions.
inline MetricsReport evaluate_few_shot(const ModelConfig& cfg, const ParameterSet& phi,
                                       const std::vector<MetaTask>& tasks, const MetaConfig& meta,
                                       double rul_cap, const Rng& rng_base) {
  if (tasks.empty()) throw Error("few-shot evaluation on an empty task list");
  std::vector<double> truth;
  std::vector<double> pred;
  for (const MetaTask& task : tasks) {
    std::vector<SampleWindow> support = task.support;
    if (static_cast<int>(support.size()) > meta.shots)
      support.resize(static_cast<std::size_t>(meta.shots));
    Rng task_rng = rng_base.split(0x65766179, static_cast<std::uint64_t>(task.id));
    const ParameterSet theta = few_shot_adapt(cfg, phi, support, meta, task_rng);
    for (const SampleWindow& w : task.query) {
      truth.push_back(w.rul * rul_cap);
      pred.push_back(std::clamp(predict(cfg, theta, w.features, w.run_time) * rul_cap, 0.0, rul_cap));
    }
  }
  return compute_metrics(truth, pred);
}

struct AblationConfig {
  ModelConfig model;
  MetaConfig meta;              // budget shared by all variants
  double physics_weight = 1.0;  // applied by the physics-on variants
  double rul_cap = 125.0;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    meta.validate();
    if (!(physics_weight > 0.0)) throw ConfigError("ablation.physics_weight must be > 0");
    if (!(rul_cap > 0.0)) throw ConfigError("ablation.rul_cap must be > 0");
  }
};

struct AblationRow {
  std::string name;
  bool physics = false;
  bool meta = false;
  MetricsReport report;
};

/// Four-way factor study over {physics regulator on/off} x {episodic
/// initialization vs pooled joint training}. Every variant starts from the
/// same seed and is scored by the same few-shot protocol.
inline std::vector<AblationRow> run_ablation(const AblationConfig& cfg,
                                             const std::vector<MetaTask>& train_tasks,
                                             const std::vector<MetaTask>& eval_tasks) {
  cfg.validate();
  const struct {
    const char* name;
    bool physics;
    bool meta;
  } variants[] = {{"base", false, false},
                  {"physics", true, false},
                  {"meta", false, true},
                  {"physics+meta", true, true}};

  std::vector<SampleWindow> pooled;
  for (const MetaTask& task : train_tasks) {
    pooled.insert(pooled.end(), task.support.begin(), task.support.end());
    pooled.insert(pooled.end(), task.query.begin(), task.query.end());
  }
  const int iters_per_epoch =
      (static_cast<int>(train_tasks.size()) + cfg.meta.meta_batch - 1) / cfg.meta.meta_batch;
  const int joint_steps =
      cfg.meta.epochs * iters_per_epoch * cfg.meta.inner_steps * cfg.meta.meta_batch;

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    MetaConfig meta = cfg.meta;
    meta.weights.physics = variant.physics ? cfg.physics_weight : 0.0;
    ParameterSet phi;
    if (variant.meta) {
      phi = meta_train(cfg.model, train_tasks, meta, cfg.seed).best;
    } else {
      phi = joint_train(cfg.model, pooled, meta.weights, joint_steps, meta.inner_batch,
                        meta.inner_alpha, cfg.seed);
    }
    AblationRow row;
    row.name = variant.name;
    row.physics = variant.physics;
    row.meta = variant.meta;
    row.report = evaluate_few_shot(cfg.model, phi, eval_tasks, meta, cfg.rul_cap, Rng(cfg.seed));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17);
  out << "variant,physics,meta,rmse,mae,r2,score,n\n";
  for (const AblationRow& row : rows)
    out << row.name << ',' << (row.physics ? 1 : 0) << ',' << (row.meta ? 1 : 0) << ','
        << row.report.rmse << ',' << row.report.mae << ',' << row.report.r2 << ','
        << row.report.score << ',' << row.report.n << '\n';
  if (!out) throw IoError("failed while writing " + path);
}

}  // namespace metapinn
