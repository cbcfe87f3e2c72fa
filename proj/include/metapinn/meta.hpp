#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "metapinn/adam.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/losses.hpp"
#include "metapinn/networks.hpp"
#include "metapinn/parameters.hpp"
#include "metapinn/rng.hpp"
#include "metapinn/sample.hpp"

namespace metapinn {

/// Episodic training schedule: inner adaptation budget, outer update, and
/// the validation protocol.
struct MetaConfig {
  int inner_steps = 8;        // k
  int inner_batch = 64;
  int meta_batch = 5;         // B, tasks per outer update
  double outer_rate = 0.1;    // eta
  int epochs = 50;
  double val_fraction = 0.1;  // share of tasks held out for validation
  int shots = 15;             // K, support size at adaptation time
  double inner_alpha = 0.001; // Adam rate for the inner loop
  LossWeights weights;
  int threads = 1;

  void validate() const {
    if (inner_steps < 0) throw ConfigError("meta.inner_steps must be >= 0");
    if (inner_batch < 1) throw ConfigError("meta.inner_batch must be >= 1");
    if (meta_batch < 1) throw ConfigError("meta.meta_batch must be >= 1");
    if (!(outer_rate > 0.0)) throw ConfigError("meta.outer_rate must be > 0");
    if (epochs < 1) throw ConfigError("meta.epochs must be >= 1");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw ConfigError("meta.val_fraction must lie in [0, 1)");
    if (shots < 0) throw ConfigError("meta.shots must be >= 0");
    if (!(inner_alpha > 0.0)) throw ConfigError("meta.inner_alpha must be > 0");
    if (threads < 1) throw ConfigError("meta.threads must be >= 1");
    weights.validate();
  }
};

struct LogRow {
  int iteration = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct MetaResult {
  ParameterSet best;
  ParameterSet final_params;
  std::vector<LogRow> log;
  int best_iteration = -1;
  double best_val = std::numeric_limits<double>::infinity();
  double initial_val = std::numeric_limits<double>::quiet_NaN();  // before any update
};

namespace detail {

/// Draws `count` indices from [0, n): a random subset when the pool is big
/// enough, with replacement otherwise.
inline std::vector<int> draw_batch(int n, int count, Rng& rng) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(count));
  if (n >= count) {
    std::vector<int> perm = rng.permutation(n);
    idx.assign(perm.begin(), perm.begin() + count);
  } else {
    for (int i = 0; i < count; ++i) idx.push_back(rng.uniform_int(0, n - 1));
  }
  return idx;
}

struct InnerResult {
  ParameterSet theta;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
};

inline InnerResult inner_adapt_impl(const ModelConfig& cfg, const ParameterSet& phi,
                                    const std::vector<SampleWindow>& data, const MetaConfig& meta,
                                    Rng rng, Graph& arena) {
  if (data.empty()) throw Error("task has no training samples");
  InnerResult res;
  res.theta = phi;
  AdamState opt(res.theta, meta.inner_alpha);
  ParameterSet grads = phi;  // structure template; zeroed by total_loss_grad
  const int n = static_cast<int>(data.size());
  Rng batch_rng = rng.split(1);
  Rng drop_rng = rng.split(2);
  for (int step = 0; step < meta.inner_steps; ++step) {
    // draw_batch falls back to with-replacement draws when the task's data
    // is smaller than the configured mini-batch
    std::vector<int> idx = draw_batch(n, meta.inner_batch, batch_rng);
    BatchLoss loss = total_loss_grad(cfg, res.theta, data, idx, meta.weights, grads, arena, true,
                                     &drop_rng);
    if (!std::isfinite(loss.total)) throw NonFiniteError("inner loop diverged");
    adam_step(opt, res.theta, grads);
    res.last_loss = loss.total;
  }
  return res;
}

inline void run_tasks(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int workers = std::min(threads, count);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// k Adam steps on the task's training data starting from a deep copy of
/// `phi`; `phi` itself is never touched. k = 0 returns the copy unchanged.
inline ParameterSet inner_adapt(const ModelConfig& cfg, const ParameterSet& phi,
                                const std::vector<SampleWindow>& data, const MetaConfig& meta,
                                Rng rng) {
  Graph arena;
  return detail::inner_adapt_impl(cfg, phi, data, meta, rng, arena).theta;
}

/// Moves the initialization toward the average adapted solution:
/// phi + eta * mean_p(theta_p - phi), summed in the given task order.
inline ParameterSet meta_update(const ParameterSet& phi, std::span<const ParameterSet> adapted,
                                double eta) {
  if (adapted.empty()) throw Error("meta_update with no adapted tasks");
  ParameterSet acc = phi;
  for (std::size_t i = 0; i < acc.count(); ++i)
    for (double& x : acc.tensor(i).data) x = 0.0;
  for (const ParameterSet& theta : adapted) {
    require_same_structure(phi, theta);
    for (std::size_t i = 0; i < acc.count(); ++i) {
      auto& a = acc.tensor(i).data;
      const auto& t = theta.tensor(i).data;
      const auto& p = phi.tensor(i).data;
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += t[j] - p[j];
    }
  }
  ParameterSet out = phi;
  add_scaled(out, acc, eta / static_cast<double>(adapted.size()));
  return out;
}

/// Adaptation at deployment: same machinery as the inner loop, starting from
/// the trained initialization. An empty support set is the 0-shot path and
/// returns the initialization untouched.
inline ParameterSet few_shot_adapt(const ModelConfig& cfg, const ParameterSet& phi,
                                   const std::vector<SampleWindow>& support,
                                   const MetaConfig& meta, Rng rng) {
  if (support.empty()) return phi;
  return inner_adapt(cfg, phi, support, meta, rng);
}

/// Mean post-adaptation query loss over a fixed task list. Adaptation draws
/// per-task streams from the task id, so the number is comparable across
/// calls with different `phi`.
inline double validation_loss(const ModelConfig& cfg, const ParameterSet& phi,
                              std::span<const MetaTask> tasks, const MetaConfig& meta,
                              const Rng& rng_base) {
  if (tasks.empty()) throw Error("validation on an empty task list");
  double acc = 0.0;
  for (const MetaTask& task : tasks) {
    Rng task_rng = rng_base.split(0x76616C, static_cast<std::uint64_t>(task.id));
    ParameterSet theta = inner_adapt(cfg, phi, task.support, meta, task_rng);
    acc += total_loss(cfg, theta, task.query, meta.weights).total;
  }
  return acc / static_cast<double>(tasks.size());
}

/// Full episodic training loop: sample a task batch, adapt each task from
/// the shared initialization, move the initialization along the mean
/// displacement, validate once per epoch on held-out tasks, and keep the
/// best-validating initialization.
inline MetaResult meta_train(const ModelConfig& cfg, const std::vector<MetaTask>& tasks,
                             const MetaConfig& meta, std::uint64_t seed) {
  cfg.validate();
  meta.validate();
  Rng rng(seed);

  const int n = static_cast<int>(tasks.size());
  int n_val = static_cast<int>(std::floor(meta.val_fraction * n));
  if (meta.val_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;
  const int n_train = n - n_val;
  if (n_train < meta.meta_batch)
    throw Error("need at least " + std::to_string(meta.meta_batch) + " training tasks, have " +
                std::to_string(n_train));

  Rng split_rng = rng.split(0x73706C6974);
  std::vector<int> order = split_rng.permutation(n);
  std::vector<int> train_ids(order.begin(), order.begin() + n_train);
  std::vector<const MetaTask*> train_tasks;
  for (int id : train_ids) train_tasks.push_back(&tasks[static_cast<std::size_t>(id)]);
  std::vector<MetaTask> val_tasks;
  for (int i = n_train; i < n; ++i) val_tasks.push_back(tasks[static_cast<std::size_t>(order[i])]);

  MetaResult result;
  ParameterSet phi = make_parameters(cfg, rng.split(0x696E6974));
  const int iters_per_epoch = (n_train + meta.meta_batch - 1) / meta.meta_batch;
  const auto t0 = std::chrono::steady_clock::now();
  double last_val = std::numeric_limits<double>::quiet_NaN();
  if (!val_tasks.empty()) {
    result.initial_val = validation_loss(cfg, phi, val_tasks, meta, rng);
    last_val = result.initial_val;
    result.best_val = result.initial_val;
    result.best = phi;
  }

  int iteration = 0;
  for (int epoch = 0; epoch < meta.epochs; ++epoch) {
    for (int it = 0; it < iters_per_epoch; ++it, ++iteration) {
      Rng iter_rng = rng.split(0x69746572, static_cast<std::uint64_t>(iteration));
      std::vector<int> batch = detail::draw_batch(n_train, meta.meta_batch, iter_rng);

      std::vector<detail::InnerResult> adapted(batch.size());
      detail::run_tasks(static_cast<int>(batch.size()), meta.threads, [&](int b) {
        const MetaTask& task = *train_tasks[static_cast<std::size_t>(batch[static_cast<std::size_t>(b)])];
        Rng task_rng = rng.split(0x696E6E65, static_cast<std::uint64_t>(iteration),
                                 static_cast<std::uint64_t>(b));
        Graph arena;
        adapted[static_cast<std::size_t>(b)] =
            detail::inner_adapt_impl(cfg, phi, task.support, meta, task_rng, arena);
      });

      std::vector<ParameterSet> thetas;
      thetas.reserve(adapted.size());
      double train_loss = 0.0;
      for (auto& a : adapted) {
        train_loss += a.last_loss;
        thetas.push_back(std::move(a.theta));
      }
      train_loss /= static_cast<double>(thetas.size());
      if (meta.inner_steps > 0 && !std::isfinite(train_loss))
        throw NonFiniteError("meta-training diverged at iteration " + std::to_string(iteration));
      phi = meta_update(phi, thetas, meta.outer_rate);

      LogRow row;
      row.iteration = iteration;
      row.train_loss = train_loss;
      row.val_loss = last_val;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(row);
    }

    if (!val_tasks.empty()) {
      last_val = validation_loss(cfg, phi, val_tasks, meta, rng);
      result.log.back().val_loss = last_val;
      if (last_val < result.best_val) {
        result.best_val = last_val;
        result.best = phi;
        result.best_iteration = iteration - 1;
      }
    }
  }

  result.final_params = phi;
  if (result.best.count() == 0) {
    result.best = result.final_params;
    result.best_iteration = iteration - 1;
  }
  return result;
}

/// Conventional (non-episodic) training on a pooled sample list; the
/// baseline the episodic loop is compared against.
inline ParameterSet joint_train(const ModelConfig& cfg, const std::vector<SampleWindow>& samples,
                                const LossWeights& weights, int steps, int batch_size,
                                double alpha, std::uint64_t seed) {
  if (samples.empty()) throw Error("joint training on an empty sample list");
  Rng rng(seed);
  ParameterSet params = make_parameters(cfg, rng.split(0x696E6974));
  AdamState opt(params, alpha);
  ParameterSet grads = params;
  Graph arena;
  Rng batch_rng = rng.split(1);
  Rng drop_rng = rng.split(2);
  const int n = static_cast<int>(samples.size());
  for (int step = 0; step < steps; ++step) {
    std::vector<int> idx = detail::draw_batch(n, std::min(batch_size, n), batch_rng);
    BatchLoss loss =
        total_loss_grad(cfg, params, samples, idx, weights, grads, arena, true, &drop_rng);
    if (!std::isfinite(loss.total))
      throw NonFiniteError("joint training diverged at step " + std::to_string(step));
    adam_step(opt, params, grads);
  }
  return params;
}

/// Training log as CSV: iteration, train loss, val loss. Wall-clock timing
/// stays out of the file so repeated runs with one seed produce identical
/// bytes; LogRow.seconds remains available for live progress output.
inline void write_training_log(const std::string& path, std::span<const LogRow> log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,train_loss,val_loss\n";
  out.precision(17);
  for (const LogRow& row : log)
    out << row.iteration << ',' << row.train_loss << ',' << row.val_loss << '\n';
}

}  // namespace metapinn
