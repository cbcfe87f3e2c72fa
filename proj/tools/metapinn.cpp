#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metapinn/cache.hpp"
#include "metapinn/checkpoint.hpp"
#include "metapinn/config.hpp"
#include "metapinn/driver.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/evaluate.hpp"
#include "metapinn/meta.hpp"
#include "metapinn/metrics.hpp"
#include "metapinn/synthetic.hpp"

namespace {

using namespace metapinn;

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::string subset;
  std::string checkpoint_path;
  std::string support_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int shots = -1;  // -1 keeps the config value
};

/// Config resolution order: built-in defaults, then the config file, then
/// the command-line overrides.
RunConfig resolve_config(const Options& opt, RunConfig base = RunConfig{}) {
  RunConfig cfg = base;
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw IoError("cannot open config " + opt.config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(opt.config_path + ": " + e.what());
    }
    cfg = config_from_json(j, cfg);
  }
  if (opt.seed_given) {
    cfg.seed = opt.seed;
    cfg.fleet.seed = opt.seed;
  }
  if (!opt.subset.empty()) cfg.dataset.subset = opt.subset;
  if (opt.shots >= 0) cfg.meta.shots = opt.shots;
  cfg.out_dir = opt.out_dir;
  cfg.validate();
  return cfg;
}

void write_reports(const MetricsReport& report, const std::string& out_dir) {
  emit_report(report, out_dir + "/metrics.csv", ReportFormat::kCsv);
  emit_report(report, out_dir + "/metrics.json", ReportFormat::kJson);
}

int cmd_synth(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  std::filesystem::create_directories(cfg.out_dir);
  CmapssSimSpec spec;
  spec.subset = cfg.dataset.subset;
  spec.seed = cfg.seed;
  if (cfg.dataset.max_train_units > 0) {
    spec.train_units = cfg.dataset.max_train_units;
    spec.test_units = std::max(2, cfg.dataset.max_train_units / 2);
  }
  simulate_cmapss_files(cfg.out_dir, spec);
  std::cout << "wrote simulated " << spec.subset << " trajectory files to " << cfg.out_dir << '\n';
  return 0;
}

int cmd_preprocess(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  if (cfg.dataset.kind != "cmapss")
    throw ConfigError("preprocess expects dataset.kind cmapss, got '" + cfg.dataset.kind + "'");
  const std::string root = effective_data_root(cfg);
  const CmapssData raw = load_cmapss(root, cfg.dataset.subset);
  CmapssPipelineConfig pcfg;
  pcfg.window = cfg.dataset.window;
  pcfg.stride = cfg.dataset.stride;
  pcfg.ewma_rho = cfg.dataset.ewma_rho;
  pcfg.rul_cap = cfg.dataset.rul_cap;
  pcfg.use_cs = cfg.dataset.use_cs;
  pcfg.max_train_units = cfg.dataset.max_train_units;
  std::vector<std::string> warnings;
  const ProcessedCmapss processed = process_cmapss(raw, pcfg, &warnings);
  std::filesystem::create_directories(cfg.out_dir);
  save_cache(cfg.out_dir, processed, cfg.dataset.subset, pcfg.window,
             static_cast<int>(informative_sensor_ids().size()), cfg.seed);
  std::size_t windows = 0;
  for (const auto& u : processed.train_units) windows += u.size();
  std::cout << "cached " << cfg.dataset.subset << ": " << processed.train_units.size()
            << " train units, " << windows << " train windows, "
            << processed.conditions.condition_count() << " operating regimes, "
            << warnings.size() << " warnings -> " << cfg.out_dir << '\n';
  return 0;
}

int cmd_meta_train(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  const DatasetBundle bundle = load_dataset(cfg);
  const MetaResult result = meta_train(cfg.model, bundle.tasks, cfg.meta, cfg.seed);
  std::filesystem::create_directories(cfg.out_dir);
  write_training_log(cfg.out_dir + "/training_log.csv", result.log);

  // the output directory is invocation state, not configuration; keep it out
  // of the snapshot so identical runs produce identical bytes
  RunConfig snap = cfg;
  snap.out_dir = ".";
  Checkpoint ckpt;
  ckpt.config = config_to_json(snap);
  ckpt.seed = cfg.seed;
  ckpt.iteration = result.best_iteration;
  ckpt.params = result.best;
  save_checkpoint(cfg.out_dir + "/checkpoint.ckpt", ckpt);
  std::cout << "meta-trained on " << bundle.tasks.size() << " tasks; best validation loss "
            << result.best_val << " at iteration " << result.best_iteration << " -> "
            << cfg.out_dir << '\n';
  return 0;
}

int cmd_adapt(const Options& opt) {
  if (opt.checkpoint_path.empty()) throw ConfigError("adapt needs --checkpoint");
  if (opt.support_path.empty()) throw ConfigError("adapt needs --support");
  Checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
  const RunConfig cfg = resolve_config(opt, config_from_json(ckpt.config));

  std::vector<SampleWindow> support = read_support_windows(
      opt.support_path, cfg.model.hsm.time_steps, cfg.model.hsm.input_features);
  if (static_cast<int>(support.size()) > cfg.meta.shots)
    support.resize(static_cast<std::size_t>(cfg.meta.shots));

  const ParameterSet adapted =
      few_shot_adapt(cfg.model, ckpt.params, support, cfg.meta, Rng(cfg.seed));
  std::filesystem::create_directories(cfg.out_dir);
  RunConfig snap = cfg;
  snap.out_dir = ".";
  Checkpoint out = ckpt;
  out.config = config_to_json(snap);
  out.seed = cfg.seed;
  out.params = adapted;
  save_checkpoint(cfg.out_dir + "/adapted.ckpt", out);
  std::cout << "adapted on " << support.size() << " support windows -> " << cfg.out_dir
            << "/adapted.ckpt\n";
  return 0;
}

int cmd_evaluate(const Options& opt) {
  if (opt.checkpoint_path.empty()) throw ConfigError("evaluate needs --checkpoint");
  Checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
  const RunConfig cfg = resolve_config(opt, config_from_json(ckpt.config));
  const DatasetBundle bundle = load_dataset(cfg);

  MetricsReport report;
  if (bundle.has_processed) {
    const LastPointEval eval = evaluate_last_point(cfg.model, ckpt.params, bundle.processed,
                                                   cfg.meta, cfg.dataset.rul_cap, Rng(cfg.seed));
    report = eval.report;
    if (eval.skipped_units > 0)
      std::cout << eval.skipped_units << " test units were too short for a window\n";
  } else {
    report = evaluate_few_shot(cfg.model, ckpt.params, bundle.tasks, cfg.meta,
                               cfg.dataset.rul_cap, Rng(cfg.seed));
  }
  std::filesystem::create_directories(cfg.out_dir);
  write_reports(report, cfg.out_dir);
  std::cout << "rmse=" << report.rmse << " mae=" << report.mae << " r2=" << report.r2
            << " score=" << report.score << " n=" << report.n << '\n';
  return 0;
}

int cmd_ablate(const Options& opt) {
  const RunConfig cfg = resolve_config(opt);
  const DatasetBundle bundle = load_dataset(cfg);
  std::vector<MetaTask> train;
  std::vector<MetaTask> held_out;
  split_tasks(bundle.tasks, 0.7, cfg.seed, train, held_out);

  AblationConfig acfg;
  acfg.model = cfg.model;
  acfg.meta = cfg.meta;
  acfg.physics_weight = cfg.meta.weights.physics > 0.0 ? cfg.meta.weights.physics : 1.0;
  acfg.rul_cap = cfg.dataset.rul_cap;
  acfg.seed = cfg.seed;
  const std::vector<AblationRow> rows = run_ablation(acfg, train, held_out);
  std::filesystem::create_directories(cfg.out_dir);
  write_ablation_csv(rows, cfg.out_dir + "/ablation.csv");
  for (const AblationRow& row : rows)
    std::cout << row.name << ": rmse=" << row.report.rmse << " score=" << row.report.score << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot remaining-useful-life prediction with a learned governing equation"};
  app.require_subcommand(1);

  Options opt;
  auto add_common = [&](CLI::App* sub, bool with_data_flags) {
    sub->add_option("--config", opt.config_path, "JSON config file");
    sub->add_option("--seed", opt.seed, "seed override")->each([&](const std::string&) {
      opt.seed_given = true;
    });
    sub->add_option("--out", opt.out_dir, "output directory (default .)");
    if (with_data_flags) sub->add_option("--subset", opt.subset, "dataset subset, e.g. FD001");
  };

  CLI::App* synth = app.add_subcommand("synth", "write simulated benchmark trajectory files");
  add_common(synth, true);
  CLI::App* preprocess =
      app.add_subcommand("preprocess", "normalize, smooth, and window raw trajectories");
  add_common(preprocess, true);
  CLI::App* meta_train =
      app.add_subcommand("meta-train", "episodic training of the shared initialization");
  add_common(meta_train, true);
  CLI::App* adapt = app.add_subcommand("adapt", "few-shot adaptation from a checkpoint");
  add_common(adapt, false);
  adapt->add_option("--checkpoint", opt.checkpoint_path, "trained checkpoint");
  adapt->add_option("--support", opt.support_path, "windows CSV with the support samples");
  adapt->add_option("--shots", opt.shots, "support samples to use (0 keeps the checkpoint)");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the configured data");
  add_common(evaluate, true);
  evaluate->add_option("--checkpoint", opt.checkpoint_path, "checkpoint to score");
  evaluate->add_option("--shots", opt.shots, "support samples per task for few-shot scoring");
  CLI::App* ablate =
      app.add_subcommand("ablate", "four-variant factor study over physics and episodic training");
  add_common(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::cout << app.help();
    return e.get_exit_code() != 0 ? e.get_exit_code() : 1;
  }

  try {
    if (app.got_subcommand(synth)) return cmd_synth(opt);
    if (app.got_subcommand(preprocess)) return cmd_preprocess(opt);
    if (app.got_subcommand(meta_train)) return cmd_meta_train(opt);
    if (app.got_subcommand(adapt)) return cmd_adapt(opt);
    if (app.got_subcommand(evaluate)) return cmd_evaluate(opt);
    if (app.got_subcommand(ablate)) return cmd_ablate(opt);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
