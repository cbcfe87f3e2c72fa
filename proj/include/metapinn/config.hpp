#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "metapinn/errors.hpp"
#include "metapinn/meta.hpp"
#include "metapinn/networks.hpp"
#include "metapinn/synthetic.hpp"
#include "metapinn/tasks.hpp"

namespace metapinn {

struct DatasetConfig {
  std::string kind = "synthetic";  // cmapss | synthetic | cache
  std::string subset = "FD001";
  std::string data_root;  // empty falls back to METAPINN_DATA_ROOT
  std::string cache_path;
  int max_train_units = 0;  // 0 keeps every unit
  int window = 15;
  int stride = 1;
  double ewma_rho = 0.1;
  double rul_cap = 125.0;
  bool use_cs = true;
  double support_fraction = 0.5;

  void validate() const {
    if (kind != "cmapss" && kind != "synthetic" && kind != "cache")
      throw ConfigError("dataset.kind must be cmapss, synthetic, or cache");
    if (subset != "FD001" && subset != "FD002" && subset != "FD003" && subset != "FD004")
      throw ConfigError("dataset.subset must be one of FD001..FD004");
    if (max_train_units < 0) throw ConfigError("dataset.max_train_units must be >= 0");
    if (window < 1) throw ConfigError("dataset.window must be >= 1");
    if (stride < 1) throw ConfigError("dataset.stride must be >= 1");
    if (!(ewma_rho > 0.0) || ewma_rho > 1.0)
      throw ConfigError("dataset.ewma_rho must lie in (0, 1]");
    if (!(rul_cap > 0.0)) throw ConfigError("dataset.rul_cap must be > 0");
    if (!(support_fraction > 0.0) || !(support_fraction < 1.0))
      throw ConfigError("dataset.support_fraction must lie in (0, 1)");
  }
};

/// Everything one run needs: data source, model shape, training schedule.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  DatasetConfig dataset;
  FleetSpec fleet;  // synthetic profile; window/cap/seed follow the run
  ModelConfig model;
  MetaConfig meta;

  void validate() const {
    dataset.validate();
    if (dataset.kind == "synthetic") fleet.validate();
    model.validate();
    meta.validate();
  }
};

namespace detail {

/// Rejects keys outside the known set, naming the full path of the first
/// offender so typos surface instead of silently keeping a default.
inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(path + " must be a JSON object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown config key '" + path + "." + item.key() + "'");
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& path, const char* key, T& field) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(field);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "." + std::string(key) + "' has the wrong type");
  }
}

inline void read_dataset(const nlohmann::json& j, DatasetConfig& d) {
  check_keys(j, "dataset",
             {"kind", "subset", "data_root", "cache_path", "max_train_units", "window", "stride",
              "ewma_rho", "rul_cap", "use_cs", "support_fraction"});
  read_field(j, "dataset", "kind", d.kind);
  read_field(j, "dataset", "subset", d.subset);
  read_field(j, "dataset", "data_root", d.data_root);
  read_field(j, "dataset", "cache_path", d.cache_path);
  read_field(j, "dataset", "max_train_units", d.max_train_units);
  read_field(j, "dataset", "window", d.window);
  read_field(j, "dataset", "stride", d.stride);
  read_field(j, "dataset", "ewma_rho", d.ewma_rho);
  read_field(j, "dataset", "rul_cap", d.rul_cap);
  read_field(j, "dataset", "use_cs", d.use_cs);
  read_field(j, "dataset", "support_fraction", d.support_fraction);
}

inline void read_fleet(const nlohmann::json& j, FleetSpec& f) {
  check_keys(j, "fleet", {"units", "min_life", "max_life", "features", "noise", "drift"});
  read_field(j, "fleet", "units", f.units);
  read_field(j, "fleet", "min_life", f.min_life);
  read_field(j, "fleet", "max_life", f.max_life);
  read_field(j, "fleet", "features", f.features);
  read_field(j, "fleet", "noise", f.noise);
  read_field(j, "fleet", "drift", f.drift);
}

inline void read_hsm(const nlohmann::json& j, HsmConfig& h) {
  check_keys(j, "hsm",
             {"time_steps", "input_features", "embed_dim", "key_dim", "num_blocks", "hidden_dim",
              "dropout_rate"});
  read_field(j, "hsm", "time_steps", h.time_steps);
  read_field(j, "hsm", "input_features", h.input_features);
  read_field(j, "hsm", "embed_dim", h.embed_dim);
  read_field(j, "hsm", "key_dim", h.key_dim);
  read_field(j, "hsm", "num_blocks", h.num_blocks);
  read_field(j, "hsm", "hidden_dim", h.hidden_dim);
  read_field(j, "hsm", "dropout_rate", h.dropout_rate);
}

inline void read_rul(const nlohmann::json& j, RulPredictorConfig& r) {
  check_keys(j, "rul", {"hidden", "terms"});
  read_field(j, "rul", "hidden", r.hidden);
  read_field(j, "rul", "terms", r.terms);
}

inline void read_pgr(const nlohmann::json& j, PgrConfig& p) {
  check_keys(j, "pgr", {"k_pde", "hidden"});
  read_field(j, "pgr", "k_pde", p.k_pde);
  read_field(j, "pgr", "hidden", p.hidden);
}

inline void read_meta(const nlohmann::json& j, MetaConfig& m) {
  check_keys(j, "meta",
             {"inner_steps", "inner_batch", "meta_batch", "outer_rate", "epochs", "val_fraction",
              "shots", "inner_alpha", "threads"});
  read_field(j, "meta", "inner_steps", m.inner_steps);
  read_field(j, "meta", "inner_batch", m.inner_batch);
  read_field(j, "meta", "meta_batch", m.meta_batch);
  read_field(j, "meta", "outer_rate", m.outer_rate);
  read_field(j, "meta", "epochs", m.epochs);
  read_field(j, "meta", "val_fraction", m.val_fraction);
  read_field(j, "meta", "shots", m.shots);
  read_field(j, "meta", "inner_alpha", m.inner_alpha);
  read_field(j, "meta", "threads", m.threads);
}

inline void read_weights(const nlohmann::json& j, LossWeights& w) {
  check_keys(j, "weights", {"data", "physics"});
  read_field(j, "weights", "data", w.data);
  read_field(j, "weights", "physics", w.physics);
}

}  // namespace detail

/// Applies a parsed JSON document on top of `base`. Absent keys keep their
/// current values, so applying a full dump of a config reproduces it.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = RunConfig{}) {
  detail::check_keys(
      j, "config", {"seed", "out_dir", "dataset", "fleet", "hsm", "rul", "pgr", "meta", "weights"});
  detail::read_field(j, "config", "seed", base.seed);
  detail::read_field(j, "config", "out_dir", base.out_dir);
  if (j.contains("dataset")) detail::read_dataset(j.at("dataset"), base.dataset);
  if (j.contains("fleet")) detail::read_fleet(j.at("fleet"), base.fleet);
  if (j.contains("hsm")) detail::read_hsm(j.at("hsm"), base.model.hsm);
  if (j.contains("rul")) detail::read_rul(j.at("rul"), base.model.rul);
  if (j.contains("pgr")) detail::read_pgr(j.at("pgr"), base.model.pgr);
  if (j.contains("meta")) detail::read_meta(j.at("meta"), base.meta);
  if (j.contains("weights")) detail::read_weights(j.at("weights"), base.meta.weights);

  // keep the synthetic profile in step with the run-level knobs
  base.fleet.window = base.dataset.window;
  base.fleet.stride = base.dataset.stride;
  base.fleet.rul_cap = base.dataset.rul_cap;
  base.fleet.seed = base.seed;
  return base;
}

/// Full dump of a config; feeding it back through config_from_json yields
/// the same config.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"subset", c.dataset.subset},
                  {"data_root", c.dataset.data_root},
                  {"cache_path", c.dataset.cache_path},
                  {"max_train_units", c.dataset.max_train_units},
                  {"window", c.dataset.window},
                  {"stride", c.dataset.stride},
                  {"ewma_rho", c.dataset.ewma_rho},
                  {"rul_cap", c.dataset.rul_cap},
                  {"use_cs", c.dataset.use_cs},
                  {"support_fraction", c.dataset.support_fraction}};
  j["fleet"] = {{"units", c.fleet.units},       {"min_life", c.fleet.min_life},
                {"max_life", c.fleet.max_life}, {"features", c.fleet.features},
                {"noise", c.fleet.noise},       {"drift", c.fleet.drift}};
  j["hsm"] = {{"time_steps", c.model.hsm.time_steps},
              {"input_features", c.model.hsm.input_features},
              {"embed_dim", c.model.hsm.embed_dim},
              {"key_dim", c.model.hsm.key_dim},
              {"num_blocks", c.model.hsm.num_blocks},
              {"hidden_dim", c.model.hsm.hidden_dim},
              {"dropout_rate", c.model.hsm.dropout_rate}};
  j["rul"] = {{"hidden", c.model.rul.hidden}, {"terms", c.model.rul.terms}};
  j["pgr"] = {{"k_pde", c.model.pgr.k_pde}, {"hidden", c.model.pgr.hidden}};
  j["meta"] = {{"inner_steps", c.meta.inner_steps},
               {"inner_batch", c.meta.inner_batch},
               {"meta_batch", c.meta.meta_batch},
               {"outer_rate", c.meta.outer_rate},
               {"epochs", c.meta.epochs},
               {"val_fraction", c.meta.val_fraction},
               {"shots", c.meta.shots},
               {"inner_alpha", c.meta.inner_alpha},
               {"threads", c.meta.threads}};
  j["weights"] = {{"data", c.meta.weights.data}, {"physics", c.meta.weights.physics}};
  return j;
}

/// Reads and validates a config file over the built-in defaults.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  RunConfig cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

/// Data directory resolution: explicit config value, else the
/// METAPINN_DATA_ROOT environment variable.
inline std::string effective_data_root(const RunConfig& cfg) {
  if (!cfg.dataset.data_root.empty()) return cfg.dataset.data_root;
  const char* env = std::getenv("METAPINN_DATA_ROOT");
  if (env != nullptr && env[0] != '\0') return env;
  throw ConfigError("no data root: set dataset.data_root or METAPINN_DATA_ROOT");
}

}  // namespace metapinn
