#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metapinn/cmapss.hpp"
#include "metapinn/errors.hpp"
#include "metapinn/sample.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

namespace detail {

inline constexpr int kCacheVersion = 1;

inline void write_window_csv(const std::string& path,
                             const std::vector<std::vector<SampleWindow>>& units,
                             const std::vector<int>& unit_ids, int window, int features) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17);
  out << "unit,run_time,rul";
  for (int r = 0; r < window; ++r)
    for (int f = 0; f < features; ++f) out << ",x" << r << '_' << f;
  out << '\n';
  for (std::size_t u = 0; u < units.size(); ++u) {
    for (const SampleWindow& w : units[u]) {
      if (w.features.shape != Shape{window, features})
        throw ShapeError("window shape " + shape_str(w.features.shape) +
                         " does not match the cache layout");
      out << unit_ids[u] << ',' << w.run_time << ',' << w.rul;
      for (double v : w.features.data) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw IoError("failed while writing " + path);
}

inline void read_window_csv(const std::string& path, int window, int features,
                            std::vector<std::vector<SampleWindow>>& units,
                            std::vector<int>& unit_ids) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("unit,run_time,rul", 0) != 0)
    throw ParseError(path + ": missing window header");
  const std::size_t values = static_cast<std::size_t>(window) * static_cast<std::size_t>(features);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> fields;
    while (std::getline(row, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (fields.size() != values + 3)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(values + 3) + " cells, got " + std::to_string(fields.size()));
    const int unit = static_cast<int>(fields[0]);
    if (unit_ids.empty() || unit_ids.back() != unit) {
      unit_ids.push_back(unit);
      units.emplace_back();
    }
    SampleWindow w;
    w.run_time = fields[1];
    w.rul = fields[2];
    w.features = Tensor({window, features},
                        std::vector<double>(fields.begin() + 3, fields.end()));
    units.back().push_back(std::move(w));
  }
}

inline nlohmann::json conditions_to_json(const ConditionModel& m) {
  nlohmann::json j;
  j["centroids"] = m.centroids;
  j["mean"] = m.mean;
  j["stddev"] = m.stddev;
  nlohmann::json constant = nlohmann::json::array();
  for (const std::vector<bool>& row : m.constant) constant.push_back(std::vector<int>(row.begin(), row.end()));
  j["constant"] = std::move(constant);
  j["warn_distance"] = m.warn_distance;
  return j;
}

inline ConditionModel conditions_from_json(const nlohmann::json& j) {
  ConditionModel m;
  m.centroids = j.at("centroids").get<std::vector<std::array<double, 3>>>();
  m.mean = j.at("mean").get<std::vector<std::vector<double>>>();
  m.stddev = j.at("stddev").get<std::vector<std::vector<double>>>();
  for (const nlohmann::json& row : j.at("constant")) {
    std::vector<int> ints = row.get<std::vector<int>>();
    m.constant.emplace_back(ints.begin(), ints.end());
  }
  m.warn_distance = j.at("warn_distance").get<double>();
  return m;
}

}  // namespace detail

/// Reads a windows CSV (the cache layout) as one flat sample list, for
/// adaptation-time support sets.
inline std::vector<SampleWindow> read_support_windows(const std::string& path, int window,
                                                      int features) {
  std::vector<std::vector<SampleWindow>> units;
  std::vector<int> ids;
  detail::read_window_csv(path, window, features, units, ids);
  std::vector<SampleWindow> flat;
  for (std::vector<SampleWindow>& u : units)
    for (SampleWindow& w : u) flat.push_back(std::move(w));
  if (flat.empty()) throw Error("support file " + path + " holds no windows");
  return flat;
}

/// Writes a processed dataset as a directory: a JSON manifest (window
/// geometry, run-time scale, normalization model, provenance) plus one CSV
/// of flattened windows per split and the test truth list. Values carry 17
/// significant digits, so a load reproduces them exactly.
inline void save_cache(const std::string& dir, const ProcessedCmapss& data,
                       const std::string& subset, int window, int features, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  detail::write_window_csv(dir + "/windows_train.csv", data.train_units, data.train_unit_ids,
                           window, features);
  detail::write_window_csv(dir + "/windows_test.csv", data.test_units, data.test_unit_ids, window,
                           features);
  {
    std::ofstream out(dir + "/test_rul.csv");
    if (!out) throw IoError("cannot write " + dir + "/test_rul.csv");
    out << std::setprecision(17);
    out << "unit,rul\n";
    for (std::size_t i = 0; i < data.test_rul.size(); ++i)
      out << data.test_unit_ids[i] << ',' << data.test_rul[i] << '\n';
  }
  nlohmann::json manifest;
  manifest["version"] = detail::kCacheVersion;
  manifest["subset"] = subset;
  manifest["window"] = window;
  manifest["features"] = features;
  manifest["time_scale"] = data.time_scale;
  manifest["seed"] = seed;
  manifest["train_unit_ids"] = data.train_unit_ids;
  manifest["test_unit_ids"] = data.test_unit_ids;
  manifest["conditions"] = detail::conditions_to_json(data.conditions);
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("cannot write " + dir + "/manifest.json");
  out << manifest.dump(2) << '\n';
}

inline ProcessedCmapss load_cache(const std::string& dir, int* window_out = nullptr,
                                  int* features_out = nullptr) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  const int version = manifest.at("version").get<int>();
  if (version != detail::kCacheVersion)
    throw CapabilityError(dir + ": cache version " + std::to_string(version) +
                          " is not supported");
  const int window = manifest.at("window").get<int>();
  const int features = manifest.at("features").get<int>();
  if (window_out != nullptr) *window_out = window;
  if (features_out != nullptr) *features_out = features;

  ProcessedCmapss data;
  data.time_scale = manifest.at("time_scale").get<double>();
  data.conditions = detail::conditions_from_json(manifest.at("conditions"));

  // The CSVs only hold units that produced windows; the manifest id lists
  // restore empty entries for units that were too short.
  auto read_split = [&](const char* file, const char* key,
                        std::vector<std::vector<SampleWindow>>& units, std::vector<int>& ids) {
    std::vector<std::vector<SampleWindow>> present;
    std::vector<int> present_ids;
    detail::read_window_csv(dir + "/" + file, window, features, present, present_ids);
    ids = manifest.at(key).get<std::vector<int>>();
    units.assign(ids.size(), {});
    for (std::size_t i = 0; i < present_ids.size(); ++i) {
      bool placed = false;
      for (std::size_t u = 0; u < ids.size(); ++u)
        if (ids[u] == present_ids[i]) {
          units[u] = std::move(present[i]);
          placed = true;
          break;
        }
      if (!placed)
        throw ParseError(dir + "/" + file + ": unit " + std::to_string(present_ids[i]) +
                         " is not in the manifest");
    }
  };
  read_split("windows_train.csv", "train_unit_ids", data.train_units, data.train_unit_ids);
  read_split("windows_test.csv", "test_unit_ids", data.test_units, data.test_unit_ids);
  {
    std::ifstream rul(dir + "/test_rul.csv");
    if (!rul) throw IoError("cannot open " + dir + "/test_rul.csv");
    std::string line;
    std::getline(rul, line);
    while (std::getline(rul, line)) {
      if (line.empty()) continue;
      const std::size_t comma = line.find(',');
      if (comma == std::string::npos)
        throw ParseError(dir + "/test_rul.csv: malformed row '" + line + "'");
      data.test_rul.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  if (data.test_rul.size() != data.test_units.size())
    throw ParseError(dir + ": " + std::to_string(data.test_rul.size()) + " truth rows for " +
                     std::to_string(data.test_units.size()) + " test units");
  return data;
}

}  // namespace metapinn
