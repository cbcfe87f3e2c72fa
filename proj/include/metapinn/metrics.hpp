#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metapinn/errors.hpp"

namespace metapinn {

namespace detail {

inline void check_pairs(std::span<const double> truth, std::span<const double> pred) {
  if (truth.empty()) throw ShapeError("metrics need at least one pair");
  if (truth.size() != pred.size())
    throw ShapeError("metrics: " + std::to_string(truth.size()) + " targets vs " +
                     std::to_string(pred.size()) + " predictions");
}

}  // namespace detail

inline double rmse(std::span<const double> truth, std::span<const double> pred) {
  detail::check_pairs(truth, pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

inline double mae(std::span<const double> truth, std::span<const double> pred) {
  detail::check_pairs(truth, pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(truth.size());
}

/// Coefficient of determination. Undefined when every target is identical.
inline double r2(std::span<const double> truth, std::span<const double> pred) {
  detail::check_pairs(truth, pred);
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot <= 0.0) throw Error("r2 is undefined for constant targets");
  return 1.0 - ss_res / ss_tot;
}

/// Asymmetric prognostic score: late predictions (pred >= true) cost
/// exp(d / 10) - 1, early ones exp(-d / 13) - 1 with d = pred - true, summed
/// over all pairs. An exact prediction contributes 0.
inline double nasa_score(std::span<const double> truth, std::span<const double> pred) {
  detail::check_pairs(truth, pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d < 0.0 ? std::exp(-d / 13.0) - 1.0 : std::exp(d / 10.0) - 1.0;
  }
  return acc;
}

struct MetricsReport {
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  double score = 0.0;
  int n = 0;
  std::vector<std::pair<double, double>> pairs;  // (true, predicted)
};

inline MetricsReport compute_metrics(std::span<const double> truth, std::span<const double> pred) {
  MetricsReport report;
  report.rmse = rmse(truth, pred);
  report.mae = mae(truth, pred);
  report.r2 = r2(truth, pred);
  report.score = nasa_score(truth, pred);
  report.n = static_cast<int>(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) report.pairs.emplace_back(truth[i], pred[i]);
  return report;
}

enum class ReportFormat { kCsv, kJson };

inline ReportFormat report_format_from_string(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + name + "' (expected csv or json)");
}

/// Writes per-pair predictions plus the summary metrics. Numbers carry 17
/// significant digits so a read-back reproduces them exactly.
inline void emit_report(const MetricsReport& report, const std::string& path, ReportFormat format) {
  if (report.pairs.empty()) throw Error("refusing to write an empty report");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  if (format == ReportFormat::kCsv) {
    out << std::setprecision(17);
    out << "true,predicted\n";
    for (const auto& [t, p] : report.pairs) out << t << ',' << p << '\n';
    out << "metric,value\n";
    out << "rmse," << report.rmse << '\n';
    out << "mae," << report.mae << '\n';
    out << "r2," << report.r2 << '\n';
    out << "score," << report.score << '\n';
    out << "n," << report.n << '\n';
  } else {
    nlohmann::json j;
    j["metrics"] = {{"rmse", report.rmse},
                    {"mae", report.mae},
                    {"r2", report.r2},
                    {"score", report.score},
                    {"n", report.n}};
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [t, p] : report.pairs)
      pairs.push_back({{"true", t}, {"predicted", p}});
    j["pairs"] = std::move(pairs);
    out << j.dump(2) << '\n';
  }
  if (!out) throw IoError("failed while writing " + path);
}

inline MetricsReport read_report(const std::string& path, ReportFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  MetricsReport report;
  if (format == ReportFormat::kCsv) {
    std::string line;
    if (!std::getline(in, line) || line != "true,predicted")
      throw ParseError(path + ": missing 'true,predicted' header");
    bool in_summary = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line == "metric,value") {
        in_summary = true;
        continue;
      }
      const std::size_t comma = line.find(',');
      if (comma == std::string::npos) throw ParseError(path + ": malformed row '" + line + "'");
      const std::string a = line.substr(0, comma);
      const std::string b = line.substr(comma + 1);
      if (!in_summary) {
        report.pairs.emplace_back(std::stod(a), std::stod(b));
      } else if (a == "rmse") {
        report.rmse = std::stod(b);
      } else if (a == "mae") {
        report.mae = std::stod(b);
      } else if (a == "r2") {
        report.r2 = std::stod(b);
      } else if (a == "score") {
        report.score = std::stod(b);
      } else if (a == "n") {
        report.n = std::stoi(b);
      } else {
        throw ParseError(path + ": unknown summary row '" + a + "'");
      }
    }
  } else {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    report.rmse = j.at("metrics").at("rmse").get<double>();
    report.mae = j.at("metrics").at("mae").get<double>();
    report.r2 = j.at("metrics").at("r2").get<double>();
    report.score = j.at("metrics").at("score").get<double>();
    report.n = j.at("metrics").at("n").get<int>();
    for (const auto& pair : j.at("pairs"))
      report.pairs.emplace_back(pair.at("true").get<double>(), pair.at("predicted").get<double>());
  }
  return report;
}

}  // namespace metapinn
