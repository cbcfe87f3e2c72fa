#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "metapinn/errors.hpp"
#include "metapinn/metrics.hpp"
#include "metapinn/rng.hpp"

using namespace metapinn;
using Catch::Approx;

namespace {

// Literal re-statements of each metric, kept structurally different from
// the library versions: they materialize intermediate vectors and sum in a
// separate pass.

double oracle_rmse(const std::vector<double>& t, const std::vector<double>& p) {
  std::vector<double> sq;
  for (std::size_t i = 0; i < t.size(); ++i) sq.push_back((p[i] - t[i]) * (p[i] - t[i]));
  double s = 0.0;
  for (double v : sq) s += v;
  return std::sqrt(s / static_cast<double>(sq.size()));
}

double oracle_mae(const std::vector<double>& t, const std::vector<double>& p) {
  std::vector<double> ab;
  for (std::size_t i = 0; i < t.size(); ++i) ab.push_back(std::abs(p[i] - t[i]));
  double s = 0.0;
  for (double v : ab) s += v;
  return s / static_cast<double>(ab.size());
}

double oracle_r2(const std::vector<double>& t, const std::vector<double>& p) {
  double mean = 0.0;
  for (double v : t) mean += v;
  mean /= static_cast<double>(t.size());
  double res = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) res += (t[i] - p[i]) * (t[i] - p[i]);
  double tot = 0.0;
  for (double v : t) tot += (v - mean) * (v - mean);
  return 1.0 - res / tot;
}

double oracle_score(const std::vector<double>& t, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = p[i] - t[i];
    if (d < 0.0) {
      s += std::exp(-d / 13.0) - 1.0;
    } else {
      s += std::exp(d / 10.0) - 1.0;
    }
  }
  return s;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("metrics agree with brute-force oracles on random vectors", "[metrics]") {
  Rng rng(20240822);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 32));
    std::vector<double> t(static_cast<std::size_t>(n));
    std::vector<double> p(static_cast<std::size_t>(n));
    for (double& v : t) v = rng.uniform(0.0, 200.0);
    for (double& v : p) v = rng.uniform(-20.0, 220.0);
    REQUIRE(close(rmse(t, p), oracle_rmse(t, p), 1e-12));
    REQUIRE(close(mae(t, p), oracle_mae(t, p), 1e-12));
    REQUIRE(close(nasa_score(t, p), oracle_score(t, p), 1e-12));
    // r2 needs non-constant targets; n = 1 is always constant
    if (n > 1) REQUIRE(close(r2(t, p), oracle_r2(t, p), 1e-12));
  }
}

TEST_CASE("prognostic score penalizes late predictions more than early ones", "[metrics]") {
  const std::vector<double> truth = {100.0};
  const std::vector<double> early = {90.0};
  const std::vector<double> late = {110.0};
  const double early_cost = nasa_score(truth, early);
  const double late_cost = nasa_score(truth, late);
  CHECK(early_cost == Approx(std::exp(10.0 / 13.0) - 1.0).margin(1e-9));
  CHECK(late_cost == Approx(std::exp(1.0) - 1.0).margin(1e-9));
  CHECK(late_cost > early_cost);
}

TEST_CASE("exact predictions score zero", "[metrics]") {
  const std::vector<double> truth = {42.0, 7.0, 125.0};
  CHECK(nasa_score(truth, truth) == 0.0);
  CHECK(rmse(truth, truth) == 0.0);
  CHECK(mae(truth, truth) == 0.0);
  CHECK(r2(truth, truth) == 1.0);
}

TEST_CASE("metric preconditions are enforced", "[metrics]") {
  const std::vector<double> empty;
  const std::vector<double> one = {1.0};
  const std::vector<double> two = {1.0, 2.0};
  const std::vector<double> constant = {3.0, 3.0};
  CHECK_THROWS_AS(rmse(empty, empty), ShapeError);
  CHECK_THROWS_AS(mae(one, two), ShapeError);
  CHECK_THROWS_AS(r2(constant, two), Error);
  CHECK_THROWS_AS(report_format_from_string("xml"), ConfigError);
}

TEST_CASE("reports round-trip through csv and json", "[metrics]") {
  Rng rng(7);
  std::vector<double> t(40);
  std::vector<double> p(40);
  for (double& v : t) v = rng.uniform(0.0, 125.0);
  for (double& v : p) v = rng.uniform(0.0, 125.0);
  const MetricsReport report = compute_metrics(t, p);

  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "metapinn_metrics";
  std::filesystem::create_directories(dir);
  for (ReportFormat fmt : {ReportFormat::kCsv, ReportFormat::kJson}) {
    const std::string path =
        (dir / (fmt == ReportFormat::kCsv ? "report.csv" : "report.json")).string();
    emit_report(report, path, fmt);
    const MetricsReport back = read_report(path, fmt);
    REQUIRE(back.pairs.size() == report.pairs.size());
    for (std::size_t i = 0; i < report.pairs.size(); ++i) {
      CHECK(back.pairs[i].first == report.pairs[i].first);
      CHECK(back.pairs[i].second == report.pairs[i].second);
    }
    CHECK(back.rmse == report.rmse);
    CHECK(back.mae == report.mae);
    CHECK(back.r2 == report.r2);
    CHECK(back.score == report.score);
    CHECK(back.n == report.n);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty reports are refused", "[metrics]") {
  MetricsReport report;
  CHECK_THROWS_AS(emit_report(report, "unused.csv", ReportFormat::kCsv), Error);
}
