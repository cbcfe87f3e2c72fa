#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "metapinn/errors.hpp"

namespace metapinn {

namespace detail {

/// Iterative radix-2 Cooley-Tukey transform; inputs are zero-padded to the
/// next power of two.
inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang);
    const double wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0;
      double ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k;
        const std::size_t b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

}  // namespace detail

/// One-sided power spectrum of a real signal, zero-padded to a power of two.
/// Returns N/2 + 1 bins; bin k sits at frequency k * sample_rate / N.
inline std::vector<double> power_spectrum(std::span<const double> x, std::size_t* padded_n = nullptr) {
  if (x.empty()) throw ShapeError("power_spectrum needs a non-empty signal");
  std::size_t n = 1;
  while (n < x.size()) n <<= 1;
  std::vector<double> re(n, 0.0);
  std::vector<double> im(n, 0.0);
  std::copy(x.begin(), x.end(), re.begin());
  detail::fft_radix2(re, im);
  std::vector<double> power(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k)
    power[k] = (re[k] * re[k] + im[k] * im[k]) / static_cast<double>(n);
  if (padded_n != nullptr) *padded_n = n;
  return power;
}

inline constexpr int kOctaveBands = 6;

/// Names of the per-segment feature vector, in output order.
inline const std::vector<std::string>& vibration_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {"mean",     "std",        "rms",
                                  "max",      "min",        "peak_to_peak",
                                  "kurtosis", "skewness",   "crest",
                                  "shape",    "clearance",  "impulse",
                                  "peak_freq", "total_power", "spectral_centroid",
                                  "spectral_kurtosis", "spectral_skewness"};
    for (int b = 0; b < kOctaveBands; ++b) n.push_back("band_power_" + std::to_string(b));
    return n;
  }();
  return names;
}

/// Time-domain statistics, spectral descriptors, and octave band energies
/// for one raw segment.
inline std::vector<double> segment_features(std::span<const double> x, double sample_rate) {
  if (x.size() < 2) throw ShapeError("segment_features needs at least 2 samples");
  if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be > 0");
  const double n = static_cast<double>(x.size());

  double sum = 0.0;
  double max_v = x[0];
  double min_v = x[0];
  double abs_sum = 0.0;
  double sqrt_abs_sum = 0.0;
  double sq_sum = 0.0;
  for (double v : x) {
    sum += v;
    max_v = std::max(max_v, v);
    min_v = std::min(min_v, v);
    abs_sum += std::abs(v);
    sqrt_abs_sum += std::sqrt(std::abs(v));
    sq_sum += v * v;
  }
  const double mean = sum / n;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double stddev = std::sqrt(m2);
  const double rms = std::sqrt(sq_sum / n);
  const double abs_mean = abs_sum / n;
  const double sqrt_abs_mean = sqrt_abs_sum / n;
  const double peak = std::max(std::abs(max_v), std::abs(min_v));
  const double kurt = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
  const double skew = m2 > 0.0 ? m3 / (m2 * stddev) : 0.0;
  const double crest = rms > 0.0 ? peak / rms : 0.0;
  const double shape = abs_mean > 0.0 ? rms / abs_mean : 0.0;
  const double clearance = sqrt_abs_mean > 0.0 ? peak / (sqrt_abs_mean * sqrt_abs_mean) : 0.0;
  const double impulse = abs_mean > 0.0 ? peak / abs_mean : 0.0;

  std::size_t padded = 0;
  const std::vector<double> power = power_spectrum(x, &padded);
  const double bin_hz = sample_rate / static_cast<double>(padded);
  double total_power = 0.0;
  double weighted = 0.0;
  double peak_power = -1.0;
  double peak_freq = 0.0;
  for (std::size_t k = 1; k < power.size(); ++k) {  // skip the DC bin
    const double f = static_cast<double>(k) * bin_hz;
    total_power += power[k];
    weighted += f * power[k];
    if (power[k] > peak_power) {
      peak_power = power[k];
      peak_freq = f;
    }
  }
  const double centroid = total_power > 0.0 ? weighted / total_power : 0.0;
  double s2 = 0.0;
  double s3 = 0.0;
  double s4 = 0.0;
  if (total_power > 0.0) {
    for (std::size_t k = 1; k < power.size(); ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = power[k] / total_power;
      const double d = f - centroid;
      s2 += w * d * d;
      s3 += w * d * d * d;
      s4 += w * d * d * d * d;
    }
  }
  const double spec_kurt = s2 > 0.0 ? s4 / (s2 * s2) : 0.0;
  const double spec_skew = s2 > 0.0 ? s3 / (s2 * std::sqrt(s2)) : 0.0;

  std::vector<double> out = {mean,  stddev, rms,       max_v,     min_v,    max_v - min_v,
                             kurt,  skew,   crest,     shape,     clearance, impulse,
                             peak_freq, total_power, centroid, spec_kurt, spec_skew};

  // Octave bands from the Nyquist frequency downward; lowest band absorbs
  // everything below its upper edge.
  const double nyquist = sample_rate / 2.0;
  std::array<double, kOctaveBands> bands{};
  for (std::size_t k = 1; k < power.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    int b = kOctaveBands - 1;
    double upper = nyquist;
    while (b > 0 && f <= upper / 2.0) {
      upper /= 2.0;
      --b;
    }
    bands[static_cast<std::size_t>(b)] += power[k];
  }
  for (double b : bands) out.push_back(b);
  return out;
}

/// Hourly feature vector: the mean of the per-segment vectors. An hour with
/// no segments has no defined features.
inline std::vector<double> extract_vibration_features(const std::vector<std::vector<double>>& segments,
                                                      double sample_rate) {
  if (segments.empty()) throw ShapeError("extract_vibration_features: no segments in this hour");
  std::vector<double> acc;
  for (const std::vector<double>& seg : segments) {
    std::vector<double> f = segment_features(seg, sample_rate);
    if (acc.empty()) {
      acc = std::move(f);
    } else {
      if (f.size() != acc.size()) throw ShapeError("segment feature lengths differ");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f[i];
    }
  }
  for (double& v : acc) v /= static_cast<double>(segments.size());
  return acc;
}

/// Indices of the `top_n` features ranked by |Pearson correlation| with the
/// labels, strongest first, ties broken by feature index. Constant features
/// correlate at 0.
inline std::vector<int> rank_features_pearson(const std::vector<std::vector<double>>& rows,
                                              std::span<const double> labels, int top_n = 15) {
  if (rows.size() < 2) throw ShapeError("rank_features_pearson needs at least 2 rows");
  if (rows.size() != labels.size()) throw ShapeError("rows and labels differ in length");
  const std::size_t n_feat = rows[0].size();
  for (const std::vector<double>& r : rows)
    if (r.size() != n_feat) throw ShapeError("feature rows differ in length");
  const double n = static_cast<double>(rows.size());

  double y_sum = 0.0;
  for (double y : labels) y_sum += y;
  const double y_mean = y_sum / n;
  double y_var = 0.0;
  for (double y : labels) y_var += (y - y_mean) * (y - y_mean);
  if (y_var <= 0.0) throw Error("labels are constant; correlation is undefined");

  std::vector<std::pair<double, int>> ranked;
  for (std::size_t j = 0; j < n_feat; ++j) {
    double x_sum = 0.0;
    for (const std::vector<double>& r : rows) x_sum += r[j];
    const double x_mean = x_sum / n;
    double x_var = 0.0;
    double cov = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double dx = rows[i][j] - x_mean;
      x_var += dx * dx;
      cov += dx * (labels[i] - y_mean);
    }
    const double r = x_var > 0.0 ? cov / std::sqrt(x_var * y_var) : 0.0;
    ranked.emplace_back(std::abs(r), static_cast<int>(j));
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const int keep = std::min<int>(top_n, static_cast<int>(n_feat));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(keep));
  for (int i = 0; i < keep; ++i) out.push_back(ranked[static_cast<std::size_t>(i)].second);
  return out;
}

struct OperatingMask {
  std::vector<int> kept;    // indices into the original series
  std::vector<double> rul;  // recomputed labels for the kept samples
};

/// Removes shutdown samples (RMS below `shutdown_rms`) and freezes the label
/// through idle stretches (RMS below `idle_rms`). Labels are rebuilt from
/// the first kept sample's input label: active steps consume one unit of
/// life, idle steps consume none, and dropped shutdown time never counts.
inline OperatingMask mask_nonoperating(std::span<const double> rms_series,
                                       std::span<const double> rul_series,
                                       double shutdown_rms = 0.1, double idle_rms = 0.3) {
  if (rms_series.size() != rul_series.size())
    throw ShapeError("rms and rul series differ in length");
  if (!(shutdown_rms >= 0.0) || !(idle_rms >= shutdown_rms))
    throw ConfigError("thresholds must satisfy 0 <= shutdown_rms <= idle_rms");
  OperatingMask out;
  bool first = true;
  double label = 0.0;
  for (std::size_t i = 0; i < rms_series.size(); ++i) {
    if (rms_series[i] < shutdown_rms) continue;
    const bool idle = rms_series[i] < idle_rms;
    if (first) {
      label = rul_series[i];
      first = false;
    } else if (!idle) {
      label -= 1.0;
    }
    out.kept.push_back(static_cast<int>(i));
    out.rul.push_back(label);
  }
  return out;
}

}  // namespace metapinn
