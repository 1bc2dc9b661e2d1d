#pragma once

// Localization error, success rate, energy accounting and empirical CDFs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vlctl/channel_sim.hpp"
#include "vlctl/error.hpp"
#include "vlctl/text.hpp"

namespace vlctl {

// Euclidean distance by default; the per-axis mean absolute difference is
// kept for sensitivity checks.
enum class ErrorNorm { euclidean, axis_mean_abs };

// inclusive counts error <= delta as a success, exclusive requires error < delta.
enum class SuccessBoundary { inclusive, exclusive };

inline std::string to_string(ErrorNorm n) { return n == ErrorNorm::euclidean ? "euclidean" : "axis_mean_abs"; }

inline ErrorNorm error_norm_from_string(const std::string& s) {
  if (s == "euclidean") return ErrorNorm::euclidean;
  if (s == "axis_mean_abs") return ErrorNorm::axis_mean_abs;
  throw ConfigError("unknown error norm '" + s + "'");
}

inline std::string to_string(SuccessBoundary b) { return b == SuccessBoundary::inclusive ? "inclusive" : "exclusive"; }

inline SuccessBoundary success_boundary_from_string(const std::string& s) {
  if (s == "inclusive") return SuccessBoundary::inclusive;
  if (s == "exclusive") return SuccessBoundary::exclusive;
  throw ConfigError("unknown success boundary '" + s + "'");
}

struct ErrorSample {
  std::size_t index = 0;
  double error = 0.0;
};

inline std::vector<ErrorSample> localization_errors(std::span<const Point2> predictions, std::span<const Point2> truths,
                                                    ErrorNorm norm = ErrorNorm::euclidean) {
  if (predictions.size() != truths.size())
    throw DimensionError("localization_errors: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(truths.size()) + " truths");
  std::vector<ErrorSample> out;
  out.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double dx = predictions[i].x - truths[i].x;
    const double dy = predictions[i].y - truths[i].y;
    const double e = norm == ErrorNorm::euclidean ? std::sqrt(dx * dx + dy * dy) : 0.5 * (std::abs(dx) + std::abs(dy));
    if (!std::isfinite(e)) throw DomainError("localization_errors: non-finite error at index " + std::to_string(i));
    out.push_back({i, e});
  }
  return out;
}

inline double mean_error(std::span<const ErrorSample> samples) {
  if (samples.empty()) throw DomainError("mean_error: no samples");
  double s = 0.0;
  for (const auto& e : samples) s += e.error;
  return s / static_cast<double>(samples.size());
}

inline double success_rate(std::span<const ErrorSample> samples, double delta,
                           SuccessBoundary boundary = SuccessBoundary::inclusive) {
  if (samples.empty()) throw DomainError("success_rate: no samples");
  if (!(delta > 0.0)) throw DomainError("success_rate: threshold must be positive");
  std::size_t hits = 0;
  for (const auto& e : samples)
    if (boundary == SuccessBoundary::inclusive ? e.error <= delta : e.error < delta) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline double epoch_energy(double p_cpu_w, double p_gpu_w, double t_epoch_s) {
  if (p_cpu_w < 0.0 || p_gpu_w < 0.0 || t_epoch_s < 0.0) throw DomainError("epoch_energy: negative input");
  return (p_cpu_w + p_gpu_w) * t_epoch_s;
}

struct CdfCurve {
  std::vector<double> errors;    // distinct, ascending
  std::vector<double> fractions; // count(error <= errors[k]) / N
  std::size_t sample_count = 0;

  // Fraction of samples with error <= x.
  double fraction_at(double x) const {
    auto it = std::upper_bound(errors.begin(), errors.end(), x);
    if (it == errors.begin()) return 0.0;
    return fractions[static_cast<std::size_t>(it - errors.begin()) - 1];
  }

  // Fraction of samples with error < x.
  double fraction_below(double x) const {
    auto it = std::lower_bound(errors.begin(), errors.end(), x);
    if (it == errors.begin()) return 0.0;
    return fractions[static_cast<std::size_t>(it - errors.begin()) - 1];
  }
};

inline CdfCurve build_cdf(std::span<const ErrorSample> samples) {
  if (samples.empty()) throw DomainError("build_cdf: no samples");
  std::vector<double> sorted;
  sorted.reserve(samples.size());
  for (const auto& s : samples) sorted.push_back(s.error);
  std::sort(sorted.begin(), sorted.end());
  CdfCurve cdf;
  cdf.sample_count = sorted.size();
  const auto n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    cdf.errors.push_back(sorted[i]);
    cdf.fractions.push_back(static_cast<double>(i + 1) / n);
  }
  return cdf;
}

inline std::string cdf_to_csv(const CdfCurve& cdf) {
  std::string out = "error_m,cum_fraction\n";
  for (std::size_t i = 0; i < cdf.errors.size(); ++i)
    out += text::format_double(cdf.errors[i]) + "," + text::format_double(cdf.fractions[i]) + "\n";
  return out;
}

} // namespace vlctl
