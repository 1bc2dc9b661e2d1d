#pragma once

// Fingerprint datasets: CSV persistence, splitting, standardization,
// environmental-variation noise and limited-data subsampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vlctl/channel_sim.hpp"
#include "vlctl/error.hpp"
#include "vlctl/random.hpp"
#include "vlctl/text.hpp"

namespace vlctl {

inline constexpr double kStdFloor = 1e-8;

struct Dataset {
  std::vector<FingerprintRecord> records;
  std::size_t feature_dim = 0;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Environmental variation: additive N(0, (nf * sigma_base)^2) on raw dBm features.
struct NoiseSpec {
  double nf = 0.0;
  double sigma_base_db = 0.25;
  bool resample_per_epoch = false;
  bool apply_to_validation = true;
  std::uint64_t seed = 2024;

  double sigma() const noexcept { return nf * sigma_base_db; }
};

inline void validate(const NoiseSpec& spec) {
  if (!(spec.nf >= 0.0) || !std::isfinite(spec.nf)) throw ConfigError("noise: nf must be a non-negative number");
  if (!(spec.sigma_base_db > 0.0)) throw ConfigError("noise: sigma_base_db must be positive");
}

inline Dataset make_dataset(std::vector<FingerprintRecord> records) {
  Dataset ds;
  ds.feature_dim = records.empty() ? 0 : records.front().rssi.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].rssi.size() != ds.feature_dim)
      throw DimensionError("record " + std::to_string(i) + " has " + std::to_string(records[i].rssi.size()) +
                           " features, expected " + std::to_string(ds.feature_dim));
  }
  ds.records = std::move(records);
  return ds;
}

// ============================================================================
// CSV
// ============================================================================

inline std::string csv_header(std::size_t feature_dim) {
  std::string h = "scenario_id,rx_x_m,rx_y_m";
  for (std::size_t k = 1; k <= feature_dim; ++k) h += ",rssi_tx" + std::to_string(k) + "_dbm";
  return h;
}

inline std::string to_csv(const Dataset& ds) {
  std::string out = csv_header(ds.feature_dim);
  out += '\n';
  for (const auto& r : ds.records) {
    out += std::to_string(r.scenario_id);
    out += ',';
    out += text::format_double(r.position.x);
    out += ',';
    out += text::format_double(r.position.y);
    for (double v : r.rssi) {
      out += ',';
      out += text::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline void save_csv(const Dataset& ds, const std::string& path) { text::write_file(path, to_csv(ds)); }

// expected_dim = 0 accepts any number of RSSI columns.
inline Dataset parse_csv(const std::string& contents, std::size_t expected_dim = 0) {
  std::vector<std::string_view> lines;
  for (auto line : text::split(contents, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ParseError("no records");

  const auto header = text::split(lines.front(), ',');
  if (header.size() < 4) throw ParseError("header: expected at least 4 columns, found " + std::to_string(header.size()));
  const std::size_t dim = header.size() - 3;
  if (expected_dim != 0 && dim != expected_dim)
    throw ParseError("header: expected " + std::to_string(expected_dim) + " RSSI columns, found " +
                     std::to_string(dim));
  const std::string expected_header = csv_header(dim);
  const auto expected = text::split(expected_header, ',');
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] != expected[c])
      throw ParseError("header column " + std::to_string(c + 1) + ": expected '" + std::string(expected[c]) +
                       "', found '" + std::string(header[c]) + "'");
  }
  if (lines.size() == 1) throw ParseError("no records");

  Dataset ds;
  ds.feature_dim = dim;
  ds.records.reserve(lines.size() - 1);
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto cells = text::split(lines[row], ',');
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                       " columns, found " + std::to_string(cells.size()));
    FingerprintRecord rec;
    auto id = text::parse_int(cells[0]);
    if (!id) throw ParseError("row " + std::to_string(row) + ", column 1 (scenario_id): not an integer");
    rec.scenario_id = static_cast<int>(*id);
    std::vector<double> values;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      auto v = text::parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) + " (" +
                         std::string(header[c]) + "): not a finite number");
      values.push_back(*v);
    }
    rec.position = {values[0], values[1]};
    rec.rssi.assign(values.begin() + 2, values.end());
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

inline Dataset load_csv(const std::string& path, std::size_t expected_dim = 0) {
  const auto contents = text::read_file(path);
  try {
    return parse_csv(contents, expected_dim);
  } catch (const ParseError& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

// ============================================================================
// Splitting and subsampling
// ============================================================================

namespace detail {
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

inline Dataset gather(const Dataset& ds, std::vector<std::size_t> idx, bool keep_input_order) {
  if (keep_input_order) std::sort(idx.begin(), idx.end());
  Dataset out;
  out.feature_dim = ds.feature_dim;
  out.records.reserve(idx.size());
  for (auto i : idx) out.records.push_back(ds.records[i]);
  return out;
}
} // namespace detail

struct Split {
  Dataset train;
  Dataset val;
};

// Both sides keep the input's relative row order.
inline Split split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split: train_fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n)
    throw ConfigError("split: fraction " + text::format_double(train_fraction) + " of " + std::to_string(n) +
                      " records leaves one side empty");
  auto idx = detail::permutation(n, seed);
  std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return {detail::gather(ds, std::move(train_idx), true), detail::gather(ds, std::move(val_idx), true)};
}

// Order-preserving: fraction 1 is the identity.
inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample: fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  if (k == 0) throw ConfigError("subsample: fraction " + text::format_double(fraction) + " leaves no records");
  if (k == ds.size()) return ds;
  auto idx = detail::permutation(ds.size(), seed);
  idx.resize(k);
  return detail::gather(ds, std::move(idx), true);
}

// ============================================================================
// Normalization
// ============================================================================

inline NormStats fit_norm(const Dataset& train) {
  if (train.empty()) throw ConfigError("fit_norm: empty dataset");
  const std::size_t d = train.feature_dim;
  const auto n = static_cast<double>(train.size());
  NormStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& r : train.records)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += r.rssi[k];
  for (auto& m : s.mean) m /= n;
  for (const auto& r : train.records)
    for (std::size_t k = 0; k < d; ++k) {
      const double c = r.rssi[k] - s.mean[k];
      s.std[k] += c * c;
    }
  for (auto& v : s.std) v = std::max(std::sqrt(v / n), kStdFloor);
  return s;
}

inline Dataset apply_norm(const Dataset& ds, const NormStats& stats) {
  if (stats.mean.size() != ds.feature_dim || stats.std.size() != ds.feature_dim)
    throw DimensionError("apply_norm: statistics have dimension " + std::to_string(stats.mean.size()) +
                         ", dataset has " + std::to_string(ds.feature_dim));
  Dataset out = ds;
  for (auto& r : out.records)
    for (std::size_t k = 0; k < ds.feature_dim; ++k) r.rssi[k] = (r.rssi[k] - stats.mean[k]) / stats.std[k];
  return out;
}

inline Dataset invert_norm(const Dataset& ds, const NormStats& stats) {
  if (stats.mean.size() != ds.feature_dim || stats.std.size() != ds.feature_dim)
    throw DimensionError("invert_norm: dimension mismatch");
  Dataset out = ds;
  for (auto& r : out.records)
    for (std::size_t k = 0; k < ds.feature_dim; ++k) r.rssi[k] = r.rssi[k] * stats.std[k] + stats.mean[k];
  return out;
}

// ============================================================================
// Noise
// ============================================================================

// Draws one standard normal per cell, row-major, and scales it by sigma, so
// two calls with the same rng state differ only by the ratio of their NFs.
inline Dataset inject_noise(const Dataset& ds, const NoiseSpec& spec, Rng& rng) {
  validate(spec);
  Dataset out = ds;
  const double sigma = spec.sigma();
  if (sigma == 0.0) return out;
  for (auto& r : out.records)
    for (auto& v : r.rssi) v += sigma * rng.gaussian();
  return out;
}

// Stream tags for the noise draws derived from NoiseSpec::seed.
enum class NoiseStream : std::uint64_t { train = 0, validation = 1, epoch = 2 };

inline Dataset inject_noise(const Dataset& ds, const NoiseSpec& spec, NoiseStream stream, std::uint64_t epoch = 0) {
  Rng rng(spec.seed, {static_cast<std::uint64_t>(stream), epoch});
  return inject_noise(ds, spec, rng);
}

// ============================================================================
// Matrix views for training
// ============================================================================

inline Eigen::MatrixXd feature_matrix(const Dataset& ds) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.feature_dim));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t k = 0; k < ds.feature_dim; ++k)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = ds.records[i].rssi[k];
  return x;
}

inline Eigen::MatrixXd label_matrix(const Dataset& ds) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(ds.size()), 2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    y(static_cast<Eigen::Index>(i), 0) = ds.records[i].position.x;
    y(static_cast<Eigen::Index>(i), 1) = ds.records[i].position.y;
  }
  return y;
}

} // namespace vlctl
