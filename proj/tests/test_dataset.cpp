#include <algorithm>
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vlctl/dataset.hpp"

using namespace vlctl;

namespace {

Dataset default_dataset() { return make_dataset(synthesize_dataset(default_layout(), ChannelParams{}, 7)); }

std::multiset<std::tuple<int, double, double>> keys(const Dataset& ds) {
  std::multiset<std::tuple<int, double, double>> out;
  for (const auto& r : ds.records) out.emplace(r.scenario_id, r.position.x, r.position.y);
  return out;
}

} // namespace

TEST(Csv, RoundTripIsExact) {
  test::TempDir dir;
  const auto ds = default_dataset();
  save_csv(ds, dir.file("d.csv"));
  const auto back = load_csv(dir.file("d.csv"));
  EXPECT_EQ(back.feature_dim, 10u);
  EXPECT_EQ(back.records, ds.records);
}

TEST(Csv, HeaderHasThirteenColumns) {
  const auto h = csv_header(10);
  EXPECT_EQ(std::count(h.begin(), h.end(), ',') + 1, 13);
  EXPECT_EQ(h, "scenario_id,rx_x_m,rx_y_m,rssi_tx1_dbm,rssi_tx2_dbm,rssi_tx3_dbm,rssi_tx4_dbm,rssi_tx5_dbm,"
               "rssi_tx6_dbm,rssi_tx7_dbm,rssi_tx8_dbm,rssi_tx9_dbm,rssi_tx10_dbm");
}

TEST(Csv, MalformedInputsNameTheProblem) {
  auto expect_parse_error = [](const std::string& text, const std::string& fragment, std::size_t dim = 0) {
    try {
      parse_csv(text, dim);
      ADD_FAILURE() << "no error for: " << text;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_parse_error("", "no records");
  expect_parse_error(csv_header(10) + "\n", "no records");
  expect_parse_error(csv_header(9) + "\n1,0,0,1,2,3,4,5,6,7,8,9\n", "expected 10", 10);
  expect_parse_error(csv_header(2) + "\n1,0,0,-40\n", "row 1");
  expect_parse_error(csv_header(2) + "\n1,0,0,-40,abc\n", "column 5");
  expect_parse_error(csv_header(2) + "\nx,0,0,-40,-41\n", "column 1");
  expect_parse_error("scenario_id,rx_x_m,rx_y_m,rssi_tx1_dbm,rssi_txX_dbm\n1,0,0,1,2\n", "header column 5");
}

TEST(Split, SizesPartitionAndDeterminism) {
  const auto ds = default_dataset();
  const auto a = split(ds, 0.8, 11);
  EXPECT_EQ(a.train.size(), 1152u);
  EXPECT_EQ(a.val.size(), 288u);
  const auto b = split(ds, 0.8, 11);
  EXPECT_EQ(a.train.records, b.train.records);
  EXPECT_EQ(a.val.records, b.val.records);

  auto all = keys(a.train);
  for (const auto& k : keys(a.val)) all.insert(k);
  EXPECT_EQ(all, keys(ds));

  EXPECT_NE(split(ds, 0.8, 12).train.records, a.train.records);
}

TEST(Split, RejectsEmptySides) {
  const auto ds = default_dataset();
  EXPECT_THROW(split(ds, 0.0, 1), Error);
  EXPECT_THROW(split(ds, 1.0, 1), Error);
  EXPECT_THROW(split(ds, 0.0001, 1), Error);
}

TEST(Subsample, SizesContainmentAndIdentity) {
  const auto ds = default_dataset();
  const auto s = subsample(ds, 0.3, 13);
  EXPECT_EQ(s.size(), 432u);
  const auto all = keys(ds);
  for (const auto& k : keys(s)) EXPECT_TRUE(all.count(k));
  EXPECT_EQ(subsample(ds, 1.0, 13).records, ds.records);
  EXPECT_EQ(subsample(ds, 0.3, 13).records, s.records);
  EXPECT_THROW(subsample(ds, 0.0, 1), Error);
  EXPECT_THROW(subsample(ds, 1e-5, 1), Error);
}

TEST(Norm, StandardizesTrainMoments) {
  const auto ds = default_dataset();
  const auto stats = fit_norm(ds);
  const auto n = apply_norm(ds, stats);
  for (std::size_t k = 0; k < n.feature_dim; ++k) {
    double sum = 0.0, sq = 0.0;
    for (const auto& r : n.records) sum += r.rssi[k];
    const double mean = sum / static_cast<double>(n.size());
    for (const auto& r : n.records) sq += (r.rssi[k] - mean) * (r.rssi[k] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n.size())), 1.0, 1e-6);
  }
  const auto back = invert_norm(n, stats);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.records[i].position, ds.records[i].position);
    for (std::size_t k = 0; k < ds.feature_dim; ++k) EXPECT_NEAR(back.records[i].rssi[k], ds.records[i].rssi[k], 1e-9);
  }
}

TEST(Norm, ConstantColumnMapsToZero) {
  Dataset ds = make_dataset({{1, {0, 0}, {-95.0, 1.0}}, {1, {1, 0}, {-95.0, 2.0}}, {1, {2, 0}, {-95.0, 4.0}}});
  const auto stats = fit_norm(ds);
  EXPECT_EQ(stats.std[0], kStdFloor);
  for (const auto& r : apply_norm(ds, stats).records) EXPECT_EQ(r.rssi[0], 0.0);
}

TEST(Noise, ZeroFactorIsIdentity) {
  const auto ds = default_dataset();
  NoiseSpec spec;
  spec.nf = 0.0;
  EXPECT_EQ(inject_noise(ds, spec, NoiseStream::train).records, ds.records);
}

TEST(Noise, SigmaScalesWithFactor) {
  NoiseSpec spec;
  spec.nf = 2.0;
  EXPECT_DOUBLE_EQ(spec.sigma(), 0.5);
}

TEST(Noise, EmpiricalStdMatchesSigma) {
  const auto ds = default_dataset();
  NoiseSpec spec;
  spec.nf = 4.0;
  const auto noisy = inject_noise(ds, spec, NoiseStream::train);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(noisy.records[i].position, ds.records[i].position);
    for (std::size_t k = 0; k < ds.feature_dim; ++k) {
      const double d = noisy.records[i].rssi[k] - ds.records[i].rssi[k];
      sum += d;
      sq += d * d;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  EXPECT_GE(sd, 0.98);
  EXPECT_LE(sd, 1.02);
}

TEST(Noise, PerturbationsScaleExactlyWithFactor) {
  const auto ds = default_dataset();
  NoiseSpec a, b;
  a.nf = 8.0;
  b.nf = 2.0;
  const auto na = inject_noise(ds, a, NoiseStream::train);
  const auto nb = inject_noise(ds, b, NoiseStream::train);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t k = 0; k < ds.feature_dim; ++k) {
      // Both perturbations are sigma * z with the same z; compare z directly.
      const double za = (na.records[i].rssi[k] - ds.records[i].rssi[k]) / a.sigma();
      const double zb = (nb.records[i].rssi[k] - ds.records[i].rssi[k]) / b.sigma();
      EXPECT_NEAR(za, zb, 1e-9 * (1.0 + std::abs(zb)));
    }
}

TEST(Noise, StreamsAreIndependentAndDeterministic) {
  const auto ds = default_dataset();
  NoiseSpec spec;
  spec.nf = 2.0;
  EXPECT_EQ(inject_noise(ds, spec, NoiseStream::train).records, inject_noise(ds, spec, NoiseStream::train).records);
  EXPECT_NE(inject_noise(ds, spec, NoiseStream::train).records,
            inject_noise(ds, spec, NoiseStream::validation).records);
  EXPECT_NE(inject_noise(ds, spec, NoiseStream::epoch, 1).records,
            inject_noise(ds, spec, NoiseStream::epoch, 2).records);
}

TEST(Noise, InvalidSpecRejected) {
  NoiseSpec spec;
  spec.nf = -1.0;
  EXPECT_THROW(validate(spec), ConfigError);
  spec.nf = 1.0;
  spec.sigma_base_db = 0.0;
  EXPECT_THROW(validate(spec), ConfigError);
}
