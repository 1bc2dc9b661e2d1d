// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).
//
//   vlctl_acceptance [--full] [--keep DIR]
//
// --full runs the trend criteria on the 600-epoch reference profile instead
// of the fast profile.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "vlctl/harness.hpp"

using namespace vlctl;
namespace fs = std::filesystem;

namespace {

// Tolerances and bounds.
constexpr double kFdStep = 1e-5;
constexpr double kFdMaxRel = 1e-4;
constexpr double kFdMaxSeconds = 5.0;
constexpr double kGainRel = 1e-12;
constexpr double kOrderAbs = 1e-12;
constexpr double kNoiseStdRel = 0.02;
constexpr std::size_t kNoiseMinCells = 100000;
constexpr double kEv8Slack = 1.02;
constexpr double kTlOverEv = 0.8;
constexpr double kTl8OverBase = 1.15;
constexpr double kFastSuiteSeconds = 180.0;
constexpr double kFullSuiteSeconds = 1800.0;
constexpr double kTl30OverTl100 = 1.10;
constexpr double kTl30OverEv30 = 0.6;
constexpr double kEnergyRel = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig c;
  c.hidden_sizes = {8, 8};
  c.activation = Activation::tanh;
  c.init_seed = 1234;
  auto mlp = init_model(c);
  Rng rng(77);
  Eigen::MatrixXd x(16, 10), y(16, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.gaussian();
  const auto g = backward(mlp, x, y);
  double worst = 0.0;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    auto visit = [&](double& p, double analytic) {
      const double keep = p;
      p = keep + kFdStep;
      const double up = mse_loss(forward_batch(mlp, x), y);
      p = keep - kFdStep;
      const double down = mse_loss(forward_batch(mlp, x), y);
      p = keep;
      const double numeric = (up - down) / (2.0 * kFdStep);
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    };
    auto& L = mlp.layers[l];
    for (Eigen::Index i = 0; i < L.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < L.weights.cols(); ++j) visit(L.weights(i, j), g.weights[l](i, j));
    for (Eigen::Index j = 0; j < L.bias.size(); ++j) visit(L.bias(j), g.bias[l](j));
  }
  const double secs = seconds_since(t0);
  return {worst <= kFdMaxRel && secs < kFdMaxSeconds,
          "max rel err " + fmt("%.3g", worst) + " (<= 1e-4), " + fmt("%.2f", secs) + " s (< 5 s)"};
}

Outcome channel_oracle() {
  const ChannelParams p;
  const double m = -std::log(2.0) / std::log(std::cos(62.0 * std::acos(-1.0) / 180.0));
  const double expected = (m + 1.0) * p.pd_area / (2.0 * std::acos(-1.0) * 1.8 * 1.8);
  const double h = los_gain({1, 2.6, 0.8, 2.9}, {2.6, 0.8}, 1.1, p);
  const double rel = std::abs(h - expected) / expected;
  const double m60 = lambertian_order(60.0);
  return {rel <= kGainRel && std::abs(m60 - 1.0) <= kOrderAbs,
          "nadir gain rel err " + fmt("%.3g", rel) + ", m(60deg) - 1 = " + fmt("%.3g", m60 - 1.0)};
}

Outcome noise_law() {
  Dataset ds = make_dataset(synthesize_dataset(default_layout(), ChannelParams{}, 7));
  // 1440 x 10 = 14,400 cells per draw; 7 independent draws reach 1e5 cells.
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  NoiseSpec spec;
  spec.nf = 4.0;
  for (std::uint64_t draw = 0; n < kNoiseMinCells; ++draw) {
    spec.seed = 1000 + draw;
    const auto noisy = inject_noise(ds, spec, NoiseStream::train);
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t k = 0; k < ds.feature_dim; ++k) {
        const double d = noisy.records[i].rssi[k] - ds.records[i].rssi[k];
        sum += d;
        sq += d * d;
        ++n;
      }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  const double target = spec.nf * spec.sigma_base_db;
  spec.nf = 0.0;
  const bool identity = inject_noise(ds, spec, NoiseStream::train).records == ds.records;
  return {std::abs(sd / target - 1.0) <= kNoiseStdRel && identity,
          "std " + fmt("%.4f", sd) + " dB vs " + fmt("%.2f", target) + " over " + std::to_string(n) +
              " cells; NF=0 identity " + (identity ? "yes" : "no")};
}

bool identical(const DenseLayer& a, const DenseLayer& b) {
  return a.weights.size() == b.weights.size() && a.bias.size() == b.bias.size() &&
         std::memcmp(a.weights.data(), b.weights.data(), sizeof(double) * static_cast<std::size_t>(a.weights.size())) == 0 &&
         std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * static_cast<std::size_t>(a.bias.size())) == 0;
}

Outcome freeze_invariance(const fs::path& scratch) {
  auto ds = make_dataset(synthesize_dataset(default_layout(), ChannelParams{}, 7));
  auto s = split(ds, 0.8, 11);
  const auto stats = fit_norm(s.train);
  const auto train_n = apply_norm(subsample(s.train, 0.3, 5), stats);
  const auto val_n = apply_norm(s.val, stats);
  const ModelConfig cfg; // reference architecture, mask [T,T,T,T,F,F]
  auto base = init_model(cfg);
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;
  ManualEpochClock clock(1.0);
  train(base, train_n, val_n, tc, clock);
  const auto path = (scratch / "freeze_base.ckpt.json").string();
  CheckpointMeta meta;
  meta.norm_stats = stats;
  meta.provenance.kind = "base";
  save_checkpoint(base, meta, path);

  bool ok = true;
  std::size_t runs = 0;
  for (const auto opt : {OptimizerKind::adam, OptimizerKind::sgd}) {
    for (double nf : {2.0, 8.0}) {
      NoiseSpec spec;
      spec.nf = nf;
      const auto noisy = apply_norm(inject_noise(subsample(s.train, 0.3, 5), spec, NoiseStream::train), stats);
      TrainConfig ft = tc;
      ft.optimizer = opt;
      ft.freeze = default_freeze_mask(cfg);
      ft.epochs = 3;
      const auto loaded = load_checkpoint(path);
      const auto res = fine_tune(loaded, noisy, val_n, ft, clock, {}, path);
      for (std::size_t l = 0; l < 4; ++l) ok = ok && identical(res.model.layers[l], base.layers[l]);
      ok = ok && !identical(res.model.layers[5], base.layers[5]);
      ++runs;
    }
  }
  return {ok, std::to_string(runs) + " fine-tunes (adam/sgd x NF 2/8): layers 1-4 bit-identical, head updated"};
}

Outcome checkpoint_round_trip(const fs::path& scratch) {
  ModelConfig c;
  c.init_seed = 99;
  auto mlp = init_model(c);
  Rng rng(5);
  for (auto& l : mlp.layers) l.bias = Eigen::VectorXd::NullaryExpr(l.bias.size(), [&] { return rng.gaussian(); });
  CheckpointMeta meta;
  meta.norm_stats.mean.assign(10, -60.123456789);
  meta.norm_stats.std.assign(10, 7.0 / 3.0);
  const auto path = (scratch / "roundtrip.ckpt.json").string();
  save_checkpoint(mlp, meta, path);
  const auto back = load_checkpoint(path);
  Eigen::MatrixXd x(100, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian() * 3.0;
  const Eigen::MatrixXd a = forward_batch(mlp, x);
  const Eigen::MatrixXd b = forward_batch(back.model, x);
  const bool same = std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
  return {same, "100 random inputs, predictions " + std::string(same ? "bit-identical" : "differ")};
}

Outcome metric_oracles() {
  Rng rng(2024);
  std::vector<ErrorSample> samples;
  for (std::size_t i = 0; i < 1000; ++i) samples.push_back({i, std::abs(rng.gaussian()) * 1.5});
  // Exact boundary hits included.
  samples[10].error = 1.0;
  samples[11].error = 1.0;
  bool ok = true;
  std::vector<double> deltas = {1.0};
  while (deltas.size() < 10) deltas.push_back(rng.uniform(0.01, 4.0));
  const auto cdf = build_cdf(samples);
  for (double d : deltas) {
    std::size_t hits = 0;
    for (const auto& s : samples) hits += s.error <= d ? 1 : 0;
    const double brute = static_cast<double>(hits) / 1000.0;
    ok = ok && success_rate(samples, d) == brute;
    ok = ok && success_rate(samples, d) == cdf.fraction_at(d);
    ok = ok && success_rate(samples, d, SuccessBoundary::exclusive) == cdf.fraction_below(d);
  }
  ok = ok && cdf.fractions.back() == 1.0 && cdf.errors.size() == cdf.fractions.size();
  return {ok, "10 thresholds vs brute-force count and CDF read-off, exact"};
}

// Energy identity over the per-epoch report files written by a suite run.
Outcome energy_arithmetic(const std::vector<fs::path>& report_dirs, double p_total) {
  std::size_t reports = 0, epochs = 0;
  bool ok = !report_dirs.empty();
  double worst = 0.0;
  for (const auto& dir : report_dirs) {
    const auto csv = text::read_file((dir / kReportFile).string());
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    double running = 0.0;
    while (std::getline(in, line)) {
      const auto cells = text::split(line, ',');
      const double t = *text::parse_double(cells[5]);
      const double e = *text::parse_double(cells[6]);
      const double cum = *text::parse_double(cells[7]);
      running += e;
      ok = ok && cum == running;
      const double expect = p_total * t;
      const double rel = expect == 0.0 ? std::abs(e) : std::abs(e - expect) / expect;
      worst = std::max(worst, rel);
      ++epochs;
    }
    ++reports;
  }
  ok = ok && worst <= kEnergyRel;
  return {ok, std::to_string(reports) + " reports / " + std::to_string(epochs) +
                  " epochs: cumulative == running sum (exact), max rel err of (P_cpu+P_gpu)*T " + fmt("%.2g", worst)};
}

std::string limited_id(double nf, double f) { return "limited_nf" + nf_tag(nf) + "_f" + fraction_tag(f); }

Outcome trend(const SuiteResult& r, double secs, double limit_s) {
  const double base = r.row("base").val_err_m;
  const double ev2 = r.row("ev_nf2").val_err_m, ev4 = r.row("ev_nf4").val_err_m, ev8 = r.row("ev_nf8").val_err_m;
  const double tl2 = r.row("tl_nf2").val_err_m, tl4 = r.row("tl_nf4").val_err_m, tl8 = r.row("tl_nf8").val_err_m;
  std::vector<std::pair<std::string, bool>> checks = {
      {"base<EV2", base < ev2},
      {"EV2<EV4", ev2 < ev4},
      {"EV4<=1.02*EV8", ev4 <= kEv8Slack * ev8},
      {"TL2<=0.8*EV2", tl2 <= kTlOverEv * ev2},
      {"TL4<=0.8*EV4", tl4 <= kTlOverEv * ev4},
      {"TL8<=0.8*EV8", tl8 <= kTlOverEv * ev8},
      {"TL8<=1.15*base", tl8 <= kTl8OverBase * base},
      {"runtime", secs <= limit_s},
  };
  bool ok = true;
  std::string failed;
  for (const auto& [name, pass] : checks) {
    ok = ok && pass;
    if (!pass) failed += (failed.empty() ? "" : ",") + name;
  }
  std::string d = "val err m: base " + fmt("%.4f", base) + " EV " + fmt("%.4f", ev2) + "/" + fmt("%.4f", ev4) + "/" +
                  fmt("%.4f", ev8) + " TL " + fmt("%.4f", tl2) + "/" + fmt("%.4f", tl4) + "/" + fmt("%.4f", tl8) +
                  "; TL/EV " + fmt("%.3f", tl2 / ev2) + "/" + fmt("%.3f", tl4 / ev4) + "/" + fmt("%.3f", tl8 / ev8) +
                  "; TL8/base " + fmt("%.3f", tl8 / base) + "; suite " + fmt("%.0f", secs) + " s";
  if (!failed.empty()) d += "; failing: " + failed;
  return {ok, d};
}

Outcome limited_data(const SuiteResult& r) {
  bool ok = true;
  std::string d;
  for (double nf : {2.0, 4.0, 8.0}) {
    const double tl30 = r.row(limited_id(nf, 0.3) + "/tl").val_err_m;
    const double tl100 = r.row(limited_id(nf, 1.0) + "/tl").val_err_m;
    const double ev30 = r.row(limited_id(nf, 0.3) + "/ev").val_err_m;
    const bool a = tl30 <= kTl30OverTl100 * tl100;
    const bool b = tl30 <= kTl30OverEv30 * ev30;
    ok = ok && a && b;
    d += (d.empty() ? "" : "; ") + std::string("NF ") + nf_tag(nf) + ": TL30/TL100 " + fmt("%.3f", tl30 / tl100) +
         (a ? "" : "(!)") + " TL30/EV30 " + fmt("%.3f", tl30 / ev30) + (b ? "" : "(!)");
  }
  return {ok, d + " (bounds 1.10 / 0.6)"};
}

std::vector<fs::path> report_dirs(const SuiteResult& r) {
  std::vector<fs::path> out;
  for (const auto& row : r.rows) out.emplace_back(row.run_dir);
  return out;
}

} // namespace

int main(int argc, char** argv) {
  bool full = false;
  fs::path keep;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--full") == 0) full = true;
    else if (std::strcmp(argv[i], "--keep") == 0 && i + 1 < argc) keep = argv[++i];
    else {
      std::fprintf(stderr, "usage: %s [--full] [--keep DIR]\n", argv[0]);
      return 2;
    }
  }
  if (const char* env = std::getenv("VLCTL_ACCEPTANCE_PROFILE"); env && std::string(env) == "full") full = true;

  const fs::path scratch = keep.empty() ? fs::temp_directory_path() / ("vlctl_acceptance_" + std::to_string(::getpid()))
                                        : keep;
  fs::create_directories(scratch);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::printf("[%s] C%d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };

  report(1, "gradient correctness", gradient_check());
  report(2, "channel oracle", channel_oracle());
  report(3, "noise law", noise_law());
  report(4, "freeze invariance", freeze_invariance(scratch));
  report(5, "checkpoint round trip", checkpoint_round_trip(scratch));

  ExperimentConfig fast_cfg;
  apply_fast_profile(fast_cfg);
  const auto t_fast = std::chrono::steady_clock::now();
  const auto fast_a = cmd_suite(fast_cfg, scratch / "fast_a", 1);
  const double fast_secs = seconds_since(t_fast);
  const auto fast_b = cmd_suite(fast_cfg, scratch / "fast_b", 1);

  std::optional<SuiteResult> full_run;
  double full_secs = 0.0;
  if (full) {
    const auto t_full = std::chrono::steady_clock::now();
    full_run = cmd_suite(ExperimentConfig{}, scratch / "full", 1, &std::cerr);
    full_secs = seconds_since(t_full);
  }
  const SuiteResult& trend_run = full ? *full_run : fast_a;
  const std::string profile = full ? "full profile" : "fast profile";

  if (!trend_run.ok()) {
    report(6, "trend reproduction (" + profile + ")", {false, "suite failed: " + trend_run.failures.front()});
    report(7, "limited-data recovery (" + profile + ")", {false, "suite failed"});
  } else {
    report(6, "trend reproduction (" + profile + ")",
           trend(trend_run, full ? full_secs : fast_secs, full ? kFullSuiteSeconds : kFastSuiteSeconds));
    report(7, "limited-data recovery (" + profile + ")", limited_data(trend_run));
  }

  report(8, "metric oracles", metric_oracles());
  const ExperimentConfig ref;
  report(9, "energy arithmetic", energy_arithmetic(report_dirs(trend_run), ref.train.power.cpu_w + ref.train.power.gpu_w));

  const bool same = fast_a.ok() && fast_b.ok() && suite_metric_table(fast_a) == suite_metric_table(fast_b);
  report(10, "determinism (fast suite x2)",
         {same, std::to_string(fast_a.rows.size()) + " runs, metric tables " + (same ? "identical" : "differ")});

  if (keep.empty()) {
    std::error_code ec;
    fs::remove_all(scratch, ec);
  }
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
