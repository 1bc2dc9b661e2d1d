#pragma once

// Experiment driver behind the vlctl CLI: synthesize -> train base ->
// perturb (EV) -> fine-tune (TL) -> evaluate, plus the suite that chains them
// into the base / EV / TL / limited-data comparison tables.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlctl/channel_sim.hpp"
#include "vlctl/checkpoint.hpp"
#include "vlctl/config.hpp"
#include "vlctl/dataset.hpp"
#include "vlctl/error.hpp"
#include "vlctl/metrics.hpp"
#include "vlctl/neuralnet.hpp"
#include "vlctl/text.hpp"
#include "vlctl/transfer.hpp"

namespace vlctl {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointFile = "checkpoint.ckpt.json";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kCdfFile = "cdf.csv";

// ============================================================================
// Shared inputs
// ============================================================================

inline RoomLayout resolve_layout(const ExperimentConfig& cfg) {
  if (cfg.layout_path.empty()) return default_layout();
  if (!fs::exists(cfg.layout_path)) throw ConfigError("/layout: file '" + cfg.layout_path + "' does not exist");
  return load_layout(cfg.layout_path);
}

// Raw dataset, its split and the standardization fit on the clean training side.
struct PreparedData {
  Dataset all;
  Dataset train_raw;
  Dataset val_raw;
  NormStats stats;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg, const std::string& dataset_path = "") {
  PreparedData p;
  const std::string path = dataset_path.empty() ? cfg.dataset_path : dataset_path;
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("dataset file '" + path + "' does not exist");
    p.all = load_csv(path);
  } else {
    p.all = make_dataset(synthesize_dataset(resolve_layout(cfg), cfg.channel, cfg.dataset_seed));
  }
  if (p.all.feature_dim != cfg.model.input_dim)
    throw ConfigError("/model/input_dim: " + std::to_string(cfg.model.input_dim) + " does not match the dataset's " +
                      std::to_string(p.all.feature_dim) + " RSSI columns");
  auto s = split(p.all, cfg.train_fraction, cfg.split_seed);
  p.train_raw = std::move(s.train);
  p.val_raw = std::move(s.val);
  p.stats = fit_norm(p.train_raw);
  return p;
}

// Target-domain data for one (NF, data fraction) combination.
struct TargetData {
  Dataset train_raw; // subsampled and perturbed, dBm
  Dataset val_raw;
  Dataset train; // normalized
  Dataset val;
  std::optional<EpochNoise> resample;
};

inline TargetData make_target_data(const PreparedData& p, const NoiseSpec& spec, double fraction,
                                   std::uint64_t subsample_seed, const NormStats& stats) {
  TargetData t;
  const Dataset sub = subsample(p.train_raw, fraction, subsample_seed);
  t.train_raw = inject_noise(sub, spec, NoiseStream::train);
  t.val_raw = spec.apply_to_validation ? inject_noise(p.val_raw, spec, NoiseStream::validation) : p.val_raw;
  t.train = apply_norm(t.train_raw, stats);
  t.val = apply_norm(t.val_raw, stats);
  if (spec.resample_per_epoch && spec.nf > 0.0) t.resample = EpochNoise{sub, stats, spec};
  return t;
}

// ============================================================================
// Run artifacts
// ============================================================================

struct RunArtifacts {
  fs::path dir;
  RunReport report;
  nlohmann::json summary;
};

inline RunArtifacts write_run(const fs::path& dir, const Mlp& model, const CheckpointMeta& meta, RunReport report,
                              const TrainConfig& tcfg, const Dataset& val_normalized) {
  fs::create_directories(dir);
  const auto ckpt = dir / kCheckpointFile;
  save_checkpoint(model, meta, ckpt.string());
  report.checkpoint_path = ckpt.string();
  report.provenance = meta.provenance;
  text::write_file((dir / kReportFile).string(), report_to_csv(report));
  const auto errors = prediction_errors(model, val_normalized, tcfg.error_norm);
  text::write_file((dir / kCdfFile).string(), cdf_to_csv(build_cdf(errors)));
  auto summary = report_summary(report, tcfg);
  text::write_file((dir / kSummaryFile).string(), summary.dump(2) + "\n");
  return {dir, std::move(report), std::move(summary)};
}

// ============================================================================
// Commands
// ============================================================================

inline Dataset cmd_synth(const RoomLayout& layout, const ChannelParams& params, std::uint64_t seed,
                         const std::string& out_path) {
  auto ds = make_dataset(synthesize_dataset(layout, params, seed));
  save_csv(ds, out_path);
  return ds;
}

inline Dataset cmd_perturb(const std::string& in_path, const NoiseSpec& spec, const std::string& out_path) {
  validate(spec);
  const auto ds = load_csv(in_path);
  auto noisy = inject_noise(ds, spec, NoiseStream::train);
  save_csv(noisy, out_path);
  return noisy;
}

// Trains a model from scratch: a base model when cfg.noise.nf == 0, an EV
// model otherwise. Writes the checkpoint, report, summary, CDF and the exact
// train/val CSVs used (train.csv, val.csv).
inline RunArtifacts cmd_train(const ExperimentConfig& cfg, const std::string& dataset_path, const fs::path& out_dir,
                              EpochClock& clock) {
  validate(cfg.noise);
  const auto p = prepare_data(cfg, dataset_path);
  const auto t = make_target_data(p, cfg.noise, 1.0, cfg.suite.subsample_seed, p.stats);
  auto model = init_model(cfg.model);
  TrainExtras extras;
  if (t.resample) extras.resample = &*t.resample;
  auto report = train(model, t.train, t.val, cfg.train, clock, extras);
  CheckpointMeta meta;
  meta.norm_stats = p.stats;
  meta.provenance.kind = cfg.noise.nf == 0.0 ? "base" : "ev";
  meta.provenance.nf = cfg.noise.nf;
  meta.provenance.run_id = out_dir.filename().string();
  fs::create_directories(out_dir);
  save_csv(t.train_raw, (out_dir / "train.csv").string());
  save_csv(t.val_raw, (out_dir / "val.csv").string());
  return write_run(out_dir, model, meta, std::move(report), cfg.train, t.val);
}

// Fine-tunes a base checkpoint on the (perturbed) target data.
inline RunArtifacts cmd_transfer(const ExperimentConfig& cfg, const std::string& base_path,
                                 const std::string& dataset_path, const fs::path& out_dir, EpochClock& clock) {
  if (!fs::exists(base_path)) throw CheckpointError("base checkpoint '" + base_path + "' does not exist");
  const auto base = load_checkpoint(base_path);
  ExperimentConfig local = cfg;
  local.model = base.model.config;
  const auto tcfg = transfer_train_config(local);
  const auto p = prepare_data(local, dataset_path);
  const auto t = make_target_data(p, cfg.noise, 1.0, cfg.suite.subsample_seed, base.meta.norm_stats);
  TrainExtras extras;
  if (t.resample) extras.resample = &*t.resample;
  auto result = fine_tune(base, t.train, t.val, tcfg, clock, extras, base_path);
  result.meta.provenance.nf = cfg.noise.nf;
  result.meta.provenance.run_id = out_dir.filename().string();
  fs::create_directories(out_dir);
  save_csv(t.train_raw, (out_dir / "train.csv").string());
  save_csv(t.val_raw, (out_dir / "val.csv").string());
  return write_run(out_dir, result.model, result.meta, std::move(result.report), tcfg, t.val);
}

// Metrics of a checkpoint on a raw (dBm) dataset, normalized with the
// checkpoint's own statistics.
inline nlohmann::json cmd_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                                   double success_threshold_m = 1.0, ErrorNorm norm = ErrorNorm::euclidean,
                                   SuccessBoundary boundary = SuccessBoundary::inclusive) {
  const auto ck = load_checkpoint(checkpoint_path);
  const auto ds = apply_norm(load_csv(dataset_path, ck.model.config.input_dim), ck.meta.norm_stats);
  const auto errors = prediction_errors(ck.model, ds, norm);
  const auto cdf = build_cdf(errors);
  return {{"checkpoint", checkpoint_path},
          {"dataset", dataset_path},
          {"records", ds.size()},
          {"mean_error_m", mean_error(errors)},
          {"success_rate", success_rate(errors, success_threshold_m, boundary)},
          {"success_threshold_m", success_threshold_m},
          {"median_error_m", cdf.errors[static_cast<std::size_t>(
                                 std::lower_bound(cdf.fractions.begin(), cdf.fractions.end(), 0.5) -
                                 cdf.fractions.begin())]},
          {"max_error_m", cdf.errors.back()},
          {"label", model_label(ck.meta.provenance)}};
}

inline CdfCurve cmd_cdf(const std::string& checkpoint_path, const std::string& dataset_path, const std::string& out_path,
                        ErrorNorm norm = ErrorNorm::euclidean) {
  const auto ck = load_checkpoint(checkpoint_path);
  const auto ds = apply_norm(load_csv(dataset_path, ck.model.config.input_dim), ck.meta.norm_stats);
  auto cdf = build_cdf(prediction_errors(ck.model, ds, norm));
  text::write_file(out_path, cdf_to_csv(cdf));
  return cdf;
}

// ============================================================================
// Suite
// ============================================================================

struct SuiteRow {
  std::string cell_id;
  std::string kind; // base, ev, tl
  std::string label;
  double nf = 0.0;
  double data_fraction = 1.0;
  double train_err_m = 0.0;
  double val_err_m = 0.0;
  double train_sr = 0.0;
  double val_sr = 0.0;
  double cum_energy_j = 0.0;
  double cum_time_s = 0.0;
  double time_per_epoch_s = 0.0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  std::string run_dir;
};

struct LimitedDataRow {
  double data_fraction = 1.0;
  double nf = 0.0;
  double before_tl_val_err_m = 0.0;
  double after_tl_val_err_m = 0.0;
};

struct SuiteResult {
  std::string suite_id;
  fs::path dir;
  std::vector<SuiteRow> rows;
  std::vector<LimitedDataRow> limited;
  std::vector<std::string> failures;
  std::size_t cells_run = 0;
  std::size_t cells_reused = 0;

  bool ok() const noexcept { return failures.empty(); }

  const SuiteRow& row(const std::string& cell_id) const {
    for (const auto& r : rows)
      if (r.cell_id == cell_id) return r;
    throw Error("suite: no row '" + cell_id + "'");
  }
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string suite_id_for(const ExperimentConfig& cfg) {
  if (!cfg.suite.suite_id.empty()) return cfg.suite.suite_id;
  return fnv1a_hex(to_json(cfg).dump()).substr(0, 12);
}

inline std::string nf_tag(double nf) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", nf);
  return buf;
}

inline std::string fraction_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", f);
  return buf;
}

namespace detail {

struct CellTask {
  std::string id;
  std::string kind; // base, ev, tl
  double nf = 0.0;
  double fraction = 1.0;
  fs::path dir;
};

inline SuiteRow row_from_summary(const CellTask& task, const nlohmann::json& s) {
  SuiteRow r;
  r.cell_id = task.id;
  r.kind = task.kind;
  r.nf = task.nf;
  r.data_fraction = task.fraction;
  r.label = s.value("label", task.kind);
  const auto& f = s.at("final");
  r.train_err_m = f.at("train_err_m").get<double>();
  r.val_err_m = f.at("val_err_m").get<double>();
  r.train_sr = f.at("train_sr").get<double>();
  r.val_sr = f.at("val_sr").get<double>();
  r.cum_energy_j = f.at("cum_energy_j").get<double>();
  r.cum_time_s = f.at("cum_time_s").get<double>();
  r.time_per_epoch_s = f.at("time_per_epoch_s").get<double>();
  r.epochs_run = s.at("epochs_run").get<std::size_t>();
  r.early_stopped = s.at("early_stopped").get<bool>();
  r.run_dir = task.dir.string();
  return r;
}

inline bool cell_complete(const fs::path& dir) {
  for (const char* f : {kCheckpointFile, kReportFile, kSummaryFile, kCdfFile})
    if (!fs::exists(dir / f)) return false;
  return true;
}

template <typename Fn>
void run_parallel(std::size_t count, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) fn(i);
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  if (n == 1) {
    worker();
    return;
  }
  std::vector<std::jthread> threads;
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
}

} // namespace detail

// Metric columns only; timing and energy are excluded so the table is a
// deterministic function of the config.
inline std::string suite_metric_table(const SuiteResult& r) {
  std::string out = "cell_id,kind,label,nf,data_fraction,train_err_m,val_err_m,train_sr,val_sr,epochs_run,early_stopped\n";
  for (const auto& row : r.rows) {
    out += row.cell_id + "," + row.kind + "," + row.label + "," + text::format_double(row.nf) + "," +
           text::format_double(row.data_fraction) + "," + text::format_double(row.train_err_m) + "," +
           text::format_double(row.val_err_m) + "," + text::format_double(row.train_sr) + "," +
           text::format_double(row.val_sr) + "," + std::to_string(row.epochs_run) + "," +
           (row.early_stopped ? "true" : "false") + "\n";
  }
  return out;
}

inline std::string suite_full_table(const SuiteResult& r) {
  std::string out = "cell_id,kind,label,nf,data_fraction,train_err_m,val_err_m,train_sr,val_sr,cum_energy_j,"
                    "cum_time_s,time_per_epoch_s,epochs_run,early_stopped\n";
  for (const auto& row : r.rows) {
    out += row.cell_id + "," + row.kind + "," + row.label + "," + text::format_double(row.nf) + "," +
           text::format_double(row.data_fraction) + "," + text::format_double(row.train_err_m) + "," +
           text::format_double(row.val_err_m) + "," + text::format_double(row.train_sr) + "," +
           text::format_double(row.val_sr) + "," + text::format_double(row.cum_energy_j) + "," +
           text::format_double(row.cum_time_s) + "," + text::format_double(row.time_per_epoch_s) + "," +
           std::to_string(row.epochs_run) + "," + (row.early_stopped ? "true" : "false") + "\n";
  }
  return out;
}

inline std::string limited_data_table(const SuiteResult& r) {
  std::string out = "data_fraction,nf,before_tl_val_err_m,after_tl_val_err_m\n";
  for (const auto& l : r.limited)
    out += text::format_double(l.data_fraction) + "," + text::format_double(l.nf) + "," +
           text::format_double(l.before_tl_val_err_m) + "," + text::format_double(l.after_tl_val_err_m) + "\n";
  return out;
}

// Cells: base (NF = 0); per NF an EV cell and a TL cell on the full training
// split; per (NF, fraction) a limited-data cell holding an EV run ("before
// TL") and a TL run ("after TL") on the subsampled split. Cells whose
// artifacts already exist are reused.
inline SuiteResult cmd_suite(const ExperimentConfig& cfg_in, const fs::path& out_root, std::size_t workers,
                             std::ostream* log = nullptr) {
  ExperimentConfig cfg = cfg_in;
  SuiteResult result;
  result.suite_id = suite_id_for(cfg);
  result.dir = out_root / result.suite_id;
  fs::create_directories(result.dir);
  text::write_file((result.dir / "config.json").string(), to_json(cfg).dump(2) + "\n");

  const auto data = prepare_data(cfg);
  const auto tl_cfg = transfer_train_config(cfg);

  std::vector<detail::CellTask> phase1, phase2;
  phase1.push_back({"base", "base", 0.0, 1.0, result.dir / "base"});
  for (double nf : cfg.suite.nfs) {
    const std::string tag = "nf" + nf_tag(nf);
    phase1.push_back({"ev_" + tag, "ev", nf, 1.0, result.dir / ("ev_" + tag)});
    phase2.push_back({"tl_" + tag, "tl", nf, 1.0, result.dir / ("tl_" + tag)});
  }
  for (double nf : cfg.suite.nfs)
    for (double f : cfg.suite.data_fractions) {
      const std::string id = "limited_nf" + nf_tag(nf) + "_f" + fraction_tag(f);
      phase1.push_back({id + "/ev", "ev", nf, f, result.dir / id / "ev"});
      phase2.push_back({id + "/tl", "tl", nf, f, result.dir / id / "tl"});
    }

  std::mutex mu;
  std::map<std::string, SuiteRow> rows;
  auto note = [&](const std::string& msg) {
    if (log == nullptr) return;
    std::lock_guard lock(mu);
    *log << msg << std::endl;
  };

  std::string base_path = cfg.transfer.base_checkpoint;
  const bool external_base = !base_path.empty();
  if (!external_base) base_path = (result.dir / "base" / kCheckpointFile).string();
  std::optional<Checkpoint> base_ck;

  auto run_cell = [&](const detail::CellTask& task) {
    try {
      if (detail::cell_complete(task.dir)) {
        auto s = nlohmann::json::parse(text::read_file((task.dir / kSummaryFile).string()));
        std::lock_guard lock(mu);
        rows[task.id] = detail::row_from_summary(task, s);
        ++result.cells_reused;
        return;
      }
      note("[suite] running " + task.id);
      SteadyEpochClock clock;
      RunArtifacts art;
      if (task.kind == "base") {
        auto model = init_model(cfg.model);
        const auto train_n = apply_norm(data.train_raw, data.stats);
        const auto val_n = apply_norm(data.val_raw, data.stats);
        auto report = train(model, train_n, val_n, cfg.train, clock);
        CheckpointMeta meta;
        meta.norm_stats = data.stats;
        meta.provenance.kind = "base";
        meta.provenance.run_id = result.suite_id + "/" + task.id;
        art = write_run(task.dir, model, meta, std::move(report), cfg.train, val_n);
      } else if (task.kind == "ev") {
        NoiseSpec spec = cfg.noise;
        spec.nf = task.nf;
        const auto t = make_target_data(data, spec, task.fraction, cfg.suite.subsample_seed, data.stats);
        TrainExtras extras;
        if (t.resample) extras.resample = &*t.resample;
        auto model = init_model(cfg.model);
        auto report = train(model, t.train, t.val, cfg.train, clock, extras);
        CheckpointMeta meta;
        meta.norm_stats = data.stats;
        meta.provenance.kind = "ev";
        meta.provenance.nf = task.nf;
        meta.provenance.data_fraction = task.fraction;
        meta.provenance.run_id = result.suite_id + "/" + task.id;
        art = write_run(task.dir, model, meta, std::move(report), cfg.train, t.val);
      } else {
        if (!base_ck) throw Error("base checkpoint unavailable");
        NoiseSpec spec = cfg.noise;
        spec.nf = task.nf;
        const auto t = make_target_data(data, spec, task.fraction, cfg.suite.subsample_seed, base_ck->meta.norm_stats);
        TrainExtras extras;
        if (t.resample) extras.resample = &*t.resample;
        auto res = fine_tune(*base_ck, t.train, t.val, tl_cfg, clock, extras, base_path);
        res.meta.provenance.nf = task.nf;
        res.meta.provenance.data_fraction = task.fraction;
        res.meta.provenance.run_id = result.suite_id + "/" + task.id;
        art = write_run(task.dir, res.model, res.meta, std::move(res.report), tl_cfg, t.val);
      }
      std::lock_guard lock(mu);
      rows[task.id] = detail::row_from_summary(task, art.summary);
      ++result.cells_run;
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      result.failures.push_back(task.id + ": " + e.what());
    }
  };

  detail::run_parallel(phase1.size(), workers, [&](std::size_t i) { run_cell(phase1[i]); });

  try {
    if (!fs::exists(base_path)) throw CheckpointError("base checkpoint '" + base_path + "' does not exist");
    base_ck = load_checkpoint(base_path, cfg.model);
  } catch (const std::exception& e) {
    std::lock_guard lock(mu);
    result.failures.push_back(std::string("base checkpoint: ") + e.what());
  }
  detail::run_parallel(phase2.size(), workers, [&](std::size_t i) { run_cell(phase2[i]); });

  for (const auto* phase : {&phase1, &phase2})
    for (const auto& task : *phase) {
      auto it = rows.find(task.id);
      if (it != rows.end()) result.rows.push_back(it->second);
    }
  std::stable_sort(result.rows.begin(), result.rows.end(), [](const SuiteRow& a, const SuiteRow& b) {
    auto rank = [](const SuiteRow& r) { return r.cell_id.rfind("limited", 0) == 0 ? 1 : 0; };
    return rank(a) < rank(b);
  });

  for (double f : cfg.suite.data_fractions)
    for (double nf : cfg.suite.nfs) {
      const std::string id = "limited_nf" + nf_tag(nf) + "_f" + fraction_tag(f);
      auto ev = rows.find(id + "/ev");
      auto tl = rows.find(id + "/tl");
      if (ev == rows.end() || tl == rows.end()) continue;
      result.limited.push_back({f, nf, ev->second.val_err_m, tl->second.val_err_m});
    }

  text::write_file((result.dir / "suite_table.csv").string(), suite_full_table(result));
  text::write_file((result.dir / "suite_metrics.csv").string(), suite_metric_table(result));
  text::write_file((result.dir / "limited_data.csv").string(), limited_data_table(result));

  nlohmann::json j;
  j["suite_id"] = result.suite_id;
  j["ok"] = result.ok();
  j["failures"] = result.failures;
  j["cells"] = nlohmann::json::array();
  for (const auto& r : result.rows)
    j["cells"].push_back({{"cell_id", r.cell_id},
                          {"kind", r.kind},
                          {"label", r.label},
                          {"nf", r.nf},
                          {"data_fraction", r.data_fraction},
                          {"train_err_m", r.train_err_m},
                          {"val_err_m", r.val_err_m},
                          {"train_sr", r.train_sr},
                          {"val_sr", r.val_sr},
                          {"cum_energy_j", r.cum_energy_j},
                          {"cum_time_s", r.cum_time_s},
                          {"time_per_epoch_s", r.time_per_epoch_s},
                          {"epochs_run", r.epochs_run},
                          {"early_stopped", r.early_stopped},
                          {"run_dir", r.run_dir}});
  j["limited_data"] = nlohmann::json::array();
  for (const auto& l : result.limited)
    j["limited_data"].push_back({{"data_fraction", l.data_fraction},
                                 {"nf", l.nf},
                                 {"before_tl_val_err_m", l.before_tl_val_err_m},
                                 {"after_tl_val_err_m", l.after_tl_val_err_m}});
  text::write_file((result.dir / "suite_table.json").string(), j.dump(2) + "\n");
  return result;
}

} // namespace vlctl
