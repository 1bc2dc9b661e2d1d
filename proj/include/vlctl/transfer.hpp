#pragma once

// Mini-batch training with per-epoch metric capture, weight transfer from a
// base checkpoint and layer freezing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vlctl/checkpoint.hpp"
#include "vlctl/dataset.hpp"
#include "vlctl/error.hpp"
#include "vlctl/metrics.hpp"
#include "vlctl/neuralnet.hpp"
#include "vlctl/random.hpp"

namespace vlctl {

// ============================================================================
// Clocks
// ============================================================================

class EpochClock {
public:
  virtual ~EpochClock() = default;
  virtual double now_seconds() = 0;
};

class SteadyEpochClock final : public EpochClock {
public:
  double now_seconds() override {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  }
};

// Advances by a fixed step on every reading, so each epoch lasts `step` seconds.
class ManualEpochClock final : public EpochClock {
public:
  explicit ManualEpochClock(double step_seconds) : step_(step_seconds) {}

  double now_seconds() override {
    const double t = t_;
    t_ += step_;
    return t;
  }

private:
  double t_ = 0.0;
  double step_;
};

// ============================================================================
// Configuration
// ============================================================================

struct PowerModel {
  double cpu_w = 65.0;
  double gpu_w = 0.0;
};

// Stop once relative validation improvement stays below `eps` for `patience` epochs.
struct Convergence {
  bool enabled = false;
  std::size_t patience = 25;
  double eps = 1e-4;
};

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 600;
  FreezeMask freeze;
  LossWeights loss_weights;
  double success_threshold_m = 1.0;
  SuccessBoundary boundary = SuccessBoundary::inclusive;
  ErrorNorm error_norm = ErrorNorm::euclidean;
  PowerModel power;
  Convergence convergence;
  std::uint64_t shuffle_seed = 3;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (c.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(c.success_threshold_m > 0.0)) throw ConfigError("train: success_threshold_m must be positive");
  if (!(c.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be non-negative");
  if (c.power.cpu_w < 0.0 || c.power.gpu_w < 0.0) throw ConfigError("train: power must be non-negative");
  validate(c.loss_weights);
}

// First four hidden layers frozen (fewer when the network is shallower, but
// the last hidden layer always stays trainable); last hidden + output train.
inline FreezeMask default_freeze_mask(const ModelConfig& config) {
  const std::size_t hidden = config.hidden_sizes.size();
  FreezeMask mask(config.layer_count(), false);
  const std::size_t frozen = hidden == 0 ? 0 : std::min<std::size_t>(4, hidden - 1);
  for (std::size_t l = 0; l < frozen; ++l) mask[l] = true;
  return mask;
}

// ============================================================================
// Reports
// ============================================================================

struct EvalMetrics {
  double train_err_m = 0.0;
  double val_err_m = 0.0;
  double train_sr = 0.0;
  double val_sr = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_err_m = 0.0;
  double val_err_m = 0.0;
  double train_sr = 0.0;
  double val_sr = 0.0;
  double epoch_time_s = 0.0;
  double epoch_energy_j = 0.0;
  double cum_energy_j = 0.0;
  double train_loss = 0.0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  EvalMetrics initial; // before the first update
  bool early_stopped = false;
  bool transfer_run = false;
  Provenance provenance;
  std::string checkpoint_path;

  const EpochRecord& final_record() const {
    if (epochs.empty()) throw Error("run report has no epochs");
    return epochs.back();
  }

  double cumulative_time_s() const {
    double t = 0.0;
    for (const auto& e : epochs) t += e.epoch_time_s;
    return t;
  }

  double cumulative_energy_j() const { return epochs.empty() ? 0.0 : epochs.back().cum_energy_j; }
};

inline std::string report_to_csv(const RunReport& r) {
  std::string out = "epoch,train_err_m,val_err_m,train_sr,val_sr,epoch_time_s,epoch_energy_j,cum_energy_j\n";
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch);
    for (double v : {e.train_err_m, e.val_err_m, e.train_sr, e.val_sr, e.epoch_time_s, e.epoch_energy_j, e.cum_energy_j}) {
      out += ',';
      out += text::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", to_string(c.optimizer)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"freeze", c.freeze},
          {"loss_weights", {{"lambda_s", c.loss_weights.lambda_s}, {"lambda_t", c.loss_weights.lambda_t}}},
          {"success_threshold_m", c.success_threshold_m},
          {"success_boundary", to_string(c.boundary)},
          {"error_norm", to_string(c.error_norm)},
          {"power", {{"cpu_w", c.power.cpu_w}, {"gpu_w", c.power.gpu_w}}},
          {"convergence",
           {{"enabled", c.convergence.enabled}, {"patience", c.convergence.patience}, {"eps", c.convergence.eps}}},
          {"shuffle_seed", c.shuffle_seed}};
}

inline nlohmann::json report_summary(const RunReport& r, const TrainConfig& cfg) {
  nlohmann::json j;
  const auto& f = r.final_record();
  j["final"] = {{"epoch", f.epoch},
                {"train_err_m", f.train_err_m},
                {"val_err_m", f.val_err_m},
                {"train_sr", f.train_sr},
                {"val_sr", f.val_sr},
                {"cum_energy_j", r.cumulative_energy_j()},
                {"cum_time_s", r.cumulative_time_s()},
                {"time_per_epoch_s", r.cumulative_time_s() / static_cast<double>(r.epochs.size())}};
  j["initial"] = {{"train_err_m", r.initial.train_err_m},
                  {"val_err_m", r.initial.val_err_m},
                  {"train_sr", r.initial.train_sr},
                  {"val_sr", r.initial.val_sr}};
  j["epochs_run"] = r.epochs.size();
  j["early_stopped"] = r.early_stopped;
  j["transfer_run"] = r.transfer_run;
  j["label"] = model_label(r.provenance);
  j["provenance"] = to_json(r.provenance);
  j["lineage"] = lineage(r.provenance);
  j["checkpoint"] = r.checkpoint_path;
  j["config"] = to_json(cfg);
  return j;
}

// ============================================================================
// Evaluation
// ============================================================================

inline std::vector<ErrorSample> prediction_errors(const Mlp& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                                  ErrorNorm norm) {
  const Eigen::MatrixXd pred = forward_batch(model, x);
  std::vector<Point2> p(static_cast<std::size_t>(x.rows())), t(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    p[static_cast<std::size_t>(i)] = {pred(i, 0), pred(i, 1)};
    t[static_cast<std::size_t>(i)] = {y(i, 0), y(i, 1)};
  }
  return localization_errors(p, t, norm);
}

// Errors of a model on a dataset whose features are already normalized.
inline std::vector<ErrorSample> prediction_errors(const Mlp& model, const Dataset& normalized,
                                                  ErrorNorm norm = ErrorNorm::euclidean) {
  return prediction_errors(model, feature_matrix(normalized), label_matrix(normalized), norm);
}

// ============================================================================
// Training
// ============================================================================

// Redraws the environmental noise on the raw training features every epoch.
struct EpochNoise {
  Dataset raw_train;
  NormStats stats;
  NoiseSpec spec;
};

struct TrainExtras {
  const Dataset* source = nullptr; // retained source data for the combined loss
  const EpochNoise* resample = nullptr;
};

namespace detail {

inline void gather_rows(const Eigen::MatrixXd& src, const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end, Eigen::MatrixXd& dst) {
  dst.resize(static_cast<Eigen::Index>(end - begin), src.cols());
  for (std::size_t i = begin; i < end; ++i) dst.row(static_cast<Eigen::Index>(i - begin)) = src.row(static_cast<Eigen::Index>(order[i]));
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, {epoch});
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

inline std::size_t first_trainable_layer(const FreezeMask& mask, std::size_t layers) {
  std::size_t l = 0;
  while (l < layers && is_frozen(mask, l)) ++l;
  return l;
}

inline bool all_finite(const Gradients& g) {
  for (const auto& w : g.weights)
    if (!w.allFinite()) return false;
  for (const auto& b : g.bias)
    if (!b.allFinite()) return false;
  return true;
}

} // namespace detail

// Runs up to cfg.epochs epochs of shuffled mini-batch updates on `model`.
// Datasets must already be normalized. Metrics are computed after each
// epoch's updates; only the update phase is timed.
inline RunReport train(Mlp& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& cfg,
                       EpochClock& clock, const TrainExtras& extras = {}) {
  validate(cfg);
  if (train_data.empty()) throw ConfigError("train: training set is empty");
  if (val_data.empty()) throw ConfigError("train: validation set is empty");
  if (!cfg.freeze.empty() && cfg.freeze.size() != model.layers.size())
    throw ConfigError("train: freeze mask has " + std::to_string(cfg.freeze.size()) + " entries, model has " +
                      std::to_string(model.layers.size()) + " layers");

  Eigen::MatrixXd x_train = feature_matrix(train_data);
  const Eigen::MatrixXd y_train = label_matrix(train_data);
  const Eigen::MatrixXd x_val = feature_matrix(val_data);
  const Eigen::MatrixXd y_val = label_matrix(val_data);

  const bool use_source = extras.source != nullptr && cfg.loss_weights.lambda_s > 0.0;
  Eigen::MatrixXd x_src, y_src;
  if (use_source) {
    if (extras.source->empty()) throw ConfigError("train: source dataset is empty");
    x_src = feature_matrix(*extras.source);
    y_src = label_matrix(*extras.source);
  }

  auto evaluate = [&](const Eigen::MatrixXd& xt, const Eigen::MatrixXd& yt) {
    const auto et = prediction_errors(model, xt, yt, cfg.error_norm);
    const auto ev = prediction_errors(model, x_val, y_val, cfg.error_norm);
    return EvalMetrics{mean_error(et), mean_error(ev), success_rate(et, cfg.success_threshold_m, cfg.boundary),
                       success_rate(ev, cfg.success_threshold_m, cfg.boundary)};
  };

  RunReport report;
  report.initial = evaluate(x_train, y_train);

  OptimizerState opt = OptimizerState::for_model(model, cfg.optimizer, cfg.learning_rate);
  const std::size_t first_layer = detail::first_trainable_layer(cfg.freeze, model.layers.size());
  const std::size_t n = train_data.size();
  const std::size_t batch = cfg.batch_size;

  std::size_t src_cursor = 0;
  std::vector<std::size_t> src_order;
  std::uint64_t src_pass = 0;
  auto next_source_batch = [&](std::size_t rows, Eigen::MatrixXd& xb, Eigen::MatrixXd& yb) {
    const auto n_src = static_cast<std::size_t>(x_src.rows());
    xb.resize(static_cast<Eigen::Index>(rows), x_src.cols());
    yb.resize(static_cast<Eigen::Index>(rows), 2);
    for (std::size_t i = 0; i < rows; ++i) {
      if (src_cursor == src_order.size()) {
        src_order = detail::epoch_order(n_src, cfg.shuffle_seed ^ 0x5eed5eedULL, src_pass++);
        src_cursor = 0;
      }
      xb.row(static_cast<Eigen::Index>(i)) = x_src.row(static_cast<Eigen::Index>(src_order[src_cursor]));
      yb.row(static_cast<Eigen::Index>(i)) = y_src.row(static_cast<Eigen::Index>(src_order[src_cursor]));
      ++src_cursor;
    }
  };

  double cumulative = 0.0;
  double best_val = 0.0;
  std::size_t stall = 0;
  Eigen::MatrixXd xb, yb, xs, ys;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (extras.resample != nullptr)
      x_train = feature_matrix(apply_norm(
          inject_noise(extras.resample->raw_train, extras.resample->spec, NoiseStream::epoch, epoch),
          extras.resample->stats));

    const double t_start = clock.now_seconds();
    const auto order = detail::epoch_order(n, cfg.shuffle_seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      detail::gather_rows(x_train, order, begin, end, xb);
      detail::gather_rows(y_train, order, begin, end, yb);
      auto target = loss_and_gradients(model, xb, yb, first_layer);
      double loss = target.loss;
      Gradients grads = std::move(target.grads);
      if (use_source) {
        next_source_batch(end - begin, xs, ys);
        auto source = loss_and_gradients(model, xs, ys, first_layer);
        loss = combined_loss(source.loss, loss, cfg.loss_weights);
        grads.scale(cfg.loss_weights.lambda_t);
        grads.add_scaled(source.grads, cfg.loss_weights.lambda_s);
      } else if (cfg.loss_weights.lambda_t != 1.0) {
        loss *= cfg.loss_weights.lambda_t;
        grads.scale(cfg.loss_weights.lambda_t);
      }
      if (!std::isfinite(loss) || !detail::all_finite(grads))
        throw DivergenceError(epoch, "non-finite loss in batch " + std::to_string(batches));
      optimizer_step(model, grads, opt, cfg.freeze);
      loss_sum += loss;
      ++batches;
    }
    const double t_end = clock.now_seconds();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.epoch_time_s = t_end - t_start;
    rec.epoch_energy_j = epoch_energy(cfg.power.cpu_w, cfg.power.gpu_w, rec.epoch_time_s);
    cumulative += rec.epoch_energy_j;
    rec.cum_energy_j = cumulative;
    rec.train_loss = loss_sum / static_cast<double>(batches);

    EvalMetrics m;
    try {
      m = evaluate(x_train, y_train);
    } catch (const DomainError& e) {
      throw DivergenceError(epoch, e.what());
    }
    rec.train_err_m = m.train_err_m;
    rec.val_err_m = m.val_err_m;
    rec.train_sr = m.train_sr;
    rec.val_sr = m.val_sr;
    report.epochs.push_back(rec);

    if (cfg.convergence.enabled) {
      if (epoch == 1) {
        best_val = rec.val_err_m;
      } else {
        const double improvement = best_val > 0.0 ? (best_val - rec.val_err_m) / best_val : 0.0;
        stall = improvement < cfg.convergence.eps ? stall + 1 : 0;
        best_val = std::min(best_val, rec.val_err_m);
        if (stall >= cfg.convergence.patience) {
          report.early_stopped = true;
          break;
        }
      }
    }
  }
  return report;
}

// ============================================================================
// Transfer
// ============================================================================

// Identical-architecture transfer: the target starts exactly at the base
// parameters and fine-tuning supplies the adjustment.
inline Mlp transfer_weights(const Mlp& base, const ModelConfig& target_config) {
  validate(target_config);
  const auto want = layer_shapes(target_config);
  if (want.size() != base.layers.size())
    throw DimensionError("transfer_weights: base has " + std::to_string(base.layers.size()) +
                         " layers, target config has " + std::to_string(want.size()));
  for (std::size_t l = 0; l < want.size(); ++l) {
    if (static_cast<std::size_t>(base.layers[l].fan_in()) != want[l].first ||
        static_cast<std::size_t>(base.layers[l].fan_out()) != want[l].second)
      throw DimensionError("transfer_weights: layer " + std::to_string(l) + " shape differs between base and target");
  }
  Mlp target{target_config, base.layers};
  return target;
}

struct TransferResult {
  Mlp model;
  RunReport report;
  CheckpointMeta meta; // normalization stats inherited from the base
};

// Fine-tunes a copy of the base model. Target data must be normalized with
// the statistics stored in the base checkpoint.
inline TransferResult fine_tune(const Checkpoint& base, const Dataset& target_train, const Dataset& target_val,
                                const TrainConfig& cfg, EpochClock& clock, const TrainExtras& extras = {},
                                const std::string& base_path = "") {
  TransferResult out{transfer_weights(base.model, base.model.config), {}, base.meta};
  out.report = train(out.model, target_train, target_val, cfg, clock, extras);
  out.report.transfer_run = true;
  out.meta.provenance = Provenance{};
  out.meta.provenance.kind = "tl";
  out.meta.provenance.parent_path = base_path;
  out.meta.provenance.parent = std::make_shared<const Provenance>(base.meta.provenance);
  out.report.provenance = out.meta.provenance;
  return out;
}

inline TransferResult fine_tune(const std::string& base_checkpoint_path, const Dataset& target_train,
                                const Dataset& target_val, const TrainConfig& cfg, EpochClock& clock,
                                const TrainExtras& extras = {}) {
  return fine_tune(load_checkpoint(base_checkpoint_path), target_train, target_val, cfg, clock, extras,
                   base_checkpoint_path);
}

} // namespace vlctl
