#pragma once

// Experiment configuration: one JSON document, validated strictly. Every
// error message starts with the JSON pointer of the offending value.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlctl/channel_sim.hpp"
#include "vlctl/dataset.hpp"
#include "vlctl/error.hpp"
#include "vlctl/neuralnet.hpp"
#include "vlctl/text.hpp"
#include "vlctl/transfer.hpp"

namespace vlctl {

struct TransferSettings {
  std::optional<FreezeMask> freeze; // nullopt = default_freeze_mask
  Convergence convergence{true, 25, 1e-4};
  std::optional<std::size_t> epochs; // nullopt = train.epochs
  std::string base_checkpoint;       // empty = the suite's own base model
};

struct SuiteSettings {
  std::vector<double> nfs = {2.0, 4.0, 8.0};
  std::vector<double> data_fractions = {0.3, 0.5, 0.7, 1.0};
  std::uint64_t subsample_seed = 13;
  std::size_t workers = 1;
  std::string suite_id; // empty = content hash of the config
};

struct FastProfile {
  std::size_t epochs = 150;
  std::vector<std::size_t> hidden_sizes = {64, 64};
  std::optional<double> learning_rate;
};

struct ExperimentConfig {
  std::string layout_path; // empty = built-in production-line layout
  std::string dataset_path; // empty = synthesize
  std::uint64_t dataset_seed = 7;
  ChannelParams channel;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 11;
  ModelConfig model;
  TrainConfig train;
  TransferSettings transfer;
  NoiseSpec noise;
  SuiteSettings suite;
  FastProfile fast;
  std::string output_dir = "runs";
  bool fast_applied = false;
};

namespace detail {

class JsonReader {
public:
  JsonReader(const nlohmann::json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError((key.empty() ? (ptr_.empty() ? std::string("/") : ptr_) : ptr_ + "/" + key) + ": " + what);
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  std::string path(const std::string& key) const { return ptr_ + "/" + key; }

  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }

  void allow_only(std::initializer_list<const char*> keys) const {
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!allowed.count(k)) fail(k, "unknown key");
  }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  std::uint64_t uint(const std::string& key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      fail(key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) fail(key, "expected a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(key + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key, const std::vector<std::size_t>& def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_unsigned() || v[i].get<std::uint64_t>() == 0)
        fail(key + "/" + std::to_string(i), "expected a positive integer");
      out.push_back(v[i].get<std::size_t>());
    }
    return out;
  }

  std::vector<bool> bools(const std::string& key) const {
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of booleans");
    std::vector<bool> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_boolean()) fail(key + "/" + std::to_string(i), "expected a boolean");
      out.push_back(v[i].get<bool>());
    }
    return out;
  }

  JsonReader child(const std::string& key) const { return JsonReader(j_.at(key), ptr_ + "/" + key); }

private:
  const nlohmann::json& j_;
  std::string ptr_;
};

inline Convergence read_convergence(const JsonReader& r, Convergence def) {
  r.allow_only({"enabled", "patience", "eps"});
  Convergence c;
  c.enabled = r.boolean("enabled", def.enabled);
  c.patience = r.uint("patience", def.patience);
  c.eps = r.number("eps", def.eps);
  if (c.patience == 0) r.fail("patience", "must be >= 1");
  if (!(c.eps >= 0.0)) r.fail("eps", "must be non-negative");
  return c;
}

} // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
  using detail::JsonReader;
  ExperimentConfig cfg;
  const JsonReader root(doc, "");
  root.allow_only({"$schema", "layout", "dataset", "channel", "split", "model", "train", "transfer", "noise", "suite",
                   "fast", "output_dir"});

  cfg.layout_path = root.string("layout", "");
  cfg.output_dir = root.string("output_dir", cfg.output_dir);

  if (root.has("dataset")) {
    auto r = root.child("dataset");
    r.allow_only({"path", "seed"});
    cfg.dataset_path = r.string("path", "");
    cfg.dataset_seed = r.uint("seed", cfg.dataset_seed);
  }

  if (root.has("channel")) {
    auto r = root.child("channel");
    r.allow_only({"semi_angle_deg", "pd_area_m2", "fov_deg", "tx_power_dbm", "shadowing_sigma_db",
                  "measurement_noise_sigma_db", "noise_floor_dbm"});
    auto& c = cfg.channel;
    c.semi_angle_deg = r.number("semi_angle_deg", c.semi_angle_deg);
    c.pd_area = r.number("pd_area_m2", c.pd_area);
    c.fov_deg = r.number("fov_deg", c.fov_deg);
    c.tx_power_dbm = r.number("tx_power_dbm", c.tx_power_dbm);
    c.shadowing_sigma_db = r.number("shadowing_sigma_db", c.shadowing_sigma_db);
    c.measurement_noise_sigma_db = r.number("measurement_noise_sigma_db", c.measurement_noise_sigma_db);
    c.noise_floor_dbm = r.number("noise_floor_dbm", c.noise_floor_dbm);
    if (!(c.semi_angle_deg > 0.0 && c.semi_angle_deg < 90.0)) r.fail("semi_angle_deg", "must lie in (0, 90)");
    if (!(c.pd_area > 0.0)) r.fail("pd_area_m2", "must be positive");
    if (!(c.fov_deg > 0.0 && c.fov_deg <= 90.0)) r.fail("fov_deg", "must lie in (0, 90]");
    if (!(c.shadowing_sigma_db >= 0.0)) r.fail("shadowing_sigma_db", "must be non-negative");
    if (!(c.measurement_noise_sigma_db >= 0.0)) r.fail("measurement_noise_sigma_db", "must be non-negative");
  }

  if (root.has("split")) {
    auto r = root.child("split");
    r.allow_only({"train_fraction", "seed"});
    cfg.train_fraction = r.number("train_fraction", cfg.train_fraction);
    cfg.split_seed = r.uint("seed", cfg.split_seed);
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) r.fail("train_fraction", "must lie in (0, 1)");
  }

  if (root.has("model")) {
    auto r = root.child("model");
    r.allow_only({"input_dim", "hidden_sizes", "activation", "init_seed"});
    auto& m = cfg.model;
    m.input_dim = r.uint("input_dim", m.input_dim);
    if (m.input_dim == 0) r.fail("input_dim", "must be positive");
    m.hidden_sizes = r.sizes("hidden_sizes", m.hidden_sizes);
    try {
      m.activation = activation_from_string(r.string("activation", to_string(m.activation)));
    } catch (const ConfigError& e) {
      r.fail("activation", e.what());
    }
    m.init_seed = r.uint("init_seed", m.init_seed);
  }

  if (root.has("train")) {
    auto r = root.child("train");
    r.allow_only({"optimizer", "learning_rate", "batch_size", "epochs", "freeze", "loss_weights",
                  "success_threshold_m", "success_boundary", "error_norm", "power", "convergence", "shuffle_seed"});
    auto& t = cfg.train;
    try {
      t.optimizer = optimizer_from_string(r.string("optimizer", to_string(t.optimizer)));
    } catch (const ConfigError& e) {
      r.fail("optimizer", e.what());
    }
    t.learning_rate = r.number("learning_rate", t.learning_rate);
    if (!(t.learning_rate >= 0.0)) r.fail("learning_rate", "must be non-negative");
    t.batch_size = r.uint("batch_size", t.batch_size);
    if (t.batch_size < 1) r.fail("batch_size", "must be >= 1");
    t.epochs = r.uint("epochs", t.epochs);
    if (t.epochs < 1) r.fail("epochs", "must be >= 1");
    if (r.has("freeze")) t.freeze = r.bools("freeze");
    if (r.has("loss_weights")) {
      auto lw = r.child("loss_weights");
      lw.allow_only({"lambda_s", "lambda_t"});
      t.loss_weights.lambda_s = lw.number("lambda_s", t.loss_weights.lambda_s);
      t.loss_weights.lambda_t = lw.number("lambda_t", t.loss_weights.lambda_t);
      try {
        validate(t.loss_weights);
      } catch (const ConfigError& e) {
        lw.fail("", e.what());
      }
    }
    t.success_threshold_m = r.number("success_threshold_m", t.success_threshold_m);
    if (!(t.success_threshold_m > 0.0)) r.fail("success_threshold_m", "must be positive");
    try {
      t.boundary = success_boundary_from_string(r.string("success_boundary", to_string(t.boundary)));
    } catch (const ConfigError& e) {
      r.fail("success_boundary", e.what());
    }
    try {
      t.error_norm = error_norm_from_string(r.string("error_norm", to_string(t.error_norm)));
    } catch (const ConfigError& e) {
      r.fail("error_norm", e.what());
    }
    if (r.has("power")) {
      auto p = r.child("power");
      p.allow_only({"cpu_w", "gpu_w"});
      t.power.cpu_w = p.number("cpu_w", t.power.cpu_w);
      t.power.gpu_w = p.number("gpu_w", t.power.gpu_w);
      if (t.power.cpu_w < 0.0) p.fail("cpu_w", "must be non-negative");
      if (t.power.gpu_w < 0.0) p.fail("gpu_w", "must be non-negative");
    }
    if (r.has("convergence")) t.convergence = detail::read_convergence(r.child("convergence"), t.convergence);
    t.shuffle_seed = r.uint("shuffle_seed", t.shuffle_seed);
  }

  if (root.has("transfer")) {
    auto r = root.child("transfer");
    r.allow_only({"freeze", "convergence", "epochs", "base_checkpoint"});
    if (r.has("freeze")) cfg.transfer.freeze = r.bools("freeze");
    if (r.has("convergence"))
      cfg.transfer.convergence = detail::read_convergence(r.child("convergence"), cfg.transfer.convergence);
    if (r.has("epochs")) {
      cfg.transfer.epochs = r.uint("epochs", 1);
      if (*cfg.transfer.epochs < 1) r.fail("epochs", "must be >= 1");
    }
    cfg.transfer.base_checkpoint = r.string("base_checkpoint", "");
  }

  if (root.has("noise")) {
    auto r = root.child("noise");
    r.allow_only({"nf", "sigma_base_db", "resample_per_epoch", "apply_to_validation", "seed"});
    auto& n = cfg.noise;
    n.nf = r.number("nf", n.nf);
    n.sigma_base_db = r.number("sigma_base_db", n.sigma_base_db);
    n.resample_per_epoch = r.boolean("resample_per_epoch", n.resample_per_epoch);
    n.apply_to_validation = r.boolean("apply_to_validation", n.apply_to_validation);
    n.seed = r.uint("seed", n.seed);
    if (!(n.nf >= 0.0)) r.fail("nf", "must be non-negative");
    if (!(n.sigma_base_db > 0.0)) r.fail("sigma_base_db", "must be positive");
  }

  if (root.has("suite")) {
    auto r = root.child("suite");
    r.allow_only({"nfs", "data_fractions", "subsample_seed", "workers", "suite_id"});
    auto& s = cfg.suite;
    s.nfs = r.numbers("nfs", s.nfs);
    if (s.nfs.empty()) r.fail("nfs", "must not be empty");
    for (std::size_t i = 0; i < s.nfs.size(); ++i)
      if (!(s.nfs[i] > 0.0)) r.fail("nfs/" + std::to_string(i), "must be positive");
    s.data_fractions = r.numbers("data_fractions", s.data_fractions);
    for (std::size_t i = 0; i < s.data_fractions.size(); ++i)
      if (!(s.data_fractions[i] > 0.0 && s.data_fractions[i] <= 1.0))
        r.fail("data_fractions/" + std::to_string(i), "must lie in (0, 1]");
    s.subsample_seed = r.uint("subsample_seed", s.subsample_seed);
    s.workers = r.uint("workers", s.workers);
    if (s.workers < 1) r.fail("workers", "must be >= 1");
    s.suite_id = r.string("suite_id", "");
  }

  if (root.has("fast")) {
    auto r = root.child("fast");
    r.allow_only({"epochs", "hidden_sizes", "learning_rate"});
    cfg.fast.epochs = r.uint("epochs", cfg.fast.epochs);
    if (cfg.fast.epochs < 1) r.fail("epochs", "must be >= 1");
    cfg.fast.hidden_sizes = r.sizes("hidden_sizes", cfg.fast.hidden_sizes);
    if (r.has("learning_rate")) cfg.fast.learning_rate = r.number("learning_rate", 0.0);
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_experiment_config(doc);
}

// Shrinks the run to the CI profile: fewer epochs and a two-layer network.
inline void apply_fast_profile(ExperimentConfig& cfg) {
  if (cfg.fast_applied) return;
  cfg.train.epochs = cfg.fast.epochs;
  cfg.model.hidden_sizes = cfg.fast.hidden_sizes;
  if (cfg.fast.learning_rate) cfg.train.learning_rate = *cfg.fast.learning_rate;
  if (cfg.transfer.epochs) cfg.transfer.epochs = std::min(*cfg.transfer.epochs, cfg.fast.epochs);
  cfg.fast_applied = true;
}

// Training settings for fine-tuning runs.
inline TrainConfig transfer_train_config(const ExperimentConfig& cfg) {
  TrainConfig t = cfg.train;
  t.freeze = cfg.transfer.freeze ? *cfg.transfer.freeze : default_freeze_mask(cfg.model);
  t.convergence = cfg.transfer.convergence;
  if (cfg.transfer.epochs) t.epochs = *cfg.transfer.epochs;
  if (t.freeze.size() != cfg.model.layer_count())
    throw ConfigError("/transfer/freeze: has " + std::to_string(t.freeze.size()) + " entries, model has " +
                      std::to_string(cfg.model.layer_count()) + " layers");
  return t;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["layout"] = cfg.layout_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(cfg.layout_path);
  j["dataset"] = {{"path", cfg.dataset_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(cfg.dataset_path)},
                  {"seed", cfg.dataset_seed}};
  j["channel"] = to_json(cfg.channel);
  j["split"] = {{"train_fraction", cfg.train_fraction}, {"seed", cfg.split_seed}};
  j["model"] = to_json(cfg.model);
  j["train"] = to_json(cfg.train);
  j["transfer"] = {{"freeze", cfg.transfer.freeze ? nlohmann::json(*cfg.transfer.freeze) : nlohmann::json(nullptr)},
                   {"convergence",
                    {{"enabled", cfg.transfer.convergence.enabled},
                     {"patience", cfg.transfer.convergence.patience},
                     {"eps", cfg.transfer.convergence.eps}}},
                   {"epochs", cfg.transfer.epochs ? nlohmann::json(*cfg.transfer.epochs) : nlohmann::json(nullptr)},
                   {"base_checkpoint", cfg.transfer.base_checkpoint.empty()
                                           ? nlohmann::json(nullptr)
                                           : nlohmann::json(cfg.transfer.base_checkpoint)}};
  j["noise"] = {{"nf", cfg.noise.nf},
                {"sigma_base_db", cfg.noise.sigma_base_db},
                {"resample_per_epoch", cfg.noise.resample_per_epoch},
                {"apply_to_validation", cfg.noise.apply_to_validation},
                {"seed", cfg.noise.seed}};
  j["suite"] = {{"nfs", cfg.suite.nfs},
                {"data_fractions", cfg.suite.data_fractions},
                {"subsample_seed", cfg.suite.subsample_seed}};
  j["fast_profile"] = cfg.fast_applied;
  return j;
}

} // namespace vlctl
