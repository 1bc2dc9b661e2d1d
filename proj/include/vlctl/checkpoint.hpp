#pragma once

// Versioned checkpoint files: a JSON envelope carrying the model config,
// normalization statistics and provenance, with every weight/bias tensor
// stored as base64-encoded little-endian binary64.

#include <array>
#include <bit>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlctl/dataset.hpp"
#include "vlctl/error.hpp"
#include "vlctl/neuralnet.hpp"
#include "vlctl/text.hpp"

namespace vlctl {

inline constexpr int kCheckpointSchemaVersion = 1;

namespace base64 {

inline constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t w = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    out += kAlphabet[(w >> 18) & 63];
    out += kAlphabet[(w >> 12) & 63];
    out += kAlphabet[(w >> 6) & 63];
    out += kAlphabet[w & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t w = std::uint32_t{bytes[i]} << 16;
    out += kAlphabet[(w >> 18) & 63];
    out += kAlphabet[(w >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t w = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8);
    out += kAlphabet[(w >> 18) & 63];
    out += kAlphabet[(w >> 12) & 63];
    out += kAlphabet[(w >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::optional<std::vector<std::uint8_t>> decode(std::string_view s) {
  if (s.size() % 4 != 0) return std::nullopt;
  std::array<int, 256> lut;
  lut.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) lut[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
  std::vector<std::uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = s[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != s.size() || k < 2) return std::nullopt;
        v[k] = 0;
        ++pad;
      } else {
        if (pad > 0) return std::nullopt;
        v[k] = lut[static_cast<unsigned char>(c)];
        if (v[k] < 0) return std::nullopt;
      }
    }
    const std::uint32_t w = (std::uint32_t(v[0]) << 18) | (std::uint32_t(v[1]) << 12) | (std::uint32_t(v[2]) << 6) |
                            std::uint32_t(v[3]);
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

} // namespace base64

namespace detail {

inline std::string encode_doubles(const double* data, std::size_t n) {
  std::vector<std::uint8_t> bytes(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64::encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view s, std::size_t expected, const std::string& what) {
  auto bytes = base64::decode(s);
  if (!bytes) throw CheckpointCorruptError("checkpoint: " + what + " is not valid base64");
  if (bytes->size() != expected * 8)
    throw CheckpointCorruptError("checkpoint: " + what + " holds " + std::to_string(bytes->size()) +
                                 " bytes, expected " + std::to_string(expected * 8));
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{(*bytes)[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

} // namespace detail

// Lineage of a model. `parent` chains back to the root base model.
struct Provenance {
  std::string run_id;
  std::string kind; // base, ev or tl
  double nf = 0.0;
  double data_fraction = 1.0;
  std::string parent_path;
  std::string note;
  std::shared_ptr<const Provenance> parent;
};

inline nlohmann::json to_json(const Provenance& p) {
  nlohmann::json j{{"run_id", p.run_id}, {"kind", p.kind},           {"nf", p.nf},
                   {"data_fraction", p.data_fraction}, {"parent_path", p.parent_path}, {"note", p.note}};
  j["parent"] = p.parent ? to_json(*p.parent) : nlohmann::json(nullptr);
  return j;
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw CheckpointCorruptError("checkpoint: provenance must be an object");
  Provenance p;
  p.run_id = j.value("run_id", "");
  p.kind = j.value("kind", "");
  p.nf = j.value("nf", 0.0);
  p.data_fraction = j.value("data_fraction", 1.0);
  p.parent_path = j.value("parent_path", "");
  p.note = j.value("note", "");
  if (j.contains("parent") && !j["parent"].is_null())
    p.parent = std::make_shared<const Provenance>(provenance_from_json(j["parent"]));
  return p;
}

// Human-readable label, e.g. "TL as (EV Model NF = 2)" for a TL model whose
// parent was an EV model.
inline std::string model_label(const Provenance& p) {
  auto nf = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
  };
  if (p.kind == "base") return "Base Model";
  if (p.kind == "ev") return "EV Model NF = " + nf(p.nf);
  if (p.kind == "tl") {
    if (!p.parent) return "TL";
    if (p.parent->kind == "base") return "TL as Base Model";
    if (p.parent->kind == "ev") return "TL as (EV Model NF = " + nf(p.parent->nf) + ")";
    return "TL as (" + model_label(*p.parent) + ")";
  }
  return p.kind;
}

// Oldest ancestor last.
inline std::vector<std::string> lineage(const Provenance& p) {
  std::vector<std::string> out;
  for (const Provenance* cur = &p; cur != nullptr; cur = cur->parent.get())
    out.push_back(cur->run_id.empty() ? cur->kind : cur->run_id);
  return out;
}

struct CheckpointMeta {
  int schema_version = kCheckpointSchemaVersion;
  NormStats norm_stats;
  Provenance provenance;
};

struct Checkpoint {
  Mlp model;
  CheckpointMeta meta;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_sizes", c.hidden_sizes},
          {"output_dim", c.output_dim},
          {"activation", to_string(c.activation)},
          {"init_seed", c.init_seed}};
}

inline std::string checkpoint_to_string(const Mlp& mlp, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["schema_version"] = meta.schema_version;
  j["model_config"] = to_json(mlp.config);
  j["norm_stats"] = {{"mean", meta.norm_stats.mean}, {"std", meta.norm_stats.std}};
  j["provenance"] = to_json(meta.provenance);
  j["layers"] = nlohmann::json::array();
  for (const auto& l : mlp.layers) {
    // Row-major fan_in x fan_out.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = l.weights;
    j["layers"].push_back({{"fan_in", l.fan_in()},
                           {"fan_out", l.fan_out()},
                           {"weights", detail::encode_doubles(w.data(), static_cast<std::size_t>(w.size()))},
                           {"bias", detail::encode_doubles(l.bias.data(), static_cast<std::size_t>(l.bias.size()))}});
  }
  return j.dump(1) + "\n";
}

inline void save_checkpoint(const Mlp& mlp, const CheckpointMeta& meta, const std::string& path) {
  text::write_file(path, checkpoint_to_string(mlp, meta));
}

inline Checkpoint checkpoint_from_string(const std::string& contents) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(contents);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointCorruptError(std::string("checkpoint: unreadable JSON envelope: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw CheckpointCorruptError("checkpoint: missing schema_version");
  const int version = j["schema_version"].get<int>();
  if (version != kCheckpointSchemaVersion)
    throw CheckpointVersionError("checkpoint: schema_version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointSchemaVersion) + ")");

  Checkpoint ck;
  ck.meta.schema_version = version;
  try {
    const auto& mc = j.at("model_config");
    ck.model.config.input_dim = mc.at("input_dim").get<std::size_t>();
    ck.model.config.hidden_sizes = mc.at("hidden_sizes").get<std::vector<std::size_t>>();
    ck.model.config.output_dim = mc.at("output_dim").get<std::size_t>();
    ck.model.config.activation = activation_from_string(mc.at("activation").get<std::string>());
    ck.model.config.init_seed = mc.at("init_seed").get<std::uint64_t>();
    ck.meta.norm_stats.mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
    ck.meta.norm_stats.std = j.at("norm_stats").at("std").get<std::vector<double>>();
    ck.meta.provenance = provenance_from_json(j.at("provenance"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointCorruptError(std::string("checkpoint: malformed envelope: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointCorruptError(std::string("checkpoint: ") + e.what());
  }

  const auto shapes = layer_shapes(ck.model.config);
  if (!j.contains("layers") || !j["layers"].is_array()) throw CheckpointCorruptError("checkpoint: missing layers");
  const auto& layers = j["layers"];
  if (layers.size() != shapes.size())
    throw CheckpointShapeError("checkpoint: " + std::to_string(layers.size()) + " layer payloads for a config with " +
                               std::to_string(shapes.size()) + " layers");
  if (ck.meta.norm_stats.mean.size() != ck.model.config.input_dim ||
      ck.meta.norm_stats.std.size() != ck.model.config.input_dim)
    throw CheckpointShapeError("checkpoint: normalization statistics do not match input_dim");

  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& lj = layers[l];
    std::size_t fan_in = 0, fan_out = 0;
    std::string w64, b64;
    try {
      fan_in = lj.at("fan_in").get<std::size_t>();
      fan_out = lj.at("fan_out").get<std::size_t>();
      w64 = lj.at("weights").get<std::string>();
      b64 = lj.at("bias").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointCorruptError("checkpoint: layer " + std::to_string(l) + ": " + e.what());
    }
    if (fan_in != shapes[l].first || fan_out != shapes[l].second)
      throw CheckpointShapeError("checkpoint: layer " + std::to_string(l) + " is " + std::to_string(fan_in) + "x" +
                                 std::to_string(fan_out) + ", config implies " + std::to_string(shapes[l].first) +
                                 "x" + std::to_string(shapes[l].second));
    const auto w = detail::decode_doubles(w64, fan_in * fan_out, "layer " + std::to_string(l) + " weights");
    const auto b = detail::decode_doubles(b64, fan_out, "layer " + std::to_string(l) + " bias");
    DenseLayer layer;
    layer.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        w.data(), static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(fan_out));
    ck.model.layers.push_back(std::move(layer));
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::string contents;
  try {
    contents = text::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return checkpoint_from_string(contents);
}

// Fails with CheckpointShapeError when the stored architecture differs from `expected`.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  auto ck = load_checkpoint(path);
  const auto have = layer_shapes(ck.model.config);
  const auto want = layer_shapes(expected);
  if (have != want)
    throw CheckpointShapeError("checkpoint '" + path + "' has " + std::to_string(ck.model.config.hidden_sizes.size()) +
                               " hidden layers / different widths than the requested config (" +
                               std::to_string(expected.hidden_sizes.size()) + " hidden layers)");
  return ck;
}

} // namespace vlctl
