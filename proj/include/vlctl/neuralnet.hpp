#pragma once

// Dense feed-forward regressor with exact reverse-mode gradients, MSE loss
// and SGD / Adam updates. All arithmetic is binary64.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vlctl/error.hpp"
#include "vlctl/random.hpp"

namespace vlctl {

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "' (expected relu or tanh)");
}

struct ModelConfig {
  std::size_t input_dim = 10;
  std::vector<std::size_t> hidden_sizes = {512, 256, 128, 64, 32};
  std::size_t output_dim = 2;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 1;

  std::size_t layer_count() const noexcept { return hidden_sizes.size() + 1; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (c.output_dim != 2) throw ConfigError("model: output_dim must be 2 (planar position)");
  for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i)
    if (c.hidden_sizes[i] == 0) throw ConfigError("model: hidden layer " + std::to_string(i + 1) + " has size 0");
}

struct DenseLayer {
  Eigen::MatrixXd weights; // fan_in x fan_out
  Eigen::VectorXd bias;    // fan_out

  Eigen::Index fan_in() const noexcept { return weights.rows(); }
  Eigen::Index fan_out() const noexcept { return weights.cols(); }
};

struct Mlp {
  ModelConfig config;
  std::vector<DenseLayer> layers; // hidden layers followed by the linear output layer

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
  }
};

// true = frozen. Empty means every layer is trainable.
using FreezeMask = std::vector<bool>;

inline bool is_frozen(const FreezeMask& mask, std::size_t layer) { return layer < mask.size() && mask[layer]; }

// Layer-wise shapes implied by a config: (fan_in, fan_out).
inline std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t prev = c.input_dim;
  for (auto h : c.hidden_sizes) {
    shapes.emplace_back(prev, h);
    prev = h;
  }
  shapes.emplace_back(prev, c.output_dim);
  return shapes;
}

// He-uniform weights, zero biases.
inline Mlp init_model(const ModelConfig& config) {
  validate(config);
  Mlp mlp{config, {}};
  Rng rng(config.init_seed);
  for (auto [fan_in, fan_out] : layer_shapes(config)) {
    DenseLayer layer;
    const auto rows = static_cast<Eigen::Index>(fan_in);
    const auto cols = static_cast<Eigen::Index>(fan_out);
    layer.weights.resize(rows, cols);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) layer.weights(i, j) = rng.uniform(-bound, bound);
    layer.bias = Eigen::VectorXd::Zero(cols);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

namespace detail {
inline void activate(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::relu)
    z = z.cwiseMax(0.0);
  else
    z = z.array().tanh().matrix();
}

// Derivative expressed through the activated output.
inline Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& activated, Activation a) {
  if (a == Activation::relu) return (activated.array() > 0.0).cast<double>().matrix();
  return (1.0 - activated.array().square()).matrix();
}

inline void check_input(const Mlp& mlp, Eigen::Index cols) {
  if (mlp.layers.empty()) throw DimensionError("forward: model has no layers");
  if (cols != mlp.layers.front().fan_in())
    throw DimensionError("forward: input has " + std::to_string(cols) + " features, model expects " +
                         std::to_string(mlp.layers.front().fan_in()));
}
} // namespace detail

// Rows are samples.
inline Eigen::MatrixXd forward_batch(const Mlp& mlp, const Eigen::MatrixXd& x) {
  detail::check_input(mlp, x.cols());
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const auto& layer = mlp.layers[l];
    Eigen::MatrixXd z = a * layer.weights;
    z.rowwise() += layer.bias.transpose();
    if (l + 1 < mlp.layers.size()) detail::activate(z, mlp.config.activation);
    a = std::move(z);
  }
  return a;
}

inline Eigen::Vector2d forward(const Mlp& mlp, const Eigen::VectorXd& x) {
  Eigen::MatrixXd row = x.transpose();
  Eigen::MatrixXd y = forward_batch(mlp, row);
  return {y(0, 0), y(0, 1)};
}

inline double mse_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw DimensionError("mse_loss: shape mismatch");
  if (predicted.size() == 0) throw DimensionError("mse_loss: empty batch");
  return (predicted - target).squaredNorm() / static_cast<double>(predicted.size());
}

struct LossWeights {
  double lambda_s = 0.0;
  double lambda_t = 1.0;
};

inline void validate(const LossWeights& w) {
  if (!(w.lambda_s >= 0.0) || !(w.lambda_t >= 0.0) || !(w.lambda_s + w.lambda_t > 0.0))
    throw ConfigError("loss_weights: lambdas must be non-negative with a positive sum");
}

inline double combined_loss(double loss_s, double loss_t, const LossWeights& w) {
  return w.lambda_s * loss_s + w.lambda_t * loss_t;
}

// ============================================================================
// Gradients
// ============================================================================

// Layers below `first_layer` carry empty (0x0) tensors.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  std::size_t first_layer = 0;

  void scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : bias) b *= s;
  }

  // this += s * other
  void add_scaled(const Gradients& other, double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (other.weights[l].size() == 0) continue;
      if (weights[l].size() == 0) {
        weights[l] = s * other.weights[l];
        bias[l] = s * other.bias[l];
      } else {
        weights[l] += s * other.weights[l];
        bias[l] += s * other.bias[l];
      }
    }
    first_layer = std::min(first_layer, other.first_layer);
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
  }
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

// Mean-squared-error gradients averaged over the batch. Backpropagation stops
// at `first_layer`, so layers below it (frozen ones) cost nothing.
inline LossAndGradients loss_and_gradients(const Mlp& mlp, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                           std::size_t first_layer = 0) {
  detail::check_input(mlp, x.cols());
  if (x.rows() != y.rows() || y.cols() != mlp.layers.back().fan_out())
    throw DimensionError("backward: label shape does not match inputs/model");
  if (x.rows() == 0) throw DimensionError("backward: empty batch");

  const std::size_t n_layers = mlp.layers.size();
  std::vector<Eigen::MatrixXd> acts; // acts[l] is the input of layer l
  acts.reserve(n_layers + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = acts.back() * mlp.layers[l].weights;
    z.rowwise() += mlp.layers[l].bias.transpose();
    if (l + 1 < n_layers) detail::activate(z, mlp.config.activation);
    acts.push_back(std::move(z));
  }

  LossAndGradients out;
  const Eigen::MatrixXd residual = acts.back() - y;
  out.loss = residual.squaredNorm() / static_cast<double>(residual.size());
  out.grads.weights.resize(n_layers);
  out.grads.bias.resize(n_layers);
  out.grads.first_layer = first_layer;
  if (first_layer >= n_layers) return out;

  // dL/dz for the linear output layer.
  Eigen::MatrixXd delta = residual * (2.0 / static_cast<double>(residual.size()));
  for (std::size_t l = n_layers; l-- > first_layer;) {
    out.grads.weights[l] = acts[l].transpose() * delta;
    out.grads.bias[l] = delta.colwise().sum().transpose();
    if (l == first_layer) break;
    Eigen::MatrixXd upstream = delta * mlp.layers[l].weights.transpose();
    delta = upstream.cwiseProduct(detail::activation_grad(acts[l], mlp.config.activation));
  }
  return out;
}

inline Gradients backward(const Mlp& mlp, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return loss_and_gradients(mlp, x, y).grads;
}

// ============================================================================
// Optimizers
// ============================================================================

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct AdamMoments {
  Eigen::MatrixXd m_w, v_w;
  Eigen::VectorXd m_b, v_b;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<AdamMoments> moments;

  static OptimizerState for_model(const Mlp& mlp, OptimizerKind kind, double learning_rate) {
    OptimizerState s;
    s.kind = kind;
    s.learning_rate = learning_rate;
    if (kind == OptimizerKind::adam) {
      for (const auto& l : mlp.layers) {
        s.moments.push_back({Eigen::MatrixXd::Zero(l.fan_in(), l.fan_out()),
                             Eigen::MatrixXd::Zero(l.fan_in(), l.fan_out()), Eigen::VectorXd::Zero(l.fan_out()),
                             Eigen::VectorXd::Zero(l.fan_out())});
      }
    }
    return s;
  }
};

namespace detail {
inline void check_grad_shapes(const Mlp& mlp, const Gradients& g) {
  if (g.weights.size() != mlp.layers.size() || g.bias.size() != mlp.layers.size())
    throw DimensionError("optimizer: gradient layer count does not match model");
}
} // namespace detail

inline void sgd_step(Mlp& mlp, const Gradients& grads, OptimizerState& state, const FreezeMask& frozen = {}) {
  detail::check_grad_shapes(mlp, grads);
  ++state.step;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    if (is_frozen(frozen, l) || grads.weights[l].size() == 0) continue;
    mlp.layers[l].weights -= state.learning_rate * grads.weights[l];
    mlp.layers[l].bias -= state.learning_rate * grads.bias[l];
  }
}

inline void adam_step(Mlp& mlp, const Gradients& grads, OptimizerState& state, const FreezeMask& frozen = {}) {
  if (state.kind != OptimizerKind::adam) throw ConfigError("adam_step: optimizer state is not Adam");
  detail::check_grad_shapes(mlp, grads);
  if (state.moments.size() != mlp.layers.size()) throw DimensionError("adam_step: moments do not match model");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  const double eps = state.epsilon;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    if (is_frozen(frozen, l) || grads.weights[l].size() == 0) continue;
    auto& mo = state.moments[l];
    update(mlp.layers[l].weights, mo.m_w, mo.v_w, grads.weights[l]);
    update(mlp.layers[l].bias, mo.m_b, mo.v_b, grads.bias[l]);
  }
}

inline void optimizer_step(Mlp& mlp, const Gradients& grads, OptimizerState& state, const FreezeMask& frozen = {}) {
  if (state.kind == OptimizerKind::adam)
    adam_step(mlp, grads, state, frozen);
  else
    sgd_step(mlp, grads, state, frozen);
}

} // namespace vlctl
