#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedmtd/rng.hpp"

namespace fedmtd::numkit {

enum class Activation { Identity, Selu, Gelu, Sigmoid, Tanh, Relu, Elu };

const char* to_string(Activation a);
Activation activation_from_string(std::string_view name);

double activate(Activation a, double x);
// Derivative with respect to the pre-activation. `post` is the already
// computed activation output; several derivatives reuse it.
double activate_grad(Activation a, double pre, double post);

struct LayerSpec {
  int input_dim = 0;
  int output_dim = 0;
  Activation activation = Activation::Identity;
};

// Throws ConfigError unless dims are positive and consecutive layers chain.
void validate_chain(std::span<const LayerSpec> specs);

struct MlpModel {
  std::vector<LayerSpec> layers;
  std::vector<std::vector<double>> weights;  // per layer, output_dim x input_dim, row-major
  std::vector<std::vector<double>> biases;   // per layer, output_dim

  int input_dim() const { return layers.empty() ? 0 : layers.front().input_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().output_dim; }
  std::size_t parameter_count() const;
};

struct MlpGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

MlpGradients zero_gradients(const MlpModel& model);

// Activation record from a forward pass, consumed by mlp_backward.
struct ForwardCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // z = W a + b per layer
  std::vector<std::vector<double>> post;  // act(z) per layer
  std::vector<std::vector<double>> dropout_mask;  // empty unless dropout used
};

// Glorot-style uniform init: weights ~ U(-sqrt(6/(fan_in+fan_out)), +...),
// biases zero. Identical seed gives a bit-identical model.
MlpModel mlp_init(std::span<const LayerSpec> specs, std::uint64_t seed);

std::vector<double> mlp_forward(const MlpModel& model, std::span<const double> input,
                                ForwardCache* cache = nullptr);

// Inverted dropout on hidden layer outputs (never the last layer); masks are
// recorded in the cache so the backward pass sees the same network.
std::vector<double> mlp_forward_dropout(const MlpModel& model, std::span<const double> input,
                                        double drop_prob, Rng& rng, ForwardCache& cache);

MlpGradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                          std::span<const double> output_gradient);

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> m_weights, m_biases;  // first moment
  std::vector<std::vector<double>> v_weights, v_biases;  // second moment
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  double l2_coefficient = 0.0;
};

AdamState make_adam(const MlpModel& model, double learning_rate, double l2_coefficient);

// Standard Adam with bias correction. L2 enters the gradient (g + l2*w)
// before the moment update. Throws NumericError on non-finite gradients.
void adam_step(AdamState& state, MlpModel& model, const MlpGradients& grads);

// Deterministic flattening: layer 0 weights row-major, layer 0 biases,
// layer 1 weights, ... Round-trips with unflatten.
struct FlatVector {
  std::vector<double> values;
};

FlatVector flatten(const MlpModel& model);
MlpModel unflatten(const FlatVector& flat, std::span<const LayerSpec> specs);

// RMSE with an epsilon guard so the gradient is defined at zero error:
// loss = sqrt(mean((pred-target)^2) + 1e-12).
double rmse(std::span<const double> pred, std::span<const double> target);
std::vector<double> rmse_gradient(std::span<const double> pred, std::span<const double> target);

}  // namespace fedmtd::numkit
