#include "fedmtd/numkit.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "fedmtd/errors.hpp"

namespace fedmtd::numkit {

namespace {
constexpr double kSeluLambda = 1.0507009873554805;
constexpr double kSeluAlpha = 1.6732632423543772;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kRmseEps = 1e-12;
}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Selu: return "selu";
    case Activation::Gelu: return "gelu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Elu: return "elu";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "selu") return Activation::Selu;
  if (name == "gelu") return Activation::Gelu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "elu") return Activation::Elu;
  throw ConfigError("unknown activation: " + std::string(name));
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::Selu:
      return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
    case Activation::Gelu: {
      const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
      return 0.5 * x * (1.0 + t);
    }
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Relu:
      return x > 0.0 ? x : 0.0;
    case Activation::Elu:
      return x > 0.0 ? x : std::exp(x) - 1.0;
  }
  return x;
}

double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Identity:
      return 1.0;
    case Activation::Selu:
      return pre > 0.0 ? kSeluLambda : post + kSeluLambda * kSeluAlpha;
    case Activation::Gelu: {
      const double u = kGeluC * (pre + 0.044715 * pre * pre * pre);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * pre * pre);
      return 0.5 * (1.0 + t) + 0.5 * pre * (1.0 - t * t) * du;
    }
    case Activation::Sigmoid:
      return post * (1.0 - post);
    case Activation::Tanh:
      return 1.0 - post * post;
    case Activation::Relu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Elu:
      return pre > 0.0 ? 1.0 : post + 1.0;
  }
  return 1.0;
}

void validate_chain(std::span<const LayerSpec> specs) {
  if (specs.empty()) throw ConfigError("layer spec list is empty");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].input_dim <= 0 || specs[i].output_dim <= 0) {
      throw ConfigError("layer " + std::to_string(i) + " has non-positive dimension");
    }
    if (i + 1 < specs.size() && specs[i].output_dim != specs[i + 1].input_dim) {
      throw ConfigError("layer chain mismatch at " + std::to_string(i) + ": " +
                        std::to_string(specs[i].output_dim) + " != " +
                        std::to_string(specs[i + 1].input_dim));
    }
  }
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& spec : layers) {
    n += static_cast<std::size_t>(spec.input_dim) * spec.output_dim + spec.output_dim;
  }
  return n;
}

MlpGradients zero_gradients(const MlpModel& model) {
  MlpGradients g;
  g.weights.reserve(model.layers.size());
  g.biases.reserve(model.layers.size());
  for (const auto& spec : model.layers) {
    g.weights.emplace_back(static_cast<std::size_t>(spec.input_dim) * spec.output_dim, 0.0);
    g.biases.emplace_back(spec.output_dim, 0.0);
  }
  return g;
}

MlpModel mlp_init(std::span<const LayerSpec> specs, std::uint64_t seed) {
  validate_chain(specs);
  MlpModel model;
  model.layers.assign(specs.begin(), specs.end());
  Rng rng(seed);
  for (const auto& spec : specs) {
    const double limit = std::sqrt(6.0 / (spec.input_dim + spec.output_dim));
    std::vector<double> w(static_cast<std::size_t>(spec.input_dim) * spec.output_dim);
    for (auto& v : w) v = rng.uniform(-limit, limit);
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(spec.output_dim, 0.0);
  }
  return model;
}

namespace {

void forward_impl(const MlpModel& model, std::span<const double> input, ForwardCache* cache,
                  double drop_prob, Rng* rng, std::vector<double>& out) {
  if (static_cast<int>(input.size()) != model.input_dim()) {
    throw ShapeError("forward input length " + std::to_string(input.size()) +
                     " != model input dim " + std::to_string(model.input_dim()));
  }
  if (cache != nullptr) {
    cache->input.assign(input.begin(), input.end());
    cache->pre.clear();
    cache->post.clear();
    cache->dropout_mask.clear();
  }
  std::vector<double> act(input.begin(), input.end());
  const std::size_t n_layers = model.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& spec = model.layers[l];
    const auto& w = model.weights[l];
    const auto& b = model.biases[l];
    std::vector<double> z(spec.output_dim);
    for (int o = 0; o < spec.output_dim; ++o) {
      double sum = b[o];
      const double* row = w.data() + static_cast<std::size_t>(o) * spec.input_dim;
      for (int i = 0; i < spec.input_dim; ++i) sum += row[i] * act[i];
      z[o] = sum;
    }
    std::vector<double> a(spec.output_dim);
    for (int o = 0; o < spec.output_dim; ++o) a[o] = activate(spec.activation, z[o]);
    std::vector<double> mask;
    if (drop_prob > 0.0 && l + 1 < n_layers) {
      mask.resize(spec.output_dim);
      const double keep = 1.0 - drop_prob;
      for (int o = 0; o < spec.output_dim; ++o) {
        const bool kept = rng->uniform_unit() >= drop_prob;
        mask[o] = kept ? 1.0 / keep : 0.0;
        a[o] *= mask[o];
      }
    }
    if (cache != nullptr) {
      cache->pre.push_back(z);
      cache->post.push_back(a);
      if (drop_prob > 0.0) cache->dropout_mask.push_back(std::move(mask));
    }
    act = std::move(a);
  }
  out = std::move(act);
}

}  // namespace

std::vector<double> mlp_forward(const MlpModel& model, std::span<const double> input,
                                ForwardCache* cache) {
  std::vector<double> out;
  forward_impl(model, input, cache, 0.0, nullptr, out);
  return out;
}

std::vector<double> mlp_forward_dropout(const MlpModel& model, std::span<const double> input,
                                        double drop_prob, Rng& rng, ForwardCache& cache) {
  if (drop_prob < 0.0 || drop_prob >= 1.0) throw ConfigError("dropout must be in [0,1)");
  std::vector<double> out;
  forward_impl(model, input, &cache, drop_prob, &rng, out);
  return out;
}

MlpGradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                          std::span<const double> output_gradient) {
  const std::size_t n_layers = model.layers.size();
  if (cache.pre.size() != n_layers || cache.post.size() != n_layers ||
      static_cast<int>(cache.input.size()) != model.input_dim()) {
    throw UsageError("forward cache does not match model");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (static_cast<int>(cache.pre[l].size()) != model.layers[l].output_dim) {
      throw UsageError("forward cache layer " + std::to_string(l) + " shape mismatch");
    }
  }
  if (static_cast<int>(output_gradient.size()) != model.output_dim()) {
    throw ShapeError("output gradient length mismatch");
  }

  MlpGradients grads = zero_gradients(model);
  std::vector<double> da(output_gradient.begin(), output_gradient.end());
  const bool dropped = !cache.dropout_mask.empty();
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& spec = model.layers[li];
    const auto& prev = li == 0 ? cache.input : cache.post[li - 1];
    std::vector<double> dz(spec.output_dim);
    for (int o = 0; o < spec.output_dim; ++o) {
      double g = da[o];
      if (dropped && li + 1 < n_layers) g *= cache.dropout_mask[li][o];
      // post in the cache already includes the dropout scaling; recompute the
      // raw activation value for the derivative.
      const double raw_post =
          (dropped && li + 1 < n_layers) ? activate(spec.activation, cache.pre[li][o])
                                         : cache.post[li][o];
      dz[o] = g * activate_grad(spec.activation, cache.pre[li][o], raw_post);
    }
    auto& gw = grads.weights[li];
    for (int o = 0; o < spec.output_dim; ++o) {
      double* row = gw.data() + static_cast<std::size_t>(o) * spec.input_dim;
      for (int i = 0; i < spec.input_dim; ++i) row[i] = dz[o] * prev[i];
      grads.biases[li][o] = dz[o];
    }
    if (li > 0) {
      std::vector<double> dprev(spec.input_dim, 0.0);
      const auto& w = model.weights[li];
      for (int o = 0; o < spec.output_dim; ++o) {
        const double* row = w.data() + static_cast<std::size_t>(o) * spec.input_dim;
        for (int i = 0; i < spec.input_dim; ++i) dprev[i] += row[i] * dz[o];
      }
      da = std::move(dprev);
    }
  }
  return grads;
}

AdamState make_adam(const MlpModel& model, double learning_rate, double l2_coefficient) {
  if (learning_rate <= 0.0) throw ConfigError("learning rate must be > 0");
  if (l2_coefficient < 0.0) throw ConfigError("l2 coefficient must be >= 0");
  AdamState s;
  s.learning_rate = learning_rate;
  s.l2_coefficient = l2_coefficient;
  for (const auto& spec : model.layers) {
    const std::size_t wn = static_cast<std::size_t>(spec.input_dim) * spec.output_dim;
    s.m_weights.emplace_back(wn, 0.0);
    s.v_weights.emplace_back(wn, 0.0);
    s.m_biases.emplace_back(spec.output_dim, 0.0);
    s.v_biases.emplace_back(spec.output_dim, 0.0);
  }
  return s;
}

namespace {

void adam_update_array(std::vector<double>& params, const std::vector<double>& grads,
                       std::vector<double>& m, std::vector<double>& v, const AdamState& s,
                       double bc1, double bc2, bool apply_l2) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    if (!std::isfinite(g)) throw NumericError("non-finite gradient in adam_step");
    if (apply_l2) g += s.l2_coefficient * params[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.eps_hat);
  }
}

}  // namespace

void adam_step(AdamState& state, MlpModel& model, const MlpGradients& grads) {
  if (state.m_weights.size() != model.layers.size() ||
      grads.weights.size() != model.layers.size()) {
    throw ShapeError("adam state/gradients do not match model");
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const bool l2 = state.l2_coefficient > 0.0;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (grads.weights[li].size() != model.weights[li].size() ||
        grads.biases[li].size() != model.biases[li].size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(li));
    }
    adam_update_array(model.weights[li], grads.weights[li], state.m_weights[li],
                      state.v_weights[li], state, bc1, bc2, l2);
    adam_update_array(model.biases[li], grads.biases[li], state.m_biases[li],
                      state.v_biases[li], state, bc1, bc2, l2);
  }
}

FlatVector flatten(const MlpModel& model) {
  FlatVector flat;
  flat.values.reserve(model.parameter_count());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    flat.values.insert(flat.values.end(), model.weights[li].begin(), model.weights[li].end());
    flat.values.insert(flat.values.end(), model.biases[li].begin(), model.biases[li].end());
  }
  return flat;
}

MlpModel unflatten(const FlatVector& flat, std::span<const LayerSpec> specs) {
  validate_chain(specs);
  MlpModel model;
  model.layers.assign(specs.begin(), specs.end());
  std::size_t pos = 0;
  for (const auto& spec : specs) {
    const std::size_t wn = static_cast<std::size_t>(spec.input_dim) * spec.output_dim;
    if (pos + wn + spec.output_dim > flat.values.size()) {
      throw ShapeError("flat vector too short for specs");
    }
    model.weights.emplace_back(flat.values.begin() + pos, flat.values.begin() + pos + wn);
    pos += wn;
    model.biases.emplace_back(flat.values.begin() + pos,
                              flat.values.begin() + pos + spec.output_dim);
    pos += spec.output_dim;
  }
  if (pos != flat.values.size()) {
    throw ShapeError("flat vector length " + std::to_string(flat.values.size()) +
                     " != expected " + std::to_string(pos));
  }
  return model;
}

double rmse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("rmse length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pred.size()) + kRmseEps);
}

std::vector<double> rmse_gradient(std::span<const double> pred, std::span<const double> target) {
  const double loss = rmse(pred, target);
  const double n = static_cast<double>(pred.size());
  std::vector<double> g(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g[i] = (pred[i] - target[i]) / (n * loss);
  }
  return g;
}

}  // namespace fedmtd::numkit
