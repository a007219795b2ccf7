#include "fedmtd/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"
#include "fedmtd/rng.hpp"
#include "fedmtd/serialize.hpp"

namespace fedmtd::anomaly {

namespace {
constexpr double kZscoreCut = 3.0;
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;
}  // namespace

void AdHyper::validate() const {
  if (encoder_dims.empty()) throw ConfigError("ad: encoder_dims must be non-empty");
  for (std::size_t i = 0; i < encoder_dims.size(); ++i) {
    if (encoder_dims[i] <= 0) throw ConfigError("ad: encoder dims must be > 0");
    if (i > 0 && encoder_dims[i] >= encoder_dims[i - 1]) {
      throw ConfigError("ad: encoder_dims must be strictly decreasing");
    }
  }
  if (learning_rate <= 0.0) throw ConfigError("ad: learning_rate must be > 0");
  if (l2 < 0.0) throw ConfigError("ad: l2 must be >= 0");
  if (batch_size < 1) throw ConfigError("ad: batch_size must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("ad: early_stop_patience must be >= 1");
  if (n_std <= 0.0) throw ConfigError("ad: n_std must be > 0");
  if (max_epochs < 1) throw ConfigError("ad: max_epochs must be >= 1");
}

std::vector<double> apply_stats(const FeatureStats& stats, std::span<const double> values) {
  if (values.size() != stats.fmin.size()) {
    throw ShapeError("apply_stats: feature count mismatch");
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double range = stats.fmax[i] - stats.fmin[i];
    out[i] = range > 0.0 ? (values[i] - stats.fmin[i]) / range : 0.0;
  }
  return out;
}

Preprocessed preprocess(const std::vector<env::Fingerprint>& samples) {
  if (samples.empty()) throw ConfigError("preprocess: empty sample set");
  const std::size_t dim = samples.front().values.size();

  // Z-score outlier filter over the raw set.
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += s.values[i];
  }
  for (auto& m : mean) m /= static_cast<double>(samples.size());
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = s.values[i] - mean[i];
      var[i] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(samples.size());

  std::vector<const env::Fingerprint*> kept;
  kept.reserve(samples.size());
  for (const auto& s : samples) {
    bool ok = true;
    for (std::size_t i = 0; i < dim && ok; ++i) {
      const double sd = std::sqrt(var[i]);
      if (sd > 0.0 && std::abs(s.values[i] - mean[i]) / sd > kZscoreCut) ok = false;
    }
    if (ok) kept.push_back(&s);
  }
  if (kept.empty()) throw ConfigError("preprocess: all samples rejected by z-score filter");
  if (kept.size() < samples.size()) {
    log::debug("preprocess: dropped " + std::to_string(samples.size() - kept.size()) +
               " outlier samples of " + std::to_string(samples.size()));
  }

  FeatureStats stats;
  stats.fmin.assign(dim, std::numeric_limits<double>::infinity());
  stats.fmax.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto* s : kept) {
    for (std::size_t i = 0; i < dim; ++i) {
      stats.fmin[i] = std::min(stats.fmin[i], s->values[i]);
      stats.fmax[i] = std::max(stats.fmax[i], s->values[i]);
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    if (stats.fmax[i] <= stats.fmin[i]) {
      log::warn("preprocess: feature " + std::to_string(i) + " is constant; mapped to 0");
    }
  }

  Preprocessed out;
  out.stats = std::move(stats);
  out.samples.reserve(kept.size());
  for (const auto* s : kept) out.samples.push_back(apply_stats(out.stats, s->values));
  return out;
}

Preprocessed preprocess(const std::vector<env::Fingerprint>& samples,
                        const FeatureStats& stats) {
  Preprocessed out;
  out.stats = stats;
  out.samples.reserve(samples.size());
  for (const auto& s : samples) out.samples.push_back(apply_stats(stats, s.values));
  return out;
}

namespace {

std::vector<numkit::LayerSpec> autoencoder_specs(int feature_dim, const AdHyper& hyper) {
  // Mirror the encoder: D -> e0 -> ... -> eK -> ... -> e0 -> D.
  std::vector<int> dims;
  dims.push_back(feature_dim);
  for (const int d : hyper.encoder_dims) dims.push_back(d);
  for (std::size_t i = hyper.encoder_dims.size() - 1; i-- > 0;) {
    dims.push_back(hyper.encoder_dims[i]);
  }
  dims.push_back(feature_dim);
  std::vector<numkit::LayerSpec> specs;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    specs.push_back({dims[i], dims[i + 1],
                     last ? numkit::Activation::Identity : hyper.activation});
  }
  return specs;
}

// Autoencoder trainer with optional batch normalization on hidden layers
// (dense -> normalize -> activation). Normalization uses batch statistics in
// training and running averages at inference; the running statistics are
// folded into the dense weights when the model is finalized, so the exported
// network is a plain MLP.
class AeTrainer {
public:
  AeTrainer(int feature_dim, const AdHyper& hyper, std::uint64_t seed)
      : hyper_(hyper), specs_(autoencoder_specs(feature_dim, hyper)) {
    model_ = numkit::mlp_init(specs_, seed);
    adam_ = numkit::make_adam(model_, hyper.learning_rate, hyper.l2);
    const std::size_t hidden = specs_.size() - 1;
    run_mean_.resize(hidden);
    run_var_.resize(hidden);
    for (std::size_t l = 0; l < hidden; ++l) {
      run_mean_[l].assign(specs_[l].output_dim, 0.0);
      run_var_[l].assign(specs_[l].output_dim, 1.0);
    }
  }

  // One optimizer step on a batch; returns the mean per-sample RMSE loss.
  double train_batch(const std::vector<const std::vector<double>*>& batch) {
    const std::size_t B = batch.size();
    const std::size_t L = specs_.size();
    const bool bn = hyper_.batch_norm;

    // Forward.
    std::vector<std::vector<double>> acts(L + 1);  // acts[0] = inputs
    std::vector<std::vector<double>> pre(L);       // activation inputs
    std::vector<std::vector<double>> inv_std(L);
    acts[0].resize(B * model_.input_dim());
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(batch[b]->begin(), batch[b]->end(),
                acts[0].begin() + static_cast<std::ptrdiff_t>(b * batch[b]->size()));
    }
    for (std::size_t l = 0; l < L; ++l) {
      const auto& spec = specs_[l];
      const bool use_bn = bn && l + 1 < L && B > 1;
      const auto& w = model_.weights[l];
      const auto& bias = model_.biases[l];
      std::vector<double> z(B * spec.output_dim);
      for (std::size_t b = 0; b < B; ++b) {
        const double* in = acts[l].data() + b * spec.input_dim;
        double* out = z.data() + b * spec.output_dim;
        for (int o = 0; o < spec.output_dim; ++o) {
          double sum = bias[o];
          const double* row = w.data() + static_cast<std::size_t>(o) * spec.input_dim;
          for (int i = 0; i < spec.input_dim; ++i) sum += row[i] * in[i];
          out[o] = sum;
        }
      }
      if (use_bn) {
        inv_std[l].resize(spec.output_dim);
        for (int o = 0; o < spec.output_dim; ++o) {
          double mu = 0.0;
          for (std::size_t b = 0; b < B; ++b) mu += z[b * spec.output_dim + o];
          mu /= static_cast<double>(B);
          double var = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const double d = z[b * spec.output_dim + o] - mu;
            var += d * d;
          }
          var /= static_cast<double>(B);
          const double is = 1.0 / std::sqrt(var + kBnEps);
          inv_std[l][o] = is;
          for (std::size_t b = 0; b < B; ++b) {
            z[b * spec.output_dim + o] = (z[b * spec.output_dim + o] - mu) * is;
          }
          run_mean_[l][o] = kBnMomentum * run_mean_[l][o] + (1.0 - kBnMomentum) * mu;
          run_var_[l][o] = kBnMomentum * run_var_[l][o] + (1.0 - kBnMomentum) * var;
        }
      }
      pre[l] = z;  // x-hat for BN layers, raw z otherwise
      std::vector<double> a(B * spec.output_dim);
      for (std::size_t i = 0; i < z.size(); ++i) a[i] = numkit::activate(spec.activation, z[i]);
      acts[l + 1] = std::move(a);
    }

    // Loss and output gradient (mean over batch of per-sample RMSE).
    const int D = model_.output_dim();
    double loss_sum = 0.0;
    std::vector<double> da(B * static_cast<std::size_t>(D));
    for (std::size_t b = 0; b < B; ++b) {
      std::span<const double> out(acts[L].data() + b * D, static_cast<std::size_t>(D));
      std::span<const double> target(acts[0].data() + b * D, static_cast<std::size_t>(D));
      const double loss = numkit::rmse(out, target);
      loss_sum += loss;
      for (int i = 0; i < D; ++i) {
        da[b * D + i] = (out[i] - target[i]) / (D * loss) / static_cast<double>(B);
      }
    }

    // Backward.
    auto grads = numkit::zero_gradients(model_);
    for (std::size_t li = L; li-- > 0;) {
      const auto& spec = specs_[li];
      const bool use_bn = bn && li + 1 < L && B > 1;
      std::vector<double> dz(B * spec.output_dim);
      for (std::size_t b = 0; b < B; ++b) {
        for (int o = 0; o < spec.output_dim; ++o) {
          const std::size_t idx = b * spec.output_dim + o;
          dz[idx] = da[idx] * numkit::activate_grad(spec.activation, pre[li][idx],
                                                    acts[li + 1][idx]);
        }
      }
      if (use_bn) {
        // Through the normalization (no affine parameters).
        for (int o = 0; o < spec.output_dim; ++o) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t idx = b * spec.output_dim + o;
            m1 += dz[idx];
            m2 += dz[idx] * pre[li][idx];
          }
          m1 /= static_cast<double>(B);
          m2 /= static_cast<double>(B);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t idx = b * spec.output_dim + o;
            dz[idx] = (dz[idx] - m1 - pre[li][idx] * m2) * inv_std[li][o];
          }
        }
      }
      auto& gw = grads.weights[li];
      auto& gb = grads.biases[li];
      for (std::size_t b = 0; b < B; ++b) {
        const double* in = acts[li].data() + b * spec.input_dim;
        const double* d = dz.data() + b * spec.output_dim;
        for (int o = 0; o < spec.output_dim; ++o) {
          double* row = gw.data() + static_cast<std::size_t>(o) * spec.input_dim;
          for (int i = 0; i < spec.input_dim; ++i) row[i] += d[o] * in[i];
          gb[o] += d[o];
        }
      }
      if (li > 0) {
        std::vector<double> dprev(B * spec.input_dim, 0.0);
        const auto& w = model_.weights[li];
        for (std::size_t b = 0; b < B; ++b) {
          const double* d = dz.data() + b * spec.output_dim;
          double* dp = dprev.data() + b * spec.input_dim;
          for (int o = 0; o < spec.output_dim; ++o) {
            const double* row = w.data() + static_cast<std::size_t>(o) * spec.input_dim;
            for (int i = 0; i < spec.input_dim; ++i) dp[i] += row[i] * d[o];
          }
        }
        da = std::move(dprev);
      }
    }

    numkit::adam_step(adam_, model_, grads);
    return loss_sum / static_cast<double>(B);
  }

  // Inference network with running statistics folded into the dense layers.
  numkit::MlpModel folded() const {
    numkit::MlpModel out = model_;
    if (!hyper_.batch_norm) return out;
    for (std::size_t l = 0; l + 1 < specs_.size(); ++l) {
      const auto& spec = specs_[l];
      for (int o = 0; o < spec.output_dim; ++o) {
        const double s = 1.0 / std::sqrt(run_var_[l][o] + kBnEps);
        double* row = out.weights[l].data() + static_cast<std::size_t>(o) * spec.input_dim;
        for (int i = 0; i < spec.input_dim; ++i) row[i] *= s;
        out.biases[l][o] = s * (out.biases[l][o] - run_mean_[l][o]);
      }
    }
    return out;
  }

private:
  AdHyper hyper_;
  std::vector<numkit::LayerSpec> specs_;
  numkit::MlpModel model_;
  numkit::AdamState adam_;
  std::vector<std::vector<double>> run_mean_, run_var_;
};

double mse_of(const numkit::MlpModel& model, std::span<const double> x) {
  const auto out = numkit::mlp_forward(model, x);
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out[i] - x[i];
    s += d * d;
  }
  return s / static_cast<double>(out.size());
}

double mean_rmse(const numkit::MlpModel& model, const std::vector<std::vector<double>>& xs) {
  double sum = 0.0;
  for (const auto& x : xs) {
    sum += numkit::rmse(numkit::mlp_forward(model, x), x);
  }
  return sum / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (const double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

AdModel train_ad(const std::vector<env::Fingerprint>& normal_samples, const AdHyper& hyper,
                 std::uint64_t seed) {
  hyper.validate();
  if (normal_samples.size() < 100) {
    throw ConfigError("train_ad: need at least 100 normal samples, got " +
                      std::to_string(normal_samples.size()));
  }
  const int dim = static_cast<int>(normal_samples.front().values.size());

  Rng rng(child_seed(seed, "split"));
  std::vector<std::size_t> order(normal_samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i-- > 1;) {
    std::swap(order[i], order[rng.uniform_index(i + 1)]);
  }
  const std::size_t n_train = (order.size() * 8) / 10;
  std::vector<env::Fingerprint> train_fp, val_fp;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train_fp : val_fp).push_back(normal_samples[order[i]]);
  }

  auto train = preprocess(train_fp);
  auto val = preprocess(val_fp, train.stats);

  AeTrainer trainer(dim, hyper, child_seed(seed, "init"));
  Rng shuffle_rng(child_seed(seed, "epochs"));

  double best_loss = std::numeric_limits<double>::infinity();
  numkit::MlpModel best_model = trainer.folded();
  int epochs_since_best = 0;

  std::vector<std::size_t> idx(train.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    for (std::size_t i = idx.size(); i-- > 1;) {
      std::swap(idx[i], idx[shuffle_rng.uniform_index(i + 1)]);
    }
    double train_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(idx.size(), start + hyper.batch_size);
      if (hyper.batch_norm && end - start < 2) continue;  // no batch statistics from one sample
      std::vector<const std::vector<double>*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train.samples[idx[i]]);
      train_loss += trainer.train_batch(batch);
      ++n_batches;
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(n_batches, 1));
    const auto candidate = trainer.folded();
    const double val_loss = mean_rmse(candidate, val.samples);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericError("train_ad: diverged at epoch " + std::to_string(epoch) +
                         " (train loss " + std::to_string(train_loss) + ", val loss " +
                         std::to_string(val_loss) + ")");
    }
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best_model = candidate;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= hyper.early_stop_patience) {
      log::debug("train_ad: early stop at epoch " + std::to_string(epoch));
      break;
    }
  }

  AdModel model;
  model.autoencoder = std::move(best_model);
  model.stats = std::move(train.stats);

  std::vector<double> mses;
  mses.reserve(val.samples.size());
  for (const auto& x : val.samples) mses.push_back(mse_of(model.autoencoder, x));
  const double mean = std::accumulate(mses.begin(), mses.end(), 0.0) /
                      static_cast<double>(mses.size());
  model.threshold = mean + hyper.n_std * sample_std(mses, mean);
  return model;
}

double calibrate_threshold(const AdModel& model,
                           const std::vector<env::Fingerprint>& validation_samples,
                           double n_std) {
  if (validation_samples.empty()) {
    throw ConfigError("calibrate_threshold: empty validation set");
  }
  std::vector<double> mses;
  mses.reserve(validation_samples.size());
  for (const auto& f : validation_samples) mses.push_back(reconstruction_mse(model, f));
  const double mean = std::accumulate(mses.begin(), mses.end(), 0.0) /
                      static_cast<double>(mses.size());
  return mean + n_std * sample_std(mses, mean);
}

double reconstruction_mse(const AdModel& model, const env::Fingerprint& f) {
  return mse_of(model.autoencoder, apply_stats(model.stats, f.values));
}

Verdict detect(const AdModel& model, const env::Fingerprint& f) {
  Verdict v;
  v.mse = reconstruction_mse(model, f);
  v.label = v.mse > model.threshold ? AdLabel::Abnormal : AdLabel::Normal;
  return v;
}

int reward(const AdModel& model, const env::Fingerprint& after) {
  return detect(model, after).label == AdLabel::Normal ? +1 : -1;
}

void save_ad_model(const AdModel& model, std::ostream& out) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "fedmtd-admodel 1\n";
  out << "threshold " << model.threshold << "\n";
  out << "stats " << model.stats.fmin.size() << "\n";
  for (std::size_t i = 0; i < model.stats.fmin.size(); ++i) {
    out << (i == 0 ? "" : " ") << model.stats.fmin[i];
  }
  out << "\n";
  for (std::size_t i = 0; i < model.stats.fmax.size(); ++i) {
    out << (i == 0 ? "" : " ") << model.stats.fmax[i];
  }
  out << "\n";
  serialize::write_mlp(out, model.autoencoder);
}

AdModel load_ad_model(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "fedmtd-admodel" || version != 1) {
    throw ParseError("admodel: bad header");
  }
  AdModel model;
  std::size_t dim = 0;
  if (!(in >> tag >> model.threshold) || tag != "threshold") {
    throw ParseError("admodel: bad threshold line");
  }
  if (!(in >> tag >> dim) || tag != "stats") throw ParseError("admodel: bad stats line");
  model.stats.fmin.resize(dim);
  model.stats.fmax.resize(dim);
  for (auto& x : model.stats.fmin) {
    if (!(in >> x)) throw ParseError("admodel: truncated stats");
  }
  for (auto& x : model.stats.fmax) {
    if (!(in >> x)) throw ParseError("admodel: truncated stats");
  }
  model.autoencoder = serialize::read_mlp(in);
  return model;
}

void save_ad_model_file(const AdModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  save_ad_model(model, out);
}

AdModel load_ad_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  return load_ad_model(in);
}

}  // namespace fedmtd::anomaly
