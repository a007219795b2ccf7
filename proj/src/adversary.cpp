#include "fedmtd/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"

namespace fedmtd::adversary {

const char* to_string(AttackType t) {
  switch (t) {
    case AttackType::None: return "none";
    case AttackType::LabelFlipping: return "label_flipping";
    case AttackType::SamplePoisoning: return "sample_poisoning";
    case AttackType::ModelPoisoning: return "model_poisoning";
  }
  return "?";
}

AttackType attack_from_string(std::string_view name) {
  if (name == "none") return AttackType::None;
  if (name == "label_flipping") return AttackType::LabelFlipping;
  if (name == "sample_poisoning") return AttackType::SamplePoisoning;
  if (name == "model_poisoning") return AttackType::ModelPoisoning;
  throw ConfigError("unknown attack kind: " + std::string(name));
}

void AdversaryConfig::validate() const {
  if (pnr < 0.0 || pnr > 1.0) throw ConfigError("adversary: pnr must be in [0,1]");
  if (kind.noise_ratio < 0.0) throw ConfigError("adversary: noise_ratio must be >= 0");
}

std::vector<int> select_poisoned(int num_clients, double pnr, std::uint64_t seed) {
  if (pnr < 0.0 || pnr > 1.0) throw ConfigError("select_poisoned: pnr must be in [0,1]");
  const int count = static_cast<int>(std::llround(pnr * num_clients));
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

anomaly::Verdict flip_verdict(anomaly::Verdict v) {
  v.label = v.label == anomaly::AdLabel::Normal ? anomaly::AdLabel::Abnormal
                                                : anomaly::AdLabel::Normal;
  return v;
}

env::Fingerprint poison_sample(env::Fingerprint f, std::span<const double> feature_stds,
                               double noise_ratio, Rng& rng) {
  if (f.values.size() != feature_stds.size()) {
    throw ShapeError("poison_sample: feature std vector does not match fingerprint");
  }
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    f.values[i] += rng.normal(0.0, noise_ratio * feature_stds[i]);
  }
  return f;
}

numkit::MlpModel poison_model(numkit::MlpModel m, double noise_ratio, Rng& rng) {
  const auto flat = numkit::flatten(m);
  const double n = static_cast<double>(flat.values.size());
  double mean = 0.0;
  for (const double x : flat.values) mean += x;
  mean /= n;
  double var = 0.0;
  for (const double x : flat.values) var += (x - mean) * (x - mean);
  double sigma = std::sqrt(var / n);
  if (sigma == 0.0) {
    log::warn("poison_model: parameter std is 0, using absolute noise std " +
              std::to_string(noise_ratio));
    sigma = 1.0;
  }
  const double noise_std = noise_ratio * sigma;
  for (auto& layer : m.weights) {
    for (auto& w : layer) w += rng.normal(0.0, noise_std);
  }
  for (auto& layer : m.biases) {
    for (auto& b : layer) b += rng.normal(0.0, noise_std);
  }
  return m;
}

}  // namespace fedmtd::adversary
