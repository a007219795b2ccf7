#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedmtd/anomaly.hpp"
#include "fedmtd/environment.hpp"
#include "fedmtd/numkit.hpp"
#include "fedmtd/rng.hpp"

namespace fedmtd::adversary {

enum class AttackType { None, LabelFlipping, SamplePoisoning, ModelPoisoning };

const char* to_string(AttackType t);
AttackType attack_from_string(std::string_view name);

struct AttackKind {
  AttackType type = AttackType::None;
  double noise_ratio = 0.5;  // sample/model poisoning strength
};

struct AdversaryConfig {
  AttackKind kind;
  double pnr = 0.0;  // poisoned nodes ratio
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Exactly round(pnr*K) distinct client ids, drawn uniformly, returned sorted.
std::vector<int> select_poisoned(int num_clients, double pnr, std::uint64_t seed);

// Label flipping: invert the detector verdict in a poisoned client's reward
// path; the reconstruction error is untouched.
anomaly::Verdict flip_verdict(anomaly::Verdict v);

// Sample poisoning: add per-feature Gaussian noise with std
// noise_ratio * feature_std to a training fingerprint.
env::Fingerprint poison_sample(env::Fingerprint f, std::span<const double> feature_stds,
                               double noise_ratio, Rng& rng);

// Model poisoning: add Gaussian noise with std noise_ratio * std(parameters)
// to every parameter; falls back to an absolute std of noise_ratio when the
// model is constant.
numkit::MlpModel poison_model(numkit::MlpModel m, double noise_ratio, Rng& rng);

}  // namespace fedmtd::adversary
