#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedmtd/environment.hpp"
#include "fedmtd/numkit.hpp"

namespace fedmtd::anomaly {

struct AdHyper {
  std::vector<int> encoder_dims{64, 32};
  numkit::Activation activation = numkit::Activation::Gelu;
  bool batch_norm = true;
  double learning_rate = 1e-4;
  double l2 = 1e-2;
  int batch_size = 32;
  int early_stop_patience = 5;
  double n_std = 2.0;
  int max_epochs = 100;

  void validate() const;  // throws ConfigError
};

// Per-feature min/max fitted on (outlier-filtered) normal training data.
struct FeatureStats {
  std::vector<double> fmin;
  std::vector<double> fmax;
};

struct AdModel {
  numkit::MlpModel autoencoder;  // inference network, batch norm already folded in
  double threshold = 0.0;
  FeatureStats stats;
};

enum class AdLabel { Normal, Abnormal };

struct Verdict {
  AdLabel label = AdLabel::Normal;
  double mse = 0.0;
};

struct Preprocessed {
  std::vector<std::vector<double>> samples;
  FeatureStats stats;
};

// Fit mode: drops samples with any |z| > 3 (z over the raw sample set), then
// min-max scales each feature to [0,1] on the survivors. Constant features
// map to 0 (warned once).
Preprocessed preprocess(const std::vector<env::Fingerprint>& samples);
// Apply mode: scales with stored stats; never drops a sample.
Preprocessed preprocess(const std::vector<env::Fingerprint>& samples, const FeatureStats& stats);

std::vector<double> apply_stats(const FeatureStats& stats, std::span<const double> values);

// Trains the per-client autoencoder on normal fingerprints: seeded 80/20
// split, RMSE reconstruction loss, Adam, early stopping on validation loss,
// threshold calibrated on the held-out 20%. Pure function of its arguments.
AdModel train_ad(const std::vector<env::Fingerprint>& normal_samples, const AdHyper& hyper,
                 std::uint64_t seed);

// threshold = mean(per-sample MSE) + n_std * sample std of the MSEs.
double calibrate_threshold(const AdModel& model,
                           const std::vector<env::Fingerprint>& validation_samples,
                           double n_std);

double reconstruction_mse(const AdModel& model, const env::Fingerprint& f);

// Abnormal iff mse > threshold (boundary counts as Normal).
Verdict detect(const AdModel& model, const env::Fingerprint& f);

// +1 if the afterstate looks normal, -1 otherwise.
int reward(const AdModel& model, const env::Fingerprint& after);

void save_ad_model(const AdModel& model, std::ostream& out);
AdModel load_ad_model(std::istream& in);
void save_ad_model_file(const AdModel& model, const std::string& path);
AdModel load_ad_model_file(const std::string& path);

}  // namespace fedmtd::anomaly
