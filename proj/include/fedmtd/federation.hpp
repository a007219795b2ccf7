#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmtd/adversary.hpp"
#include "fedmtd/agent.hpp"
#include "fedmtd/anomaly.hpp"
#include "fedmtd/environment.hpp"
#include "fedmtd/numkit.hpp"

namespace fedmtd::fed {

enum class AggregationKind { FedAvg, Krum, TrimmedMean };

struct AggregationStrategy {
  AggregationKind kind = AggregationKind::FedAvg;
  double trim_fraction = 0.2;  // TrimmedMean only

  void validate() const;  // throws ConfigError
};

const char* to_string(AggregationKind k);
AggregationKind aggregation_from_string(std::string_view name);

struct FederationConfig {
  int num_clients = 10;
  int rounds = 30;
  int episodes_per_round = 100;
  AggregationStrategy aggregation;
  std::uint64_t master_seed = 1;

  void validate() const;  // throws ConfigError
};

struct RoundRecord {
  int round_index = 0;  // 1-based
  std::map<env::BehaviorClass, double> global_accuracy_per_malware;
  double mean_accuracy = 0.0;
  std::vector<double> per_client_loss;
  double epsilon_snapshot = 0.0;
  std::optional<int> krum_selected;  // index chosen by Krum, when applicable
};

// Coordinate-wise mean of equal-length flat vectors.
numkit::FlatVector fedavg(std::span<const numkit::FlatVector> models);

// Returns the model minimizing the summed Euclidean distance to all others
// (lowest index on ties) together with its index. The output is one of the
// inputs verbatim.
std::pair<numkit::FlatVector, int> krum(std::span<const numkit::FlatVector> models);

// Per coordinate: sort the K values, drop floor(trim_fraction*K) from each
// tail, average the rest. trim_fraction 0 is exactly fedavg.
numkit::FlatVector trimmed_mean(std::span<const numkit::FlatVector> models,
                                double trim_fraction);

struct AggregateResult {
  numkit::FlatVector global;
  std::optional<int> selected_index;  // Krum only
};
AggregateResult aggregate(const AggregationStrategy& strategy,
                          std::span<const numkit::FlatVector> models);

// Pairwise cosine similarity of the client models plus the global model as
// the last row/column. Zero vectors compare as 0.
std::vector<std::vector<double>> model_similarity(std::span<const numkit::FlatVector> models,
                                                  const numkit::FlatVector& global);

struct ClientState {
  agent::Agent agent;
  anomaly::AdModel ad;
  std::vector<env::BehaviorClass> allowed;
  bool poisoned = false;
  std::vector<double> poison_feature_stds;  // clean per-feature stds for sample poisoning
  Rng rng{0};
};

struct FederationState {
  FederationConfig cfg;
  agent::AgentHyper agent_hyper;
  env::EnvConfig env_cfg;
  env::ProfileSet profiles;
  adversary::AdversaryConfig adversary_cfg;
  std::vector<ClientState> clients;
  numkit::FlatVector global;
  anomaly::FeatureStats eval_stats;  // clean evaluator preprocessing
  int eval_samples_per_class = 200;
  std::uint64_t eval_seed = 0;
  int rounds_done = 0;
  std::vector<RoundRecord> history;
};

// Observer sees each round's local flat models (pre-aggregation, in client
// order) and the new global; used for model-similarity analysis.
using RoundObserver =
    std::function<void(int round_index, std::span<const numkit::FlatVector> locals,
                       const numkit::FlatVector& global)>;

// One federation round: local training with adversary hooks, aggregation,
// broadcast, and evaluation of the new global on the clean evaluator.
RoundRecord run_round(FederationState& state, const RoundObserver& observer = {});

std::vector<RoundRecord> run_federation(FederationState& state,
                                        const RoundObserver& observer = {});

}  // namespace fedmtd::fed
