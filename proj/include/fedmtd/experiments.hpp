#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedmtd/adversary.hpp"
#include "fedmtd/agent.hpp"
#include "fedmtd/anomaly.hpp"
#include "fedmtd/environment.hpp"
#include "fedmtd/federation.hpp"

namespace fedmtd::experiments {

enum class ScenarioKind { Iid, WeakNonIid, StrongNonIid, FamilyAbsence };

const char* to_string(ScenarioKind k);
ScenarioKind scenario_from_string(std::string_view name);

// Declarative scenario parameters; make_scenario turns them into concrete
// per-client malware exposure sets.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Iid;
  env::BehaviorClass absent_malware = env::BehaviorClass::Jakoritar;  // weak non-IID
  env::MalwareFamily absent_family = env::MalwareFamily::Rootkit;     // family absence
  double missing_ratio = 0.0;

  void validate() const;  // throws ConfigError
};

struct Scenario {
  ScenarioSpec spec;
  std::vector<std::vector<env::BehaviorClass>> per_client_allowed;

  // The class whose accuracy the absent-malware metric tracks: the absent
  // malware for weak non-IID, the partially-missing family member for family
  // absence, nothing otherwise.
  std::optional<env::BehaviorClass> tracked_absent() const;
};

// Family absence removes the family's donor classes from every client and
// the probe class from round(missing_ratio*K) clients. Probes: Rootkit ->
// Bdvl (Beurk absent everywhere), CnC -> Jakoritar (The Tick and Dataleak
// absent everywhere). Ransomware has a single member and is rejected.
env::BehaviorClass family_probe(env::MalwareFamily family);
std::vector<env::BehaviorClass> family_donors(env::MalwareFamily family);

Scenario make_scenario(const ScenarioSpec& spec, int num_clients, std::uint64_t seed);

struct ExperimentConfig {
  env::EnvConfig env;
  anomaly::AdHyper ad_hyper;
  int ad_train_samples = 2000;
  agent::AgentHyper agent_hyper;
  fed::FederationConfig fed;
  ScenarioSpec scenario;
  adversary::AdversaryConfig adversary_cfg;
  int eval_samples_per_class = 200;
  bool run_baseline = false;
  std::string output_dir = ".";

  void validate() const;  // throws ConfigError
};

struct MetricsRow {
  int round = 0;
  double mean_accuracy = 0.0;
  std::array<double, 6> per_malware{};  // order of env::kMalwareClasses
  std::optional<double> absent_accuracy;
  double epsilon = 0.0;
  std::string aggregation;
  double pnr = 0.0;
  std::string attack;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
};

inline constexpr const char* kMetricsHeader =
    "round,mean_accuracy,acc_the_tick,acc_jakoritar,acc_dataleak,acc_beurk,acc_bdvl,"
    "acc_ransomware_poc,absent_accuracy,epsilon,aggregation,pnr,attack";

// Builds the environment, trains the per-client detectors on clean normal
// data, seeds every agent from one shared initial network, runs the
// federation, and returns one metrics row per round.
MetricsLog run_experiment(const ExperimentConfig& cfg, const fed::RoundObserver& observer = {});

// Prepared federation for callers that need to drive rounds themselves.
fed::FederationState prepare_federation(const ExperimentConfig& cfg);

// Single agent exposed to everything, trained on the federation's total
// episode budget with identical hyperparameters; accuracy logged every 100
// episodes so the curves line up with federated rounds.
MetricsLog run_centralized_baseline(const ExperimentConfig& cfg);
inline constexpr int kBaselineLogEvery = 100;

// First cumulative episode count (rows * episodes_per_row) at which the mean
// accuracy reaches the threshold; nullopt when it never does.
std::optional<long> episodes_to_threshold(const MetricsLog& log, double threshold,
                                          int episodes_per_row);

void write_metrics_csv(const MetricsLog& log, const std::string& path);
MetricsLog read_metrics_csv(const std::string& path);

}  // namespace fedmtd::experiments
