#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedmtd/anomaly.hpp"
#include "fedmtd/environment.hpp"
#include "fedmtd/numkit.hpp"
#include "fedmtd/rng.hpp"

namespace fedmtd::agent {

struct AgentHyper {
  std::vector<int> q_dims{128, 64};  // hidden layers
  numkit::Activation activation = numkit::Activation::Selu;
  double dropout = 0.0;
  double gamma = 0.5;
  double learning_rate = 1e-4;
  double l2 = 1e-2;
  double epsilon_start = 1.0;
  double epsilon_dec = 0.8 / 3000.0;
  double epsilon_end = 0.01;
  int max_steps_per_episode = 5;

  // Ablation switches; the default agent is plain online one-step TD.
  bool use_replay = false;
  int replay_capacity = 2000;
  int replay_batch = 16;
  bool use_target_net = false;
  int target_sync_every = 100;  // episodes

  void validate() const;  // throws ConfigError
};

struct Transition {
  env::Fingerprint state;  // preprocessed feature vector
  env::MtdAction action = env::MtdAction::IpShuffling;
  int reward = 0;  // +1 or -1
  env::Fingerprint next_state;
  bool terminal = false;
};

struct EpisodeOutcome {
  env::BehaviorClass malware = env::BehaviorClass::Normal;
  int steps = 0;
  bool mitigated = false;
  double total_return = 0.0;
  bool first_action_effective = false;
  double mean_td_loss = 0.0;
};

struct Agent {
  numkit::MlpModel q_net;
  numkit::AdamState optimizer;
  long episodes_done = 0;
  std::optional<numkit::MlpModel> target_net;
  std::deque<Transition> replay;
};

std::vector<numkit::LayerSpec> q_network_specs(int feature_dim, const AgentHyper& hyper);
Agent make_agent(int feature_dim, const AgentHyper& hyper, std::uint64_t seed);

// max(epsilon_end, epsilon_start - epsilon_dec * episodes_done)
double epsilon_at(const AgentHyper& hyper, long episodes_done);

// Epsilon-greedy over the 4 MTD actions; greedy ties break to the lowest
// action index. One uniform draw decides explore-vs-exploit, a second picks
// the random action when exploring.
env::MtdAction select_action(const Agent& agent, std::span<const double> state, double epsilon,
                             Rng& rng);

std::vector<double> q_values(const Agent& agent, std::span<const double> state);
env::MtdAction greedy_action(const Agent& agent, std::span<const double> state);

// One-step TD update: target r (terminal) or r + gamma * max_a Q(s', a);
// epsilon-guarded RMSE on the selected action's output. Returns the loss.
// rng is only consulted for dropout or replay sampling.
double td_update(Agent& agent, const Transition& t, const AgentHyper& hyper, Rng* rng = nullptr);

// Everything an episode needs besides the agent: fingerprint source, the
// detector used to trigger episodes, the (possibly adversary-wrapped)
// detector used for rewards, preprocessing stats for the Q input, and an
// optional fingerprint transform (sample poisoning).
struct EpisodeContext {
  const env::ProfileSet* profiles = nullptr;
  const env::EnvConfig* env_cfg = nullptr;
  const anomaly::FeatureStats* stats = nullptr;
  std::function<anomaly::Verdict(const env::Fingerprint&)> detect_trigger;
  std::function<anomaly::Verdict(const env::Fingerprint&)> detect_reward;
  std::function<env::Fingerprint(env::Fingerprint, Rng&)> transform;  // optional
};

// Runs one attack episode. Returns nullopt when the detector misses the
// initial malware state (false negative): the agent is never triggered and
// episodes_done is not advanced.
std::optional<EpisodeOutcome> run_episode(Agent& agent, const EpisodeContext& ctx,
                                          std::span<const env::BehaviorClass> allowed,
                                          const AgentHyper& hyper, Rng& rng);

// Fraction of fresh state fingerprints per malware whose greedy action is in
// the effective set. Uses the clean environment only.
std::map<env::BehaviorClass, double> greedy_accuracy(
    const Agent& agent, const env::ProfileSet& profiles, const anomaly::FeatureStats& stats,
    std::span<const env::BehaviorClass> malware_set, int n_per_class, Rng& rng);

void save_agent(const Agent& agent, std::ostream& out);
Agent load_agent(std::istream& in);
void save_agent_file(const Agent& agent, const std::string& path);
Agent load_agent_file(const std::string& path);

}  // namespace fedmtd::agent
