#include "fedmtd/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"
#include "fedmtd/serialize.hpp"

namespace fedmtd::agent {

void AgentHyper::validate() const {
  if (q_dims.empty()) throw ConfigError("agent: q_dims must be non-empty");
  for (const int d : q_dims) {
    if (d <= 0) throw ConfigError("agent: q_dims must be > 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("agent: dropout must be in [0,1)");
  if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("agent: gamma must be in [0,1)");
  if (learning_rate <= 0.0) throw ConfigError("agent: learning_rate must be > 0");
  if (l2 < 0.0) throw ConfigError("agent: l2 must be >= 0");
  if (epsilon_end > epsilon_start) {
    throw ConfigError("agent: epsilon_end must be <= epsilon_start");
  }
  if (epsilon_dec < 0.0) throw ConfigError("agent: epsilon_dec must be >= 0");
  if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0) {
    throw ConfigError("agent: epsilon values must be in [0,1]");
  }
  if (max_steps_per_episode < 1) throw ConfigError("agent: max_steps_per_episode must be >= 1");
  if (use_replay && (replay_capacity < 1 || replay_batch < 1)) {
    throw ConfigError("agent: replay capacity/batch must be >= 1");
  }
  if (use_target_net && target_sync_every < 1) {
    throw ConfigError("agent: target_sync_every must be >= 1");
  }
}

std::vector<numkit::LayerSpec> q_network_specs(int feature_dim, const AgentHyper& hyper) {
  std::vector<numkit::LayerSpec> specs;
  int in = feature_dim;
  for (const int h : hyper.q_dims) {
    specs.push_back({in, h, hyper.activation});
    in = h;
  }
  specs.push_back({in, env::kNumActions, numkit::Activation::Identity});
  return specs;
}

Agent make_agent(int feature_dim, const AgentHyper& hyper, std::uint64_t seed) {
  hyper.validate();
  Agent agent;
  agent.q_net = numkit::mlp_init(q_network_specs(feature_dim, hyper), seed);
  agent.optimizer = numkit::make_adam(agent.q_net, hyper.learning_rate, hyper.l2);
  if (hyper.use_target_net) agent.target_net = agent.q_net;
  return agent;
}

double epsilon_at(const AgentHyper& hyper, long episodes_done) {
  if (episodes_done < 0) throw ConfigError("epsilon_at: episodes_done must be >= 0");
  return std::max(hyper.epsilon_end,
                  hyper.epsilon_start - hyper.epsilon_dec * static_cast<double>(episodes_done));
}

std::vector<double> q_values(const Agent& agent, std::span<const double> state) {
  return numkit::mlp_forward(agent.q_net, state);
}

namespace {
int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}
}  // namespace

env::MtdAction greedy_action(const Agent& agent, std::span<const double> state) {
  const auto q = q_values(agent, state);
  return static_cast<env::MtdAction>(argmax_lowest(q));
}

env::MtdAction select_action(const Agent& agent, std::span<const double> state, double epsilon,
                             Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("select_action: epsilon out of range");
  if (rng.uniform_unit() < epsilon) {
    return static_cast<env::MtdAction>(rng.uniform_index(env::kNumActions));
  }
  return greedy_action(agent, state);
}

namespace {

double update_on(Agent& agent, const Transition& t, const AgentHyper& hyper, Rng* rng,
                 numkit::MlpGradients* grads_out, double grad_scale) {
  double target = static_cast<double>(t.reward);
  if (!t.terminal) {
    const auto& net = agent.target_net.has_value() ? *agent.target_net : agent.q_net;
    const auto next_q = numkit::mlp_forward(net, t.next_state.values);
    double best = next_q[0];
    for (const double q : next_q) best = std::max(best, q);
    if (!std::isfinite(best)) throw NumericError("td_update: non-finite next-state Q value");
    target += hyper.gamma * best;
  }

  numkit::ForwardCache cache;
  std::vector<double> q;
  if (hyper.dropout > 0.0) {
    if (rng == nullptr) throw UsageError("td_update: dropout requires an rng");
    q = numkit::mlp_forward_dropout(agent.q_net, t.state.values, hyper.dropout, *rng, cache);
  } else {
    q = numkit::mlp_forward(agent.q_net, t.state.values, &cache);
  }
  const int a = static_cast<int>(t.action);
  if (!std::isfinite(q[a])) throw NumericError("td_update: non-finite Q value");

  const double pred[1] = {q[a]};
  const double targ[1] = {target};
  const double loss = numkit::rmse(pred, targ);
  std::vector<double> out_grad(q.size(), 0.0);
  out_grad[a] = numkit::rmse_gradient(pred, targ)[0] * grad_scale;

  auto grads = numkit::mlp_backward(agent.q_net, cache, out_grad);
  if (grads_out == nullptr) {
    numkit::adam_step(agent.optimizer, agent.q_net, grads);
  } else {
    for (std::size_t l = 0; l < grads.weights.size(); ++l) {
      for (std::size_t i = 0; i < grads.weights[l].size(); ++i) {
        grads_out->weights[l][i] += grads.weights[l][i];
      }
      for (std::size_t i = 0; i < grads.biases[l].size(); ++i) {
        grads_out->biases[l][i] += grads.biases[l][i];
      }
    }
  }
  return loss;
}

}  // namespace

double td_update(Agent& agent, const Transition& t, const AgentHyper& hyper, Rng* rng) {
  if (!hyper.use_replay) {
    return update_on(agent, t, hyper, rng, nullptr, 1.0);
  }
  if (rng == nullptr) throw UsageError("td_update: replay requires an rng");
  agent.replay.push_back(t);
  while (static_cast<int>(agent.replay.size()) > hyper.replay_capacity) {
    agent.replay.pop_front();
  }
  const int n = std::min<int>(hyper.replay_batch, static_cast<int>(agent.replay.size()));
  auto grads = numkit::zero_gradients(agent.q_net);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& sample = agent.replay[rng->uniform_index(agent.replay.size())];
    loss += update_on(agent, sample, hyper, rng, &grads, 1.0 / n);
  }
  numkit::adam_step(agent.optimizer, agent.q_net, grads);
  return loss / n;
}

std::optional<EpisodeOutcome> run_episode(Agent& agent, const EpisodeContext& ctx,
                                          std::span<const env::BehaviorClass> allowed,
                                          const AgentHyper& hyper, Rng& rng) {
  const env::BehaviorClass malware = env::spawn_attack(allowed, rng);
  EpisodeOutcome outcome;
  outcome.malware = malware;

  env::BehaviorClass current = malware;
  double discount = 1.0;
  double loss_sum = 0.0;

  for (int step = 1; step <= hyper.max_steps_per_episode; ++step) {
    env::Fingerprint fp = env::sample_fingerprint(*ctx.profiles, current, rng);
    if (ctx.transform) fp = ctx.transform(std::move(fp), rng);

    if (step == 1) {
      const auto trigger = ctx.detect_trigger(fp);
      if (trigger.label == anomaly::AdLabel::Normal) {
        log::debug(std::string("episode skipped: detector missed initial ") +
                   env::to_string(malware) + " state");
        return std::nullopt;
      }
    }

    env::Fingerprint state;
    state.true_class = fp.true_class;
    state.values = anomaly::apply_stats(*ctx.stats, fp.values);

    const double eps = epsilon_at(hyper, agent.episodes_done);
    const env::MtdAction action = select_action(agent, state.values, eps, rng);
    if (step == 1) outcome.first_action_effective = env::is_effective(malware, action);

    // A state that is already back to normal stays normal; there is nothing
    // left for an MTD to mitigate.
    const env::BehaviorClass next_class =
        current == env::BehaviorClass::Normal
            ? env::BehaviorClass::Normal
            : env::afterstate(current, action, *ctx.env_cfg, rng);
    env::Fingerprint after_fp = env::sample_fingerprint(*ctx.profiles, next_class, rng);
    if (ctx.transform) after_fp = ctx.transform(std::move(after_fp), rng);

    const auto verdict = ctx.detect_reward(after_fp);
    const int reward = verdict.label == anomaly::AdLabel::Normal ? +1 : -1;

    Transition t;
    t.state = std::move(state);
    t.action = action;
    t.reward = reward;
    t.next_state.true_class = after_fp.true_class;
    t.next_state.values = anomaly::apply_stats(*ctx.stats, after_fp.values);
    t.terminal = reward == +1 || step == hyper.max_steps_per_episode;

    loss_sum += td_update(agent, t, hyper, &rng);
    outcome.total_return += discount * reward;
    discount *= hyper.gamma;
    outcome.steps = step;

    if (reward == +1) {
      outcome.mitigated = true;
      break;
    }
    current = next_class;
  }

  outcome.mean_td_loss = loss_sum / static_cast<double>(outcome.steps);
  agent.episodes_done += 1;
  if (agent.target_net.has_value() && hyper.use_target_net &&
      agent.episodes_done % hyper.target_sync_every == 0) {
    agent.target_net = agent.q_net;
  }
  return outcome;
}

std::map<env::BehaviorClass, double> greedy_accuracy(
    const Agent& agent, const env::ProfileSet& profiles, const anomaly::FeatureStats& stats,
    std::span<const env::BehaviorClass> malware_set, int n_per_class, Rng& rng) {
  if (n_per_class < 1) throw ConfigError("greedy_accuracy: n_per_class must be >= 1");
  std::map<env::BehaviorClass, double> acc;
  for (const env::BehaviorClass m : malware_set) {
    int correct = 0;
    for (int i = 0; i < n_per_class; ++i) {
      const auto fp = env::sample_fingerprint(profiles, m, rng);
      const auto state = anomaly::apply_stats(stats, fp.values);
      if (env::is_effective(m, greedy_action(agent, state))) ++correct;
    }
    acc[m] = static_cast<double>(correct) / n_per_class;
  }
  return acc;
}

void save_agent(const Agent& agent, std::ostream& out) {
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "fedmtd-agent 1\n";
  out << "episodes_done " << agent.episodes_done << "\n";
  serialize::write_mlp(out, agent.q_net);
  const auto& s = agent.optimizer;
  out << "adam " << s.step_count << " " << s.learning_rate << " " << s.beta1 << " " << s.beta2
      << " " << s.eps_hat << " " << s.l2_coefficient << "\n";
  auto dump = [&out](const std::vector<std::vector<double>>& arrs) {
    for (const auto& arr : arrs) {
      for (std::size_t i = 0; i < arr.size(); ++i) out << (i == 0 ? "" : " ") << arr[i];
      out << "\n";
    }
  };
  dump(s.m_weights);
  dump(s.m_biases);
  dump(s.v_weights);
  dump(s.v_biases);
}

Agent load_agent(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "fedmtd-agent" || version != 1) {
    throw ParseError("agent: bad header");
  }
  Agent agent;
  if (!(in >> tag >> agent.episodes_done) || tag != "episodes_done") {
    throw ParseError("agent: bad episodes_done line");
  }
  agent.q_net = serialize::read_mlp(in);
  auto& s = agent.optimizer;
  if (!(in >> tag >> s.step_count >> s.learning_rate >> s.beta1 >> s.beta2 >> s.eps_hat >>
        s.l2_coefficient) ||
      tag != "adam") {
    throw ParseError("agent: bad adam line");
  }
  auto fill = [&in](std::vector<std::vector<double>>& arrs) {
    for (auto& arr : arrs) {
      for (auto& x : arr) {
        if (!(in >> x)) throw ParseError("agent: truncated adam state");
      }
    }
  };
  s = [&] {
    auto init = numkit::make_adam(agent.q_net, s.learning_rate, s.l2_coefficient);
    init.step_count = s.step_count;
    init.beta1 = s.beta1;
    init.beta2 = s.beta2;
    init.eps_hat = s.eps_hat;
    return init;
  }();
  fill(s.m_weights);
  fill(s.m_biases);
  fill(s.v_weights);
  fill(s.v_biases);
  return agent;
}

void save_agent_file(const Agent& agent, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  save_agent(agent, out);
}

Agent load_agent_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  return load_agent(in);
}

}  // namespace fedmtd::agent
