#include "fedmtd/federation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"

namespace fedmtd::fed {

void AggregationStrategy::validate() const {
  if (kind == AggregationKind::TrimmedMean &&
      (trim_fraction < 0.0 || trim_fraction >= 0.5)) {
    throw ConfigError("trim_fraction must be in [0, 0.5)");
  }
}

const char* to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::FedAvg: return "fedavg";
    case AggregationKind::Krum: return "krum";
    case AggregationKind::TrimmedMean: return "trimmed_mean";
  }
  return "?";
}

AggregationKind aggregation_from_string(std::string_view name) {
  if (name == "fedavg") return AggregationKind::FedAvg;
  if (name == "krum") return AggregationKind::Krum;
  if (name == "trimmed_mean") return AggregationKind::TrimmedMean;
  throw ConfigError("unknown aggregation: " + std::string(name));
}

void FederationConfig::validate() const {
  if (num_clients < 2) throw ConfigError("num_clients must be >= 2");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (episodes_per_round < 0) throw ConfigError("episodes_per_round must be >= 0");
  aggregation.validate();
  if (aggregation.kind == AggregationKind::TrimmedMean) {
    const int t = static_cast<int>(aggregation.trim_fraction * num_clients);
    if (num_clients - 2 * t < 1) throw ConfigError("trim_fraction removes every client");
  }
}

namespace {

void check_equal_lengths(std::span<const numkit::FlatVector> models) {
  if (models.empty()) throw ConfigError("aggregation: no models");
  const std::size_t n = models.front().values.size();
  for (const auto& m : models) {
    if (m.values.size() != n) throw ShapeError("aggregation: model length mismatch");
  }
}

// Shared sort-trim-average kernel; fedavg is the trim=0 case so the two
// agree to the last bit.
numkit::FlatVector trimmed_kernel(std::span<const numkit::FlatVector> models,
                                  int trim_each_side) {
  check_equal_lengths(models);
  const int k = static_cast<int>(models.size());
  const int kept = k - 2 * trim_each_side;
  if (kept < 1) throw ConfigError("aggregation: trim removes every model");
  const std::size_t dim = models.front().values.size();
  numkit::FlatVector out;
  out.values.resize(dim);
  std::vector<double> column(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < dim; ++i) {
    for (int c = 0; c < k; ++c) column[static_cast<std::size_t>(c)] = models[c].values[i];
    std::sort(column.begin(), column.end());
    const double lo = column[static_cast<std::size_t>(trim_each_side)];
    const double hi = column[static_cast<std::size_t>(trim_each_side + kept - 1)];
    if (lo == hi) {
      out.values[i] = lo;  // exact idempotence on constant coordinates
      continue;
    }
    double sum = 0.0;
    for (int c = trim_each_side; c < trim_each_side + kept; ++c) {
      sum += column[static_cast<std::size_t>(c)];
    }
    out.values[i] = std::clamp(sum / kept, lo, hi);
  }
  return out;
}

}  // namespace

numkit::FlatVector fedavg(std::span<const numkit::FlatVector> models) {
  return trimmed_kernel(models, 0);
}

std::pair<numkit::FlatVector, int> krum(std::span<const numkit::FlatVector> models) {
  check_equal_lengths(models);
  const int k = static_cast<int>(models.size());
  if (k < 2) throw ConfigError("krum: need at least 2 models");
  std::vector<double> dist(static_cast<std::size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      double s = 0.0;
      const auto& a = models[i].values;
      const auto& b = models[j].values;
      for (std::size_t x = 0; x < a.size(); ++x) {
        const double d = a[x] - b[x];
        s += d * d;
      }
      const double e = std::sqrt(s);
      dist[static_cast<std::size_t>(i) * k + j] = e;
      dist[static_cast<std::size_t>(j) * k + i] = e;
    }
  }
  int best = 0;
  double best_score = 0.0;
  for (int i = 0; i < k; ++i) {
    double score = 0.0;
    for (int j = 0; j < k; ++j) score += dist[static_cast<std::size_t>(i) * k + j];
    if (i == 0 || score < best_score) {
      best = i;
      best_score = score;
    }
  }
  return {models[best], best};
}

numkit::FlatVector trimmed_mean(std::span<const numkit::FlatVector> models,
                                double trim_fraction) {
  if (trim_fraction < 0.0 || trim_fraction >= 0.5) {
    throw ConfigError("trim_fraction must be in [0, 0.5)");
  }
  const int trim = static_cast<int>(trim_fraction * static_cast<double>(models.size()));
  return trimmed_kernel(models, trim);
}

AggregateResult aggregate(const AggregationStrategy& strategy,
                          std::span<const numkit::FlatVector> models) {
  AggregateResult result;
  switch (strategy.kind) {
    case AggregationKind::FedAvg:
      result.global = fedavg(models);
      break;
    case AggregationKind::Krum: {
      auto [model, index] = krum(models);
      result.global = std::move(model);
      result.selected_index = index;
      break;
    }
    case AggregationKind::TrimmedMean:
      result.global = trimmed_mean(models, strategy.trim_fraction);
      break;
  }
  return result;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    log::warn("model_similarity: zero vector, similarity reported as 0");
    return 0.0;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<std::vector<double>> model_similarity(std::span<const numkit::FlatVector> models,
                                                  const numkit::FlatVector& global) {
  for (const auto& m : models) {
    if (m.values.size() != global.values.size()) {
      throw ShapeError("model_similarity: length mismatch");
    }
  }
  const std::size_t n = models.size() + 1;
  std::vector<const std::vector<double>*> all;
  all.reserve(n);
  for (const auto& m : models) all.push_back(&m.values);
  all.push_back(&global.values);
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double c = cosine(*all[i], *all[j]);
      sim[i][j] = c;
      sim[j][i] = c;
    }
  }
  return sim;
}

RoundRecord run_round(FederationState& state, const RoundObserver& observer) {
  const int round = state.rounds_done + 1;
  const auto& specs = state.clients.front().agent.q_net.layers;
  const bool sample_poison =
      state.adversary_cfg.kind.type == adversary::AttackType::SamplePoisoning;
  const bool label_flip =
      state.adversary_cfg.kind.type == adversary::AttackType::LabelFlipping;
  const bool model_poison =
      state.adversary_cfg.kind.type == adversary::AttackType::ModelPoisoning;

  RoundRecord record;
  record.round_index = round;

  std::vector<numkit::FlatVector> locals;
  locals.reserve(state.clients.size());
  for (std::size_t c = 0; c < state.clients.size(); ++c) {
    auto& client = state.clients[c];
    agent::EpisodeContext ctx;
    ctx.profiles = &state.profiles;
    ctx.env_cfg = &state.env_cfg;
    ctx.stats = &client.ad.stats;
    const anomaly::AdModel* ad = &client.ad;
    ctx.detect_trigger = [ad](const env::Fingerprint& f) { return anomaly::detect(*ad, f); };
    if (client.poisoned && label_flip) {
      ctx.detect_reward = [ad](const env::Fingerprint& f) {
        return adversary::flip_verdict(anomaly::detect(*ad, f));
      };
    } else {
      ctx.detect_reward = ctx.detect_trigger;
    }
    if (client.poisoned && sample_poison) {
      const auto* stds = &client.poison_feature_stds;
      const double ratio = state.adversary_cfg.kind.noise_ratio;
      ctx.transform = [stds, ratio](env::Fingerprint f, Rng& rng) {
        return adversary::poison_sample(std::move(f), *stds, ratio, rng);
      };
    }

    double loss_sum = 0.0;
    int completed = 0;
    int attempts = 0;
    const int budget = state.cfg.episodes_per_round;
    const int attempt_cap = budget * 4 + 16;
    try {
      while (completed < budget && attempts < attempt_cap) {
        ++attempts;
        const auto outcome =
            agent::run_episode(client.agent, ctx, client.allowed, state.agent_hyper, client.rng);
        if (!outcome.has_value()) continue;  // detector false negative, episode skipped
        loss_sum += outcome->mean_td_loss;
        ++completed;
      }
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(round) + ", client " + std::to_string(c) +
                         ": " + e.what());
    }
    if (completed < budget) {
      log::warn("round " + std::to_string(round) + ", client " + std::to_string(c) +
                ": only " + std::to_string(completed) + "/" + std::to_string(budget) +
                " episodes ran (detector false negatives)");
    }
    record.per_client_loss.push_back(completed > 0 ? loss_sum / completed : 0.0);

    if (client.poisoned && model_poison) {
      const auto noisy = adversary::poison_model(
          client.agent.q_net, state.adversary_cfg.kind.noise_ratio, client.rng);
      locals.push_back(numkit::flatten(noisy));
    } else {
      locals.push_back(numkit::flatten(client.agent.q_net));
    }
  }

  auto agg = aggregate(state.cfg.aggregation, locals);
  state.global = std::move(agg.global);
  record.krum_selected = agg.selected_index;

  for (auto& client : state.clients) {
    client.agent.q_net = numkit::unflatten(state.global, specs);
    if (client.agent.target_net.has_value()) client.agent.target_net = client.agent.q_net;
  }

  // Clean held-out evaluation of the new global model.
  agent::Agent evaluator;
  evaluator.q_net = numkit::unflatten(state.global, specs);
  Rng eval_rng(child_seed(state.eval_seed, "round", static_cast<std::uint64_t>(round)));
  record.global_accuracy_per_malware =
      agent::greedy_accuracy(evaluator, state.profiles, state.eval_stats, env::kMalwareClasses,
                             state.eval_samples_per_class, eval_rng);
  double mean = 0.0;
  for (const auto& [m, acc] : record.global_accuracy_per_malware) mean += acc;
  record.mean_accuracy = mean / static_cast<double>(record.global_accuracy_per_malware.size());
  record.epsilon_snapshot =
      agent::epsilon_at(state.agent_hyper, state.clients.front().agent.episodes_done);

  if (observer) observer(round, locals, state.global);

  state.rounds_done = round;
  state.history.push_back(record);
  return record;
}

std::vector<RoundRecord> run_federation(FederationState& state, const RoundObserver& observer) {
  state.cfg.validate();
  while (state.rounds_done < state.cfg.rounds) {
    run_round(state, observer);
  }
  return state.history;
}

}  // namespace fedmtd::fed
