#include "fedmtd/config.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>

#include "fedmtd/errors.hpp"

namespace fedmtd::config {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_activation(const json& j, const char* key, numkit::Activation& out) {
  if (j.contains(key)) out = numkit::activation_from_string(j.at(key).get<std::string>());
}

void check_loss(const json& j, const std::string& where) {
  if (j.contains("loss") && j.at("loss").get<std::string>() != "rmse") {
    throw ConfigError("config: only the rmse loss is supported (" + where + ")");
  }
}

env::EnvConfig env_from_json(const json& j) {
  env::EnvConfig cfg;
  reject_unknown(j,
                 {"feature_dim", "family_offset_magnitude", "within_family_spread",
                  "noise_scale", "confusability"},
                 "env");
  get_if(j, "feature_dim", cfg.feature_dim);
  get_if(j, "family_offset_magnitude", cfg.family_offset_magnitude);
  get_if(j, "within_family_spread", cfg.within_family_spread);
  get_if(j, "noise_scale", cfg.noise_scale);
  if (j.contains("confusability")) {
    for (const auto& [name, value] : j.at("confusability").items()) {
      cfg.confusability[env::behavior_from_string(name)] = value.get<double>();
    }
  }
  return cfg;
}

anomaly::AdHyper ad_from_json(const json& j) {
  anomaly::AdHyper h;
  reject_unknown(j,
                 {"encoder_dims", "activation", "batch_norm", "loss", "learning_rate", "l2",
                  "batch_size", "early_stop_patience", "n_std", "max_epochs", "train_samples"},
                 "ad");
  check_loss(j, "ad");
  get_if(j, "encoder_dims", h.encoder_dims);
  get_activation(j, "activation", h.activation);
  get_if(j, "batch_norm", h.batch_norm);
  get_if(j, "learning_rate", h.learning_rate);
  get_if(j, "l2", h.l2);
  get_if(j, "batch_size", h.batch_size);
  get_if(j, "early_stop_patience", h.early_stop_patience);
  get_if(j, "n_std", h.n_std);
  get_if(j, "max_epochs", h.max_epochs);
  return h;
}

agent::AgentHyper agent_from_json(const json& j, const fed::FederationConfig& fed_cfg) {
  agent::AgentHyper h;
  reject_unknown(j,
                 {"q_dims", "activation", "dropout", "gamma", "learning_rate", "l2", "loss",
                  "epsilon_start", "epsilon_dec", "epsilon_end", "max_steps_per_episode",
                  "use_replay", "replay_capacity", "replay_batch", "use_target_net",
                  "target_sync_every"},
                 "agent");
  check_loss(j, "agent");
  get_if(j, "q_dims", h.q_dims);
  get_activation(j, "activation", h.activation);
  get_if(j, "dropout", h.dropout);
  get_if(j, "gamma", h.gamma);
  get_if(j, "learning_rate", h.learning_rate);
  get_if(j, "l2", h.l2);
  get_if(j, "epsilon_start", h.epsilon_start);
  get_if(j, "epsilon_end", h.epsilon_end);
  get_if(j, "max_steps_per_episode", h.max_steps_per_episode);
  get_if(j, "use_replay", h.use_replay);
  get_if(j, "replay_capacity", h.replay_capacity);
  get_if(j, "replay_batch", h.replay_batch);
  get_if(j, "use_target_net", h.use_target_net);
  get_if(j, "target_sync_every", h.target_sync_every);
  if (j.contains("epsilon_dec")) {
    h.epsilon_dec = j.at("epsilon_dec").get<double>();
  } else {
    const long per_client =
        static_cast<long>(fed_cfg.rounds) * fed_cfg.episodes_per_round;
    h.epsilon_dec = per_client > 0 ? 0.8 / static_cast<double>(per_client) : 0.0;
  }
  return h;
}

fed::FederationConfig fed_from_json(const json& j) {
  fed::FederationConfig cfg;
  reject_unknown(j,
                 {"num_clients", "rounds", "episodes_per_round", "aggregation",
                  "trim_fraction", "master_seed"},
                 "federation");
  get_if(j, "num_clients", cfg.num_clients);
  get_if(j, "rounds", cfg.rounds);
  get_if(j, "episodes_per_round", cfg.episodes_per_round);
  if (j.contains("aggregation")) {
    cfg.aggregation.kind = fed::aggregation_from_string(j.at("aggregation").get<std::string>());
  }
  get_if(j, "trim_fraction", cfg.aggregation.trim_fraction);
  get_if(j, "master_seed", cfg.master_seed);
  return cfg;
}

experiments::ScenarioSpec scenario_from_json(const json& j) {
  experiments::ScenarioSpec spec;
  reject_unknown(j, {"kind", "absent_malware", "family", "missing_ratio"}, "scenario");
  if (j.contains("kind")) {
    spec.kind = experiments::scenario_from_string(j.at("kind").get<std::string>());
  }
  if (j.contains("absent_malware")) {
    spec.absent_malware = env::behavior_from_string(j.at("absent_malware").get<std::string>());
  }
  if (j.contains("family")) {
    const auto name = j.at("family").get<std::string>();
    if (name == "cnc") {
      spec.absent_family = env::MalwareFamily::CnC;
    } else if (name == "rootkit") {
      spec.absent_family = env::MalwareFamily::Rootkit;
    } else if (name == "ransomware") {
      spec.absent_family = env::MalwareFamily::Ransomware;
    } else {
      throw ConfigError("config: unknown family \"" + name + "\"");
    }
  }
  get_if(j, "missing_ratio", spec.missing_ratio);
  return spec;
}

adversary::AdversaryConfig adversary_from_json(const json& j) {
  adversary::AdversaryConfig cfg;
  reject_unknown(j, {"kind", "noise_ratio", "pnr", "seed"}, "adversary");
  if (j.contains("kind")) {
    cfg.kind.type = adversary::attack_from_string(j.at("kind").get<std::string>());
  }
  get_if(j, "noise_ratio", cfg.kind.noise_ratio);
  get_if(j, "pnr", cfg.pnr);
  get_if(j, "seed", cfg.seed);
  return cfg;
}

}  // namespace

experiments::ExperimentConfig from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"env", "ad", "agent", "federation", "scenario", "adversary",
                  "eval_samples_per_class", "run_baseline", "output_dir"},
                 "config root");
  experiments::ExperimentConfig cfg;
  if (j.contains("env")) cfg.env = env_from_json(j.at("env"));
  if (j.contains("ad")) {
    cfg.ad_hyper = ad_from_json(j.at("ad"));
    if (j.at("ad").contains("train_samples")) {
      cfg.ad_train_samples = j.at("ad").at("train_samples").get<int>();
    }
  }
  if (j.contains("federation")) cfg.fed = fed_from_json(j.at("federation"));
  cfg.agent_hyper = agent_from_json(j.contains("agent") ? j.at("agent") : json::object(),
                                    cfg.fed);
  if (j.contains("scenario")) cfg.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("adversary")) cfg.adversary_cfg = adversary_from_json(j.at("adversary"));
  if (j.contains("eval_samples_per_class")) {
    cfg.eval_samples_per_class = j.at("eval_samples_per_class").get<int>();
  }
  if (j.contains("run_baseline")) cfg.run_baseline = j.at("run_baseline").get<bool>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  return cfg;
}

nlohmann::json to_json(const experiments::ExperimentConfig& cfg) {
  nlohmann::json j;
  auto& e = j["env"];
  e["feature_dim"] = cfg.env.feature_dim;
  e["family_offset_magnitude"] = cfg.env.family_offset_magnitude;
  e["within_family_spread"] = cfg.env.within_family_spread;
  e["noise_scale"] = cfg.env.noise_scale;
  for (const auto& [b, c] : cfg.env.confusability) {
    e["confusability"][env::to_string(b)] = c;
  }

  auto& a = j["ad"];
  a["encoder_dims"] = cfg.ad_hyper.encoder_dims;
  a["activation"] = numkit::to_string(cfg.ad_hyper.activation);
  a["batch_norm"] = cfg.ad_hyper.batch_norm;
  a["loss"] = "rmse";
  a["learning_rate"] = cfg.ad_hyper.learning_rate;
  a["l2"] = cfg.ad_hyper.l2;
  a["batch_size"] = cfg.ad_hyper.batch_size;
  a["early_stop_patience"] = cfg.ad_hyper.early_stop_patience;
  a["n_std"] = cfg.ad_hyper.n_std;
  a["max_epochs"] = cfg.ad_hyper.max_epochs;
  a["train_samples"] = cfg.ad_train_samples;

  auto& g = j["agent"];
  g["q_dims"] = cfg.agent_hyper.q_dims;
  g["activation"] = numkit::to_string(cfg.agent_hyper.activation);
  g["dropout"] = cfg.agent_hyper.dropout;
  g["gamma"] = cfg.agent_hyper.gamma;
  g["learning_rate"] = cfg.agent_hyper.learning_rate;
  g["l2"] = cfg.agent_hyper.l2;
  g["loss"] = "rmse";
  g["epsilon_start"] = cfg.agent_hyper.epsilon_start;
  g["epsilon_dec"] = cfg.agent_hyper.epsilon_dec;
  g["epsilon_end"] = cfg.agent_hyper.epsilon_end;
  g["max_steps_per_episode"] = cfg.agent_hyper.max_steps_per_episode;
  g["use_replay"] = cfg.agent_hyper.use_replay;
  g["replay_capacity"] = cfg.agent_hyper.replay_capacity;
  g["replay_batch"] = cfg.agent_hyper.replay_batch;
  g["use_target_net"] = cfg.agent_hyper.use_target_net;
  g["target_sync_every"] = cfg.agent_hyper.target_sync_every;

  auto& f = j["federation"];
  f["num_clients"] = cfg.fed.num_clients;
  f["rounds"] = cfg.fed.rounds;
  f["episodes_per_round"] = cfg.fed.episodes_per_round;
  f["aggregation"] = fed::to_string(cfg.fed.aggregation.kind);
  f["trim_fraction"] = cfg.fed.aggregation.trim_fraction;
  f["master_seed"] = cfg.fed.master_seed;

  auto& s = j["scenario"];
  s["kind"] = experiments::to_string(cfg.scenario.kind);
  if (cfg.scenario.kind == experiments::ScenarioKind::WeakNonIid) {
    s["absent_malware"] = env::to_string(cfg.scenario.absent_malware);
    s["missing_ratio"] = cfg.scenario.missing_ratio;
  }
  if (cfg.scenario.kind == experiments::ScenarioKind::FamilyAbsence) {
    s["family"] = cfg.scenario.absent_family == env::MalwareFamily::CnC ? "cnc"
                  : cfg.scenario.absent_family == env::MalwareFamily::Rootkit
                      ? "rootkit"
                      : "ransomware";
    s["missing_ratio"] = cfg.scenario.missing_ratio;
  }

  auto& v = j["adversary"];
  v["kind"] = adversary::to_string(cfg.adversary_cfg.kind.type);
  v["noise_ratio"] = cfg.adversary_cfg.kind.noise_ratio;
  v["pnr"] = cfg.adversary_cfg.pnr;
  v["seed"] = cfg.adversary_cfg.seed;

  j["eval_samples_per_class"] = cfg.eval_samples_per_class;
  j["run_baseline"] = cfg.run_baseline;
  return j;
}

experiments::ExperimentConfig load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

std::string config_hash(const experiments::ExperimentConfig& cfg) {
  const std::string dump = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const char c : dump) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x", static_cast<unsigned>(h & 0xffffffffu));
  return buf;
}

}  // namespace fedmtd::config
