#include "fedmtd/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedmtd/errors.hpp"
#include "fedmtd/log.hpp"

namespace fedmtd::experiments {

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Iid: return "iid";
    case ScenarioKind::WeakNonIid: return "weak_non_iid";
    case ScenarioKind::StrongNonIid: return "strong_non_iid";
    case ScenarioKind::FamilyAbsence: return "family_absence";
  }
  return "?";
}

ScenarioKind scenario_from_string(std::string_view name) {
  if (name == "iid") return ScenarioKind::Iid;
  if (name == "weak_non_iid") return ScenarioKind::WeakNonIid;
  if (name == "strong_non_iid") return ScenarioKind::StrongNonIid;
  if (name == "family_absence") return ScenarioKind::FamilyAbsence;
  throw ConfigError("unknown scenario kind: " + std::string(name));
}

void ScenarioSpec::validate() const {
  if (kind == ScenarioKind::WeakNonIid || kind == ScenarioKind::FamilyAbsence) {
    if (missing_ratio < 0.0 || missing_ratio > 1.0) {
      throw ConfigError("scenario: missing_ratio must be in [0,1]");
    }
  }
  if (kind == ScenarioKind::WeakNonIid && absent_malware == env::BehaviorClass::Normal) {
    throw ConfigError("scenario: absent_malware must be a malware class");
  }
  if (kind == ScenarioKind::FamilyAbsence) {
    family_probe(absent_family);  // rejects single-member families
  }
}

env::BehaviorClass family_probe(env::MalwareFamily family) {
  switch (family) {
    case env::MalwareFamily::Rootkit: return env::BehaviorClass::Bdvl;
    case env::MalwareFamily::CnC: return env::BehaviorClass::Jakoritar;
    case env::MalwareFamily::Ransomware:
      throw ConfigError("family_absence: ransomware family has a single member");
  }
  throw ConfigError("family_absence: unknown family");
}

std::vector<env::BehaviorClass> family_donors(env::MalwareFamily family) {
  const auto probe = family_probe(family);
  std::vector<env::BehaviorClass> donors;
  for (const auto m : env::kMalwareClasses) {
    if (env::family_of(m) == family && m != probe) donors.push_back(m);
  }
  return donors;
}

std::optional<env::BehaviorClass> Scenario::tracked_absent() const {
  switch (spec.kind) {
    case ScenarioKind::WeakNonIid: return spec.absent_malware;
    case ScenarioKind::FamilyAbsence: return family_probe(spec.absent_family);
    default: return std::nullopt;
  }
}

namespace {

std::vector<int> pick_clients(int num_clients, int count, Rng& rng) {
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<env::BehaviorClass> all_malware() {
  return {env::kMalwareClasses.begin(), env::kMalwareClasses.end()};
}

std::vector<env::BehaviorClass> without(const std::vector<env::BehaviorClass>& base,
                                        const std::vector<env::BehaviorClass>& missing) {
  std::vector<env::BehaviorClass> out;
  for (const auto m : base) {
    if (std::find(missing.begin(), missing.end(), m) == missing.end()) out.push_back(m);
  }
  return out;
}

}  // namespace

Scenario make_scenario(const ScenarioSpec& spec, int num_clients, std::uint64_t seed) {
  spec.validate();
  if (num_clients < 1) throw ConfigError("make_scenario: num_clients must be >= 1");
  Rng rng(seed);
  Scenario scenario;
  scenario.spec = spec;
  auto& allowed = scenario.per_client_allowed;
  allowed.assign(static_cast<std::size_t>(num_clients), all_malware());

  switch (spec.kind) {
    case ScenarioKind::Iid:
      break;
    case ScenarioKind::WeakNonIid: {
      const int n_missing = static_cast<int>(std::llround(spec.missing_ratio * num_clients));
      for (const int c : pick_clients(num_clients, n_missing, rng)) {
        allowed[static_cast<std::size_t>(c)] = without(all_malware(), {spec.absent_malware});
      }
      break;
    }
    case ScenarioKind::StrongNonIid: {
      // Three classes absent per client, drawn uniformly.
      for (auto& set : allowed) {
        auto classes = all_malware();
        for (std::size_t i = 0; i < 3; ++i) {
          const auto j = i + rng.uniform_index(classes.size() - i);
          std::swap(classes[i], classes[j]);
        }
        classes.resize(3);
        std::sort(classes.begin(), classes.end());
        set = classes;
      }
      break;
    }
    case ScenarioKind::FamilyAbsence: {
      const auto probe = family_probe(spec.absent_family);
      const auto donors = family_donors(spec.absent_family);
      for (auto& set : allowed) set = without(set, donors);
      const int n_missing = static_cast<int>(std::llround(spec.missing_ratio * num_clients));
      for (const int c : pick_clients(num_clients, n_missing, rng)) {
        allowed[static_cast<std::size_t>(c)] = without(allowed[static_cast<std::size_t>(c)],
                                                       {probe});
      }
      break;
    }
  }
  for (const auto& set : allowed) {
    if (set.empty()) throw ConfigError("make_scenario: produced an empty exposure set");
  }
  return scenario;
}

void ExperimentConfig::validate() const {
  env.validate();
  ad_hyper.validate();
  if (ad_train_samples < 100) throw ConfigError("ad_train_samples must be >= 100");
  agent_hyper.validate();
  fed.validate();
  scenario.validate();
  adversary_cfg.validate();
  if (eval_samples_per_class < 1) throw ConfigError("eval_samples_per_class must be >= 1");
}

namespace {

std::vector<env::Fingerprint> draw_normals(const env::ProfileSet& profiles, int count,
                                           std::uint64_t seed) {
  Rng rng(seed);
  std::vector<env::Fingerprint> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    samples.push_back(env::sample_fingerprint(profiles, env::BehaviorClass::Normal, rng));
  }
  return samples;
}

std::vector<double> feature_stds(const std::vector<env::Fingerprint>& samples) {
  const std::size_t dim = samples.front().values.size();
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
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    out[i] = std::sqrt(var[i] / static_cast<double>(samples.size()));
  }
  return out;
}

MetricsRow row_from_record(const fed::RoundRecord& record, const Scenario& scenario,
                           const ExperimentConfig& cfg) {
  MetricsRow row;
  row.round = record.round_index;
  row.mean_accuracy = record.mean_accuracy;
  for (std::size_t i = 0; i < env::kMalwareClasses.size(); ++i) {
    row.per_malware[i] = record.global_accuracy_per_malware.at(env::kMalwareClasses[i]);
  }
  if (const auto tracked = scenario.tracked_absent(); tracked.has_value()) {
    row.absent_accuracy = record.global_accuracy_per_malware.at(*tracked);
  }
  row.epsilon = record.epsilon_snapshot;
  row.aggregation = to_string(cfg.fed.aggregation.kind);
  row.pnr = cfg.adversary_cfg.pnr;
  row.attack = to_string(cfg.adversary_cfg.kind.type);
  return row;
}

}  // namespace

fed::FederationState prepare_federation(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::uint64_t master = cfg.fed.master_seed;

  fed::FederationState state;
  state.cfg = cfg.fed;
  state.agent_hyper = cfg.agent_hyper;
  state.env_cfg = cfg.env;
  state.adversary_cfg = cfg.adversary_cfg;
  state.eval_samples_per_class = cfg.eval_samples_per_class;
  state.eval_seed = child_seed(master, "eval");
  state.profiles = env::build_profiles(cfg.env, child_seed(master, "env"));

  const auto scenario = make_scenario(cfg.scenario, cfg.fed.num_clients,
                                      child_seed(master, "scenario"));
  const std::uint64_t adv_seed =
      cfg.adversary_cfg.seed != 0 ? cfg.adversary_cfg.seed : child_seed(master, "adversary");
  const auto poisoned =
      adversary::select_poisoned(cfg.fed.num_clients, cfg.adversary_cfg.pnr, adv_seed);

  // Clean evaluator preprocessing stats from a dedicated normal sample set.
  const auto eval_normals =
      draw_normals(state.profiles, cfg.ad_train_samples, child_seed(master, "evaluator"));
  state.eval_stats = anomaly::preprocess(eval_normals).stats;

  // Shared initial network distributed to every client.
  const auto init_model = numkit::mlp_init(
      agent::q_network_specs(cfg.env.feature_dim, cfg.agent_hyper),
      child_seed(master, "global_init"));
  state.global = numkit::flatten(init_model);

  state.clients.reserve(static_cast<std::size_t>(cfg.fed.num_clients));
  for (int c = 0; c < cfg.fed.num_clients; ++c) {
    fed::ClientState client;
    const auto normals = draw_normals(state.profiles, cfg.ad_train_samples,
                                      child_seed(master, "ad_samples", c));
    client.poison_feature_stds = feature_stds(normals);
    client.ad = anomaly::train_ad(normals, cfg.ad_hyper, child_seed(master, "ad_train", c));
    client.agent = agent::make_agent(cfg.env.feature_dim, cfg.agent_hyper,
                                     child_seed(master, "agent_init", c));
    client.agent.q_net = init_model;
    if (client.agent.target_net.has_value()) client.agent.target_net = init_model;
    client.allowed = scenario.per_client_allowed[static_cast<std::size_t>(c)];
    client.poisoned = std::find(poisoned.begin(), poisoned.end(), c) != poisoned.end();
    client.rng = Rng(child_seed(master, "client", c));
    state.clients.push_back(std::move(client));
  }
  return state;
}

MetricsLog run_experiment(const ExperimentConfig& cfg, const fed::RoundObserver& observer) {
  auto state = prepare_federation(cfg);
  const auto scenario = make_scenario(cfg.scenario, cfg.fed.num_clients,
                                      child_seed(cfg.fed.master_seed, "scenario"));
  const auto records = fed::run_federation(state, observer);
  MetricsLog log;
  log.rows.reserve(records.size());
  for (const auto& record : records) {
    log.rows.push_back(row_from_record(record, scenario, cfg));
  }
  return log;
}

MetricsLog run_centralized_baseline(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::uint64_t master = cfg.fed.master_seed;
  const auto profiles = env::build_profiles(cfg.env, child_seed(master, "env"));

  const auto eval_normals =
      draw_normals(profiles, cfg.ad_train_samples, child_seed(master, "evaluator"));
  const auto eval_stats = anomaly::preprocess(eval_normals).stats;

  const auto normals =
      draw_normals(profiles, cfg.ad_train_samples, child_seed(master, "baseline_ad_samples"));
  const auto ad = anomaly::train_ad(normals, cfg.ad_hyper, child_seed(master, "baseline_ad"));

  agent::Agent one = agent::make_agent(cfg.env.feature_dim, cfg.agent_hyper,
                                       child_seed(master, "global_init"));
  Rng rng(child_seed(master, "baseline_client"));

  agent::EpisodeContext ctx;
  ctx.profiles = &profiles;
  ctx.env_cfg = &cfg.env;
  ctx.stats = &ad.stats;
  ctx.detect_trigger = [&ad](const env::Fingerprint& f) { return anomaly::detect(ad, f); };
  ctx.detect_reward = ctx.detect_trigger;

  const auto allowed = all_malware();
  const long total = static_cast<long>(cfg.fed.num_clients) * cfg.fed.rounds *
                     cfg.fed.episodes_per_round;

  MetricsLog log;
  long completed = 0;
  long attempts = 0;
  const long attempt_cap = total * 4 + 16;
  int block = 0;
  while (completed < total && attempts < attempt_cap) {
    ++attempts;
    const auto outcome = agent::run_episode(one, ctx, allowed, cfg.agent_hyper, rng);
    if (!outcome.has_value()) continue;
    ++completed;
    if (completed % kBaselineLogEvery == 0 || completed == total) {
      ++block;
      Rng eval_rng(child_seed(master, "baseline_eval", static_cast<std::uint64_t>(block)));
      const auto acc = agent::greedy_accuracy(one, profiles, eval_stats, env::kMalwareClasses,
                                              cfg.eval_samples_per_class, eval_rng);
      MetricsRow row;
      row.round = block;
      double mean = 0.0;
      for (std::size_t i = 0; i < env::kMalwareClasses.size(); ++i) {
        row.per_malware[i] = acc.at(env::kMalwareClasses[i]);
        mean += row.per_malware[i];
      }
      row.mean_accuracy = mean / static_cast<double>(env::kMalwareClasses.size());
      row.epsilon = agent::epsilon_at(cfg.agent_hyper, one.episodes_done);
      row.aggregation = "centralized";
      row.pnr = 0.0;
      row.attack = "none";
      log.rows.push_back(row);
    }
  }
  return log;
}

std::optional<long> episodes_to_threshold(const MetricsLog& log, double threshold,
                                          int episodes_per_row) {
  if (threshold <= 0.0 || threshold > 1.0) {
    throw ConfigError("episodes_to_threshold: threshold must be in (0,1]");
  }
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    if (log.rows[i].mean_accuracy >= threshold) {
      return static_cast<long>(i + 1) * episodes_per_row;
    }
  }
  return std::nullopt;
}

namespace {

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for write: " + path);
  out << kMetricsHeader << "\n";
  for (const auto& row : log.rows) {
    out << row.round << "," << format_double(row.mean_accuracy);
    for (const double acc : row.per_malware) out << "," << format_double(acc);
    out << ",";
    if (row.absent_accuracy.has_value()) out << format_double(*row.absent_accuracy);
    out << "," << format_double(row.epsilon) << "," << row.aggregation << ","
        << format_double(row.pnr) << "," << row.attack << "\n";
  }
}

MetricsLog read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: empty file");
  if (line != kMetricsHeader) throw ParseError(path + ":1: unexpected header");
  MetricsLog log;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 13) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 13 fields, got " +
                       std::to_string(fields.size()));
    }
    try {
      MetricsRow row;
      row.round = std::stoi(fields[0]);
      row.mean_accuracy = std::stod(fields[1]);
      for (std::size_t i = 0; i < 6; ++i) row.per_malware[i] = std::stod(fields[2 + i]);
      if (!fields[8].empty()) row.absent_accuracy = std::stod(fields[8]);
      row.epsilon = std::stod(fields[9]);
      row.aggregation = fields[10];
      row.pnr = std::stod(fields[11]);
      row.attack = fields[12];
      log.rows.push_back(std::move(row));
    } catch (const std::exception&) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed numeric field");
    }
  }
  return log;
}

}  // namespace fedmtd::experiments
