#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedmtd/config.hpp"
#include "fedmtd/errors.hpp"
#include "fedmtd/experiments.hpp"
#include "fedmtd/log.hpp"

namespace fs = std::filesystem;
using fedmtd::ConfigError;
using fedmtd::ParseError;
namespace experiments = fedmtd::experiments;
namespace config = fedmtd::config;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes content under hash-deduped naming: identical existing content is
// left alone; conflicting content is an error (it would mean the run was not
// deterministic).
void write_dedup(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    if (read_file(path) == content) {
      fedmtd::log::info("unchanged, keeping existing " + path.string());
      return;
    }
    throw fedmtd::NumericError("refusing to clobber " + path.string() +
                               ": existing content differs for the same config hash");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for write: " + path.string());
  out << content;
}

std::string metrics_to_string(const experiments::MetricsLog& log) {
  const fs::path tmp = fs::temp_directory_path() /
                       ("fedmtd_metrics_" + std::to_string(::getpid()) + ".csv");
  experiments::write_metrics_csv(log, tmp.string());
  std::string content = read_file(tmp);
  fs::remove(tmp);
  return content;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

std::optional<double> parse_summary_value(const fs::path& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string k;
  std::string v;
  while (in >> k >> v) {
    if (k == key) {
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
  }
  return std::nullopt;
}

std::string build_summary(const experiments::ExperimentConfig& cfg, const std::string& hash,
                          const experiments::MetricsLog& log,
                          const std::optional<experiments::MetricsLog>& baseline,
                          const fs::path& out_dir) {
  std::ostringstream s;
  s << "fedmtd run summary\n";
  s << "config_hash " << hash << "\n";
  s << "scenario " << experiments::to_string(cfg.scenario.kind) << "\n";
  s << "aggregation " << fedmtd::fed::to_string(cfg.fed.aggregation.kind) << "\n";
  s << "adversary " << fedmtd::adversary::to_string(cfg.adversary_cfg.kind.type) << "\n";
  s << "pnr " << fmt(cfg.adversary_cfg.pnr) << "\n";
  s << "rounds " << cfg.fed.rounds << "\n";
  const auto& last = log.rows.back();
  s << "final_mean_accuracy " << fmt(last.mean_accuracy) << "\n";
  for (std::size_t i = 0; i < fedmtd::env::kMalwareClasses.size(); ++i) {
    s << "final_accuracy_" << fedmtd::env::to_string(fedmtd::env::kMalwareClasses[i]) << " "
      << fmt(last.per_malware[i]) << "\n";
  }
  if (last.absent_accuracy.has_value()) {
    s << "final_absent_accuracy " << fmt(*last.absent_accuracy) << "\n";
  }
  for (const double thr : {0.90, 0.96}) {
    const auto eps = experiments::episodes_to_threshold(log, thr, cfg.fed.episodes_per_round);
    s << "episodes_to_threshold_" << fmt(thr) << " "
      << (eps.has_value() ? std::to_string(*eps) : "none") << "\n";
  }
  if (baseline.has_value() && !baseline->rows.empty()) {
    s << "baseline_final_mean_accuracy " << fmt(baseline->rows.back().mean_accuracy) << "\n";
    for (const double thr : {0.90, 0.96}) {
      const auto eps = experiments::episodes_to_threshold(*baseline, thr,
                                                          experiments::kBaselineLogEvery);
      s << "baseline_episodes_to_threshold_" << fmt(thr) << " "
        << (eps.has_value() ? std::to_string(*eps) : "none") << "\n";
    }
  }
  if (cfg.adversary_cfg.kind.type != fedmtd::adversary::AttackType::None) {
    auto clean = cfg;
    clean.adversary_cfg = {};
    const auto clean_hash = config::config_hash(clean);
    const auto ref =
        parse_summary_value(out_dir / ("summary_" + clean_hash + ".txt"),
                            "final_mean_accuracy");
    if (ref.has_value()) {
      s << "clean_reference_mean " << fmt(*ref) << "\n";
      s << "below_clean_reference " << (last.mean_accuracy < *ref ? "true" : "false") << "\n";
    } else {
      s << "clean_reference_mean unavailable\n";
    }
  }
  return s.str();
}

int cmd_run(const experiments::ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::string hash = config::config_hash(cfg);
  const auto log = experiments::run_experiment(cfg);
  if (log.rows.empty()) throw ConfigError("experiment produced no rounds");
  write_dedup(out_dir / ("metrics_" + hash + ".csv"), metrics_to_string(log));

  std::optional<experiments::MetricsLog> baseline;
  if (cfg.run_baseline) {
    baseline = experiments::run_centralized_baseline(cfg);
    write_dedup(out_dir / ("baseline_" + hash + ".csv"), metrics_to_string(*baseline));
  }
  write_dedup(out_dir / ("summary_" + hash + ".txt"),
              build_summary(cfg, hash, log, baseline, out_dir));
  std::cout << "metrics_" << hash << ".csv\n";
  return kExitOk;
}

experiments::ExperimentConfig apply_axis(experiments::ExperimentConfig cfg,
                                         const std::string& axis, const std::string& value) {
  if (axis == "pnr") {
    cfg.adversary_cfg.pnr = std::stod(value);
  } else if (axis == "missing_ratio") {
    if (cfg.scenario.kind != experiments::ScenarioKind::WeakNonIid &&
        cfg.scenario.kind != experiments::ScenarioKind::FamilyAbsence) {
      throw ConfigError("missing_ratio axis needs a weak_non_iid or family_absence scenario");
    }
    cfg.scenario.missing_ratio = std::stod(value);
  } else if (axis == "aggregation") {
    cfg.fed.aggregation.kind = fedmtd::fed::aggregation_from_string(value);
  } else if (axis == "clients") {
    cfg.fed.num_clients = std::stoi(value);
  } else {
    throw ConfigError("unknown sweep axis: " + axis);
  }
  return cfg;
}

int cmd_sweep(const experiments::ExperimentConfig& base, const std::string& axis,
              const std::vector<std::string>& values, const fs::path& out_dir, int jobs) {
  fs::create_directories(out_dir);
  const std::string base_hash = config::config_hash(base);

  struct Item {
    std::string value;
    experiments::ExperimentConfig cfg;
    std::optional<experiments::MetricsRow> final_row;
    std::string error;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < values.size(); ++i) {
    Item item;
    item.value = values[i];
    item.cfg = apply_axis(base, axis, values[i]);  // config errors abort the sweep up front
    item.cfg.fed.master_seed = base.fed.master_seed ^ static_cast<std::uint64_t>(i);
    items.push_back(std::move(item));
  }

  auto run_one = [&out_dir](Item& item) {
    try {
      const std::string hash = config::config_hash(item.cfg);
      const auto log = experiments::run_experiment(item.cfg);
      write_dedup(out_dir / ("metrics_" + hash + ".csv"), metrics_to_string(log));
      item.final_row = log.rows.back();
    } catch (const std::exception& e) {
      item.error = e.what();
    }
  };

  if (jobs <= 1) {
    for (auto& item : items) run_one(item);
  } else {
    std::vector<std::future<void>> pending;
    for (auto& item : items) {
      if (static_cast<int>(pending.size()) >= jobs) {
        pending.front().get();
        pending.erase(pending.begin());
      }
      pending.push_back(std::async(std::launch::async, [&item, &run_one] { run_one(item); }));
    }
    for (auto& f : pending) f.get();
  }

  std::ostringstream agg;
  agg << "value," << experiments::kMetricsHeader << "\n";
  bool any_failed = false;
  for (const auto& item : items) {
    if (!item.final_row.has_value()) {
      any_failed = true;
      fedmtd::log::error("sweep value " + item.value + " failed: " + item.error);
      continue;
    }
    const auto& r = *item.final_row;
    agg << item.value << "," << r.round << "," << fmt(r.mean_accuracy);
    for (const double a : r.per_malware) agg << "," << fmt(a);
    agg << ",";
    if (r.absent_accuracy.has_value()) agg << fmt(*r.absent_accuracy);
    agg << "," << fmt(r.epsilon) << "," << r.aggregation << "," << fmt(r.pnr) << ","
        << r.attack << "\n";
  }
  write_dedup(out_dir / ("sweep_" + axis + "_" + base_hash + ".csv"), agg.str());
  if (any_failed) {
    std::ostringstream failures;
    for (const auto& item : items) {
      if (!item.final_row.has_value()) {
        failures << item.value << " " << item.error << "\n";
      }
    }
    std::ofstream out(out_dir / ("sweep_" + axis + "_" + base_hash + "_failures.txt"));
    out << failures.str();
  }
  std::cout << "sweep_" << axis << "_" << base_hash << ".csv\n";
  return any_failed ? kExitRuntime : kExitOk;
}

int cmd_plot_data(const std::string& metrics_csv, const std::string& series,
                  const std::string& out_path) {
  const auto log = experiments::read_metrics_csv(metrics_csv);
  const auto colon = series.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("series spec must be <x_column>:<y_column>");
  }
  const std::string xs = series.substr(0, colon);
  const std::string ys = series.substr(colon + 1);

  auto column = [](const experiments::MetricsRow& r,
                   const std::string& name) -> std::optional<double> {
    if (name == "round") return static_cast<double>(r.round);
    if (name == "mean_accuracy") return r.mean_accuracy;
    if (name == "acc_the_tick") return r.per_malware[0];
    if (name == "acc_jakoritar") return r.per_malware[1];
    if (name == "acc_dataleak") return r.per_malware[2];
    if (name == "acc_beurk") return r.per_malware[3];
    if (name == "acc_bdvl") return r.per_malware[4];
    if (name == "acc_ransomware_poc") return r.per_malware[5];
    if (name == "absent_accuracy") return r.absent_accuracy;
    if (name == "epsilon") return r.epsilon;
    if (name == "pnr") return r.pnr;
    throw ConfigError("unknown column \"" + name + "\"; numeric columns: round, mean_accuracy, "
                      "acc_the_tick, acc_jakoritar, acc_dataleak, acc_beurk, acc_bdvl, "
                      "acc_ransomware_poc, absent_accuracy, epsilon, pnr");
  };

  std::ostringstream out;
  for (const auto& row : log.rows) {
    const auto x = column(row, xs);
    const auto y = column(row, ys);
    if (!x.has_value() || !y.has_value()) continue;
    out << fmt(*x) << " " << fmt(*y) << "\n";
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw ParseError("cannot open for write: " + out_path);
  f << out.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedmtd: federated MTD-selection simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string axis;
  std::string values_csv;
  std::string metrics_csv;
  std::string series;
  std::string plot_out;
  int jobs = 1;
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  auto* validate = app.add_subcommand("validate", "check a config file");
  validate->add_option("--config", config_path, "config file")->required();

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--seed", seed_override, "master seed override")
      ->each([&seed_given](const std::string&) { seed_given = true; });

  auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--axis", axis, "pnr|missing_ratio|aggregation|clients")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--jobs", jobs, "parallel experiments");
  sweep->add_option("--seed", seed_override, "master seed override")
      ->each([&seed_given](const std::string&) { seed_given = true; });

  auto* plot = app.add_subcommand("plot-data", "emit an (x,y) series from a metrics CSV");
  plot->add_option("--metrics", metrics_csv, "metrics CSV")->required();
  plot->add_option("--series", series, "x_column:y_column")->required();
  plot->add_option("--out", plot_out, "output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(validate)) {
      auto cfg = config::load_file(config_path);
      cfg.validate();
      std::cout << "ok " << config::config_hash(cfg) << "\n";
      return kExitOk;
    }
    if (app.got_subcommand(run)) {
      auto cfg = config::load_file(config_path);
      if (seed_given) cfg.fed.master_seed = seed_override;
      cfg.validate();
      return cmd_run(cfg, out_dir);
    }
    if (app.got_subcommand(sweep)) {
      auto cfg = config::load_file(config_path);
      if (seed_given) cfg.fed.master_seed = seed_override;
      cfg.validate();
      std::vector<std::string> values;
      std::stringstream ss(values_csv);
      std::string v;
      while (std::getline(ss, v, ',')) {
        if (!v.empty()) values.push_back(v);
      }
      if (values.empty()) throw ConfigError("sweep: no values given");
      return cmd_sweep(cfg, axis, values, out_dir, jobs);
    }
    if (app.got_subcommand(plot)) {
      return cmd_plot_data(metrics_csv, series, plot_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
