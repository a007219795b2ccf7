#pragma once

#include <string>

#include <json.hpp>

#include "fedmtd/experiments.hpp"

namespace fedmtd::config {

// JSON config file <-> ExperimentConfig. Unknown keys are rejected so typos
// fail loudly. epsilon_dec defaults to 0.8 / (rounds * episodes_per_round)
// when the file does not pin it.
experiments::ExperimentConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const experiments::ExperimentConfig& cfg);

experiments::ExperimentConfig load_file(const std::string& path);

// Short stable hash of the canonical JSON form, for output file naming.
std::string config_hash(const experiments::ExperimentConfig& cfg);

}  // namespace fedmtd::config
