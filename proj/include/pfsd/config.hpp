#pragma once

#include <string>

#include <json.hpp>

#include "pfsd/trainer.hpp"

namespace pfsd {

// Strict parsers: unknown keys are rejected by name. Values present in the
// JSON override the supplied defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults);
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig defaults);

nlohmann::json train_config_to_json(const TrainConfig& cfg);

nlohmann::json load_json_file(const std::string& path);

}  // namespace pfsd
