#pragma once

#include <json.hpp>

#include "lumina/trainer.hpp"

namespace lumina::train {

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

}  // namespace lumina::train
