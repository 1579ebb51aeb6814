#pragma once

// JSON conversions for configuration structs. Missing keys keep their
// defaults; wrongly typed values throw nlohmann::json::type_error.

#include <nlohmann/json.hpp>

#include "tempo/dispatch.hpp"
#include "tempo/encoder.hpp"
#include "tempo/sim.hpp"
#include "tempo/taskmodel.hpp"
#include "tempo/trainer.hpp"
#include "tempo/urgency.hpp"

namespace tempo {

void to_json(nlohmann::json& j, const QuantizerConfig& c);
void from_json(const nlohmann::json& j, QuantizerConfig& c);
void to_json(nlohmann::json& j, const SparseConfig& c);
void from_json(const nlohmann::json& j, SparseConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const RewardConfig& c);
void from_json(const nlohmann::json& j, RewardConfig& c);
void to_json(nlohmann::json& j, const BurstSpec& c);
void from_json(const nlohmann::json& j, BurstSpec& c);
void to_json(nlohmann::json& j, const MitigationConfig& c);
void from_json(const nlohmann::json& j, MitigationConfig& c);
void to_json(nlohmann::json& j, const ExplorationConfig& c);
void from_json(const nlohmann::json& j, ExplorationConfig& c);
// The seed is not serialized; it is derived from the experiment's root seed.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const TaskSetConfig& c);
void from_json(const nlohmann::json& j, TaskSetConfig& c);

// FNV-1a over the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace tempo
