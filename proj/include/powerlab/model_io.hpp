#pragma once

#include <filesystem>

#include <json.hpp>

#include "powerlab/ar_model.hpp"

namespace powerlab {

/// {"vocab_sizes": [...], "horizon": T, "prompt_ids": [...],
///  "rows": [prompt][depth][node] -> [linear probabilities]}
nlohmann::json model_to_json(const ARModel& model);
ARModel model_from_json(const nlohmann::json& doc);

void save_model(const ARModel& model, const std::filesystem::path& path);
ARModel load_model(const std::filesystem::path& path);

}  // namespace powerlab
