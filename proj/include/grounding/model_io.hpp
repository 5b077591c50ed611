#pragma once

#include <string>

#include "json.hpp"

#include "grounding/estimator.hpp"

namespace grounding {

inline constexpr int kModelFormatVersion = 1;

/// {"format": "grounding-estimator", "version": 1, "config": {...},
///  "parameters": [{"name", "rows", "cols", "values"}, ...]}
/// Parameters appear in model order; values are row-major.
nlohmann::json model_to_json(const EstimatorModel& model);
EstimatorModel model_from_json(const nlohmann::json& j);

nlohmann::json config_to_json(const EstimatorConfig& config);
EstimatorConfig config_from_json(const nlohmann::json& j);

void save_model(const EstimatorModel& model, const std::string& path);
EstimatorModel load_model(const std::string& path);

}  // namespace grounding
