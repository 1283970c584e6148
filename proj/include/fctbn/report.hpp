#pragma once

#include "fctbn/learning.hpp"
#include "fctbn/planner.hpp"

#include <json.hpp>

#include <string>

namespace fctbn {

/// {"times": [...], "conditions": [...], "marginals": {id: [...]}} on the given sampling step
/// (0 keeps every grid point).
nlohmann::json trajectory_to_json(const ForwardResult& result, const ConditionSet& conditions, double step = 1.0);
/// time column followed by one column per condition.
std::string trajectory_to_csv(const ForwardResult& result, const ConditionSet& conditions, double step = 1.0);

nlohmann::json plan_to_json(const InterventionPlan& plan, const FctbnModel& model);
nlohmann::json receding_to_json(const RecedingHorizonResult& run, const FctbnModel& model);
nlohmann::json sensitivity_to_json(const std::vector<SensitivityEntry>& entries, const ConditionSet& conditions);
nlohmann::json fit_report_to_json(const FitReport& report);
nlohmann::json path_to_json(const StructurePath& path, const ConditionSet& conditions);

/// Request-side parsing shared by the CLI and the HTTP service. Missing keys keep defaults.
PlannerConfig planner_config_from_json(const nlohmann::json& j);
/// {name: {"lower": .., "upper": .., "locked": bool}} over modifiable covariates; others unrestricted.
BehaviorBounds bounds_from_json(const CovariateDictionary& dict, const nlohmann::json& j);
OnlineUpdateConfig online_config_from_json(const nlohmann::json& j);

}  // namespace fctbn
