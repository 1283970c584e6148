#include "fctbn/report.hpp"

#include "fctbn/io.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace fctbn {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json behaviors_object(const CovariateDictionary& dict, const Eigen::VectorXd& mod) {
    json out = json::object();
    for (std::size_t i = 0; i < dict.modifiable().size(); ++i)
        out[dict[dict.modifiable()[i]].name] = mod(static_cast<Eigen::Index>(i));
    return out;
}

double number_or(const json& j, const char* key, double fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number()) throw ValidationError(std::string(key) + ": expected a number", key);
    return it->get<double>();
}

}  // namespace

json trajectory_to_json(const ForwardResult& result, const ConditionSet& conditions, double step) {
    const ForwardResult r = step > 0.0 ? result.sampled(step) : result;
    json marg = json::object();
    for (std::size_t j = 0; j < conditions.size(); ++j) marg[conditions.name(j)] = vec(r.marginals.col(static_cast<Eigen::Index>(j)));
    return {{"times", r.times}, {"conditions", conditions.names()}, {"marginals", marg}};
}

std::string trajectory_to_csv(const ForwardResult& result, const ConditionSet& conditions, double step) {
    const ForwardResult r = step > 0.0 ? result.sampled(step) : result;
    std::ostringstream out;
    out << "time";
    for (const auto& id : conditions.names()) out << ',' << id;
    out << '\n';
    char buf[64];
    for (std::size_t i = 0; i < r.times.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g", r.times[i]);
        out << buf;
        for (Eigen::Index j = 0; j < r.marginals.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", r.marginals(static_cast<Eigen::Index>(i), j));
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

json plan_to_json(const InterventionPlan& plan, const FctbnModel& model) {
    const auto& dict = model.covariates();
    json epochs = json::array();
    for (std::size_t l = 0; l < plan.behaviors.size(); ++l)
        epochs.push_back({{"time", plan.epoch_times[l]},
                          {"behaviors", behaviors_object(dict, plan.behaviors[l])},
                          {"stage_risk", plan.stage_risks[l]},
                          {"stage_cost", plan.stage_costs[l]}});
    return {{"start_time", plan.start_time},
            {"state", plan.state.names(model.conditions())},
            {"current", behaviors_object(dict, plan.current)},
            {"applied_action", behaviors_object(dict, plan.applied_action)},
            {"current_out_of_bounds", plan.current_out_of_bounds},
            {"total_cost", plan.total_cost},
            {"epochs", epochs},
            {"with_plan", trajectory_to_json(plan.with_plan, model.conditions())},
            {"without_plan", trajectory_to_json(plan.without_plan, model.conditions())}};
}

json receding_to_json(const RecedingHorizonResult& run, const FctbnModel& model) {
    json plans = json::array();
    for (const auto& p : run.plans) plans.push_back(plan_to_json(p, model));
    const double first = first_behavior_change(run);
    return {{"plans", plans},
            {"first_behavior_change", first < 0.0 ? json(nullptr) : json(first)},
            {"baseline", trajectory_to_json(run.baseline, model.conditions())},
            {"intervened", trajectory_to_json(run.intervened, model.conditions())}};
}

json sensitivity_to_json(const std::vector<SensitivityEntry>& entries, const ConditionSet& conditions) {
    json out = json::array();
    for (const auto& e : entries) {
        json dp = json::object();
        for (std::size_t j = 0; j < conditions.size(); ++j)
            dp[conditions.name(j)] = e.delta_probability(static_cast<Eigen::Index>(j));
        out.push_back({{"covariate", e.covariate},
                       {"from", e.from},
                       {"to", e.to},
                       {"changed", e.changed},
                       {"delta_stage_risk", e.delta_stage_risk},
                       {"delta_probability", dp}});
    }
    return out;
}

json fit_report_to_json(const FitReport& report) {
    return {{"iterations", report.iterations},
            {"gradient_norm", report.gradient_norm},
            {"converged", report.converged},
            {"objective", report.objective_history.empty() ? json(nullptr) : json(report.objective_history.back())},
            {"floored_conditions", report.floored_conditions},
            {"records_used", report.records_used},
            {"records_excluded", report.records_excluded}};
}

json path_to_json(const StructurePath& path, const ConditionSet& conditions) {
    json entries = json::array();
    for (const auto& e : path.entries) {
        json edges = json::array();
        for (auto [p, c] : e.edges) edges.push_back(conditions.name(p) + "->" + conditions.name(c));
        entries.push_back({{"lambda", e.lambda},
                           {"edge_count", e.edges.size()},
                           {"edges", edges},
                           {"score", e.score},
                           {"report", fit_report_to_json(e.report)}});
    }
    return {{"entries", entries}, {"best", path.best}};
}

PlannerConfig planner_config_from_json(const json& j) {
    PlannerConfig cfg;
    if (j.is_null()) return cfg;
    if (!j.is_object()) throw ValidationError("config: expected an object", "config");
    if (auto it = j.find("horizon"); it != j.end()) {
        if (!it->is_number_integer()) throw ValidationError("config.horizon: expected an integer", "config.horizon");
        cfg.horizon = it->get<int>();
    }
    cfg.step = number_or(j, "step", cfg.step);
    cfg.change_penalty = number_or(j, "change_penalty", cfg.change_penalty);
    cfg.adherence_window = number_or(j, "adherence_window", cfg.adherence_window);
    if (auto it = j.find("mode"); it != j.end()) {
        const auto m = it->is_string() ? it->get<std::string>() : "";
        if (m != "binary" && m != "continuous")
            throw ValidationError("config.mode: expected \"binary\" or \"continuous\"", "config.mode");
        cfg.mode = m == "binary" ? BehaviorMode::Binary : BehaviorMode::Continuous;
    }
    if (auto it = j.find("survival_weighted"); it != j.end()) {
        if (!it->is_boolean())
            throw ValidationError("config.survival_weighted: expected a boolean", "config.survival_weighted");
        cfg.survival_weighted = it->get<bool>();
    }
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw ValidationError(std::string("config: ") + e.what(), "config");
    }
    return cfg;
}

BehaviorBounds bounds_from_json(const CovariateDictionary& dict, const json& j) {
    auto bounds = BehaviorBounds::unrestricted(dict.modifiable().size());
    if (j.is_null()) return bounds;
    if (!j.is_object()) throw ValidationError("bounds: expected an object", "bounds");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string field = "bounds." + it.key();
        if (!dict.contains(it.key()) || dict[dict.index_of(it.key())].kind != CovariateKind::Modifiable)
            throw ValidationError(field + ": not a modifiable covariate", field);
        std::size_t slot = 0;
        while (dict.modifiable()[slot] != dict.index_of(it.key())) ++slot;
        const auto& b = it.value();
        if (!b.is_object()) throw ValidationError(field + ": expected an object", field);
        const auto s = static_cast<Eigen::Index>(slot);
        bounds.lower(s) = number_or(b, "lower", bounds.lower(s));
        bounds.upper(s) = number_or(b, "upper", bounds.upper(s));
        if (auto l = b.find("locked"); l != b.end()) {
            if (!l->is_boolean()) throw ValidationError(field + ".locked: expected a boolean", field + ".locked");
            bounds.locked[slot] = l->get<bool>();
        }
    }
    return bounds;
}

OnlineUpdateConfig online_config_from_json(const json& j) {
    OnlineUpdateConfig cfg;
    if (j.is_null()) return cfg;
    if (!j.is_object()) throw ValidationError("config: expected an object", "config");
    cfg.learning_rate = number_or(j, "learning_rate", cfg.learning_rate);
    const double batch = number_or(j, "batch_size", static_cast<double>(cfg.batch_size));
    const double epochs = number_or(j, "max_epochs", cfg.max_epochs);
    cfg.tolerance = number_or(j, "tolerance", cfg.tolerance);
    if (!(cfg.learning_rate >= 0.0)) throw ValidationError("config.learning_rate must be nonnegative", "config.learning_rate");
    if (!(batch >= 1.0) || batch != std::floor(batch))
        throw ValidationError("config.batch_size must be a positive integer", "config.batch_size");
    if (!(epochs >= 1.0) || epochs != std::floor(epochs))
        throw ValidationError("config.max_epochs must be a positive integer", "config.max_epochs");
    if (!(cfg.tolerance > 0.0)) throw ValidationError("config.tolerance must be positive", "config.tolerance");
    cfg.batch_size = static_cast<std::size_t>(batch);
    cfg.max_epochs = static_cast<int>(epochs);
    return cfg;
}

}  // namespace fctbn
