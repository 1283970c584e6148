#pragma once

#include "fctbn/dataset.hpp"
#include "fctbn/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace fctbn {

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------------------------
// Diagnosis coding

enum class Sex { Male, Female };

/// Raw measurements of one visit. Missing values are empty optionals.
struct MeasurementPanel {
    std::optional<double> fasting_glucose;    // mg/dL
    std::optional<double> hba1c;              // %
    std::optional<double> bmi;                // kg/m^2
    std::optional<double> systolic_bp;        // mmHg
    std::optional<double> diastolic_bp;       // mmHg
    std::optional<double> total_cholesterol;  // mg/dL
    std::optional<double> triglycerides;      // mg/dL
    std::optional<double> hdlc;               // mg/dL
    std::optional<double> ldlc;               // mg/dL
    std::optional<int> mmse;                  // 0..30
    std::optional<Sex> sex;
    std::optional<bool> diabetes_medication;
    std::optional<bool> antihypertensive_medication;
    std::optional<bool> lipid_medication;

    /// Throws ValidationError naming the first field outside its physiological range.
    void validate() const;
};

struct Diagnosis {
    MccState state;
    StateMask unknown = 0;  // conditions that could not be ruled in or out
};

/// Codes DI, OB, HP, HL and CI from a panel. A condition is positive as soon as one criterion
/// with data is met; it is unknown when no criterion is met but some criterion lacks data.
Diagnosis diagnose(const MeasurementPanel& panel, const ConditionSet& conditions = ConditionSet());

MeasurementPanel panel_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------------------------
// Models

nlohmann::json model_to_json(const FctbnModel& model);
FctbnModel model_from_json(const nlohmann::json& j);
void write_model(const FctbnModel& model, const std::filesystem::path& path);
FctbnModel read_model(const std::filesystem::path& path);

nlohmann::json conditions_to_json(const ConditionSet& set);
nlohmann::json covariates_to_json(const CovariateDictionary& dict);
ConditionSet conditions_from_json(const nlohmann::json& j, const std::string& field = "conditions");
CovariateDictionary covariates_from_json(const nlohmann::json& j, const std::string& field = "covariates");

// ---------------------------------------------------------------------------------------------
// Datasets: JSON lines, a header line followed by one record per line

nlohmann::json dataset_header(const TrajectoryDataset& dataset);
nlohmann::json record_to_json(const TrajectoryDataset& dataset, const TransitionRecord& record);
TransitionRecord record_from_json(const ConditionSet& conditions, const CovariateDictionary& covariates,
                                  const nlohmann::json& j, std::size_t line = 0);

void write_dataset(const TrajectoryDataset& dataset, std::ostream& out);
TrajectoryDataset read_dataset(std::istream& in);
void write_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& path);
TrajectoryDataset read_dataset(const std::filesystem::path& path);

/// {"header": ..., "records": [...]} for embedding a dataset in a JSON document.
nlohmann::json dataset_to_json(const TrajectoryDataset& dataset);
TrajectoryDataset dataset_from_json(const nlohmann::json& j);

/// Parses a state given as a bitmask or as a list of condition ids.
MccState state_from_json(const ConditionSet& conditions, const nlohmann::json& j, const std::string& field);
/// Covariates object {name: value}; names missing from the object are an error.
RiskFactorVector covariates_from_object(const CovariateDictionary& dict, const nlohmann::json& j,
                                        const std::string& field, std::size_t line = 0);

/// Writes `contents` to a temporary file beside `path` and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

}  // namespace fctbn
