#pragma once

#include "fctbn/dataset.hpp"
#include "fctbn/model.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace fctbn {

/// Names accepted by preset_model.
std::vector<std::string> preset_names();

/// Synthetic 5-condition models over the standard 8-covariate roster. Coefficients are made up;
/// every intensity stays within [0.01, 0.5] per year over the covariate ranges sampled by
/// standard_covariate_laws() and all parent configurations.
FctbnModel preset_model(const std::string& name);

struct Bernoulli {
    double p = 0.5;
};
/// Values 0..weights.size()-1 with the given (unnormalized) weights.
struct Categorical {
    std::vector<double> weights;
};
using CovariateLaw = std::variant<Bernoulli, Categorical>;

/// Bernoulli(0.5) behaviors, age_group uniform on 0..4, gender Bernoulli(0.5), education on 0..2,
/// marital Bernoulli(0.6).
std::vector<CovariateLaw> standard_covariate_laws(const CovariateDictionary& dict);

struct CohortSpec {
    std::size_t n_patients = 1000;
    std::vector<CovariateLaw> covariate_laws;  // one per covariate, dictionary order
    std::vector<double> visit_times{0.0, 5.0, 10.0};
    std::vector<double> initial_prevalence;    // per condition, P(acquired at first visit); empty = none
    FctbnModel model;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Per-patient RNG seed derived from (seed, patient index).
std::uint64_t patient_seed(std::uint64_t seed, std::size_t patient);

/// Simulates each patient's continuous-time path between the first and last visit and emits one
/// record per sojourn: intervals are split at visits (censored) and at exact acquisition times.
TrajectoryDataset generate(const CohortSpec& spec);

}  // namespace fctbn

namespace fctbn {

/// The two case-study patients: no conditions yet, unhealthy diet, no exercise, no tobacco or
/// alcohol use; age group 0 (21-25) and 3 (36-40).
struct CaseStudyPatient {
    std::string id;
    MccState state;
    RiskFactorVector covariates;
};
std::vector<CaseStudyPatient> case_study_patients(const CovariateDictionary& dict = CovariateDictionary::standard_roster());

}  // namespace fctbn
