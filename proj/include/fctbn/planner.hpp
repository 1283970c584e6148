#pragma once

#include "fctbn/dynamics.hpp"
#include "fctbn/model.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

namespace fctbn {

enum class BehaviorMode {
    Binary,      // behaviors take values in {0, 1}; solved exactly over stage profiles
    Continuous,  // behaviors relaxed to [lower, upper]; projected gradient
};

struct PlannerConfig {
    int horizon = 5;               // L, decision periods
    double step = 1.0;             // years per period
    double change_penalty = 0.1;   // weight on ||z_l - z_{l-1}||^2
    double adherence_window = 1.0; // years a recommendation is followed before reverting
    BehaviorMode mode = BehaviorMode::Binary;
    bool survival_weighted = false; // weight stage l by P(no new condition before l)
    double stationarity_tolerance = 1e-8;

    void validate() const;
};

/// Box constraints over the modifiable covariates, in dictionary order.
struct BehaviorBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::vector<bool> locked;

    static BehaviorBounds unrestricted(std::size_t count);
    /// Pins behavior i at `value`.
    BehaviorBounds& lock(std::size_t i, double value);

    std::size_t size() const { return static_cast<std::size_t>(lower.size()); }
    bool contains(const Eigen::VectorXd& z) const;
};

struct InterventionPlan {
    double start_time = 0.0;
    MccState state;
    std::vector<double> epoch_times;        // start of each planned period
    std::vector<Eigen::VectorXd> behaviors; // z_1 .. z_L, modifiable covariates only
    std::vector<double> stage_risks;
    std::vector<double> stage_costs;        // risk (survival weighted if enabled) + change penalty
    double total_cost = 0.0;
    Eigen::VectorXd current;                // z_0
    Eigen::VectorXd applied_action;         // = behaviors.front()
    bool current_out_of_bounds = false;
    ForwardResult with_plan;
    ForwardResult without_plan;
};

/// Total acquisition hazard over one period while staying in `state`:
/// dt * sum of intensities of the conditions not yet acquired.
double stage_risk(const FctbnModel& model, MccState state, const RiskFactorVector& z, double dt = 1.0);

/// Receding-horizon plan from `state` with covariates `current` (fixed part held, modifiable
/// part is z_0). The parent configuration stays at `state` over the horizon. Throws
/// InfeasibleBoundsError when the bounds admit no behavior vector.
InterventionPlan plan(const FctbnModel& model, MccState state, const RiskFactorVector& current,
                      const BehaviorBounds& bounds, const PlannerConfig& cfg, double start_time = 0.0);

/// Cost of a given behavior sequence under the planner objective (without trajectories).
double sequence_cost(const FctbnModel& model, MccState state, const RiskFactorVector& current,
                     const std::vector<Eigen::VectorXd>& sequence, const PlannerConfig& cfg);

struct PatientTimeline {
    MccState initial_state;
    RiskFactorVector covariates;                        // observed behaviors and fixed factors
    std::vector<std::pair<double, MccState>> observations;  // (time, observed state), optional

    /// Latest observed state at or before t (initial state if none).
    MccState state_at(double t) const;
};

struct RecedingHorizonResult {
    std::vector<InterventionPlan> plans;
    Schedule baseline_schedule;
    Schedule intervened_schedule;
    ForwardResult baseline;
    ForwardResult intervened;
};

/// Re-plans at every epoch from the state observed then, applies the first action for
/// `adherence_window` years and reverts to the observed behaviors. Trajectories start at
/// t = 0 from the timeline's initial state and run to `simulation_horizon`.
RecedingHorizonResult receding_horizon_run(const FctbnModel& model, const PatientTimeline& timeline,
                                           const std::vector<double>& epochs, const BehaviorBounds& bounds,
                                           const PlannerConfig& cfg, double simulation_horizon,
                                           const ForwardOptions& forward = {});

/// First epoch whose applied action differs from the behaviors in force, or -1.
double first_behavior_change(const RecedingHorizonResult& run, double tolerance = 1e-12);

struct SensitivityEntry {
    std::string covariate;
    std::size_t index = 0;      // position among modifiable covariates
    double from = 0.0;
    double to = 0.0;
    bool changed = false;       // false when bounds or a lock leave no room to move
    double delta_stage_risk = 0.0;
    Eigen::VectorXd delta_probability;  // per condition, at `probability_horizon` years
};

/// One-at-a-time perturbation of each behavior to its farthest bound, ranked by
/// |delta stage risk| (ties keep dictionary order).
std::vector<SensitivityEntry> sensitivity_report(const FctbnModel& model, MccState state,
                                                 const RiskFactorVector& current, const BehaviorBounds& bounds,
                                                 const PlannerConfig& cfg, double probability_horizon = 5.0);

}  // namespace fctbn
