#pragma once

#include "fctbn/dataset.hpp"
#include "fctbn/model.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace fctbn {

// ---------------------------------------------------------------------------------------------
// Sufficient statistics

struct ExposureStats {
    double exposure = 0.0;  // T: total at-risk time
    double events = 0.0;    // M: acquisitions
};

/// (child, parent configuration, covariate stratum)
using StatsKey = std::tuple<std::size_t, StateMask, std::vector<double>>;

std::map<StatsKey, ExposureStats> sufficient_stats(const TrajectoryDataset& dataset);

// ---------------------------------------------------------------------------------------------
// Likelihood

/// sum over usable records and at-risk children j of  1{outcome=j} ln q_j - t_d q_j.
/// Throws NumericOverflowError if any linear predictor leaves [-50, 50].
double log_likelihood(const FctbnModel& model, const TrajectoryDataset& dataset);

/// The exposure-only sum  sum t_d exp(z beta)  as literally printed for the functional
/// network likelihood. Not a likelihood; kept for comparison with log_likelihood.
double printed_exposure_sum(const FctbnModel& model, const TrajectoryDataset& dataset);

/// Edge-group penalty weights. The penalty on edge p -> j is
///   k * lambda * weight(p, j) * ||beta_{p->j}||^2
/// with k the group size; baseline groups are never penalized.
struct RegularizationSpec {
    double lambda = 0.0;
    std::size_t num_conditions = 0;
    std::vector<double> weights;  // parent * n + child; empty means all ones
    double prune_epsilon = kDefaultPruneThreshold;
    double pilot_lambda = 1e-4;
    double pilot_norm_floor = 1e-6;

    double weight(std::size_t parent, std::size_t child) const {
        return weights.empty() ? 1.0 : weights.at(parent * num_conditions + child);
    }
    /// lambda_j for the edge parent -> child
    double group_lambda(std::size_t parent, std::size_t child) const { return lambda * weight(parent, child); }
};

double penalty(const FctbnModel& model, const RegularizationSpec& reg);
double penalized_objective(const FctbnModel& model, const TrajectoryDataset& dataset,
                           const RegularizationSpec& reg);
/// Gradient of penalized_objective with respect to FctbnModel::parameters().
Eigen::VectorXd penalized_gradient(const FctbnModel& model, const TrajectoryDataset& dataset,
                                   const RegularizationSpec& reg);

// ---------------------------------------------------------------------------------------------
// Batch fitting

struct FitOptions {
    int max_iterations = 200;
    double gradient_tolerance = 1e-8;
    EdgeFeatures edge_features = EdgeFeatures::MainEffect;
    /// parent * n + child -> whether the edge is free; empty means all free. Inactive edges stay zero.
    std::vector<bool> active_edges;
};

struct FitReport {
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    std::vector<double> objective_history;     // total penalized objective after each iteration
    std::vector<std::string> floored_conditions;  // no observed acquisitions; intercept floored
    std::size_t records_used = 0;
    std::size_t records_excluded = 0;
};

struct FitResult {
    FctbnModel model;
    FitReport report;
};

/// Intercept assigned to a condition that is never observed to be acquired (rate exp(-20)).
inline constexpr double kFlooredIntercept = -20.0;

/// Penalized maximum likelihood by damped Newton with backtracking. Children decouple, so
/// each condition's block is solved independently. Throws StructuralError if a condition has
/// zero exposure.
FitResult fit_mle(const TrajectoryDataset& dataset, const RegularizationSpec& reg,
                  const std::optional<FctbnModel>& init = std::nullopt, const FitOptions& options = {});

/// Ridge pilot fit followed by lambda_j = lambda / max(||pilot_j||, floor).
RegularizationSpec adaptive_regularization(const TrajectoryDataset& dataset, double lambda,
                                           const FitOptions& options = {});

/// Same weights as `reg`, different lambda.
RegularizationSpec with_lambda(RegularizationSpec reg, double lambda);

// ---------------------------------------------------------------------------------------------
// Structure selection

struct PathEntry {
    double lambda = 0.0;
    FctbnModel model;         // penalized fit with groups below prune_epsilon zeroed
    FctbnModel refit;         // unpenalized fit restricted to the selected edges
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    double score = 0.0;       // -2 ll(refit) + ln(N) * (nonzero groups * k)
    FitReport report;
};

struct StructurePath {
    std::vector<PathEntry> entries;
    std::size_t best = 0;
    RegularizationSpec regularization;  // adaptive weights used along the path

    const PathEntry& best_entry() const { return entries.at(best); }
};

/// Warm-started fits along a strictly increasing lambda grid.
StructurePath structure_path(const TrajectoryDataset& dataset, const std::vector<double>& lambda_grid,
                             const FitOptions& options = {}, double prune_epsilon = kDefaultPruneThreshold);

// ---------------------------------------------------------------------------------------------
// Online updates

struct OnlineUpdateConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    int max_epochs = 100;
    double tolerance = 1e-8;  // stop when an epoch moves parameters less than this (L2)
};

struct OnlineUpdateResult {
    FctbnModel model;
    int epochs = 0;
    double parameter_change = 0.0;  // L2 distance between input and output parameters
    double last_epoch_change = 0.0;
    bool converged = false;
};

/// Mini-batch gradient descent on the penalized objective of `batch`. Within an epoch the
/// penalty gradient is scaled by the mini-batch share of the batch. Throws StepSizeError if
/// the batch objective rises for 10 consecutive epochs or becomes non-finite.
OnlineUpdateResult online_update(const FctbnModel& model, const TrajectoryDataset& batch,
                                 const OnlineUpdateConfig& cfg, const RegularizationSpec& reg);

}  // namespace fctbn
