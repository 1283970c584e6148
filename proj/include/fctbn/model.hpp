#pragma once

#include "fctbn/conditions.hpp"
#include "fctbn/covariates.hpp"
#include "fctbn/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fctbn {

/// Linear predictors beyond this magnitude are rejected, not clamped.
inline constexpr double kMaxLinearPredictor = 50.0;

/// Default group-norm threshold below which an edge counts as absent.
inline constexpr double kDefaultPruneThreshold = 1e-3;

/// How an acquired parent enters a child's log-intensity.
///   MainEffect:  one coefficient multiplying the parent indicator.
///   Interaction: (1, z) times the parent indicator, one coefficient per intercept and covariate.
enum class EdgeFeatures { MainEffect, Interaction };

/// Identifies a coefficient group: the baseline of `child` when `parent` is empty,
/// otherwise the edge parent -> child.
struct GroupKey {
    std::size_t child = 0;
    std::optional<std::size_t> parent;

    bool is_baseline() const { return !parent.has_value(); }
    bool operator==(const GroupKey&) const = default;
};

struct CoefficientGroup {
    GroupKey owner;
    Eigen::VectorXd coefficients;
};

/// Functional CTBN over binary conditions with log-linear conditional intensities.
///
/// Every child j owns a baseline group aligned with (1, z) and one edge group per other
/// condition p. An all-zero edge group is the same as having no edge p -> j, so the
/// structure is derived from the coefficients rather than stored separately.
///
/// Parameters per child are laid out as
///   [ baseline (m+1) | edge from p_0 (k) | edge from p_1 (k) | ... ]
/// where the p_i run over all conditions except the child, in condition order.
class FctbnModel {
public:
    FctbnModel() = default;
    FctbnModel(ConditionSet conditions, CovariateDictionary covariates,
               EdgeFeatures edge_features = EdgeFeatures::MainEffect,
               double prune_threshold = kDefaultPruneThreshold);

    const ConditionSet& conditions() const { return conditions_; }
    const CovariateDictionary& covariates() const { return covariates_; }
    EdgeFeatures edge_features() const { return edge_features_; }
    double prune_threshold() const { return prune_threshold_; }
    std::size_t num_conditions() const { return conditions_.size(); }

    std::size_t baseline_size() const { return covariates_.size() + 1; }
    std::size_t edge_group_size() const {
        return edge_features_ == EdgeFeatures::MainEffect ? 1 : covariates_.size() + 1;
    }
    std::size_t group_size(const GroupKey& key) const {
        return key.is_baseline() ? baseline_size() : edge_group_size();
    }

    const Eigen::VectorXd& baseline(std::size_t child) const { return baseline_.at(child); }
    const Eigen::VectorXd& edge(std::size_t parent, std::size_t child) const;
    const Eigen::VectorXd& group(const GroupKey& key) const;

    void set_baseline(std::size_t child, Eigen::VectorXd coefficients);
    void set_edge(std::size_t parent, std::size_t child, Eigen::VectorXd coefficients);
    void set_group(const GroupKey& key, Eigen::VectorXd coefficients);

    /// Names aligned with a group's coefficients ("intercept", covariate names; "main" for main effects).
    std::vector<std::string> coefficient_names(const GroupKey& key) const;

    bool has_edge(std::size_t parent, std::size_t child) const;
    /// Edges (parent, child) whose group norm exceeds the prune threshold, ordered by child then parent.
    std::vector<std::pair<std::size_t, std::size_t>> edges() const;

    /// All groups, baseline first per child then edges in parent order.
    std::vector<CoefficientGroup> groups() const;

    std::size_t child_parameter_count() const {
        return baseline_size() + (num_conditions() - 1) * edge_group_size();
    }
    /// Position of the edge parent -> child inside that child's parameter block.
    std::size_t edge_offset(std::size_t parent, std::size_t child) const;

    Eigen::VectorXd child_parameters(std::size_t child) const;
    void set_child_parameters(std::size_t child, const Eigen::VectorXd& params);
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& params);

    /// Unchecked log-intensity of `child` in `state` at covariates `z`.
    double linear_predictor(std::size_t child, MccState state, const Eigen::VectorXd& z) const;

private:
    ConditionSet conditions_;
    CovariateDictionary covariates_;
    EdgeFeatures edge_features_ = EdgeFeatures::MainEffect;
    double prune_threshold_ = kDefaultPruneThreshold;
    std::vector<Eigen::VectorXd> baseline_;
    std::vector<Eigen::VectorXd> edges_;  // parent * n + child; diagonal unused
};

/// Design row for `child` matching the child parameter layout.
Eigen::VectorXd feature_row(const FctbnModel& model, std::size_t child, MccState state,
                            const Eigen::VectorXd& z);

/// Rate (per year) at which `child` is acquired from `state` under covariates `z`.
/// Throws DomainError if child is already acquired, CovariateLayoutError on a size mismatch
/// and NumericOverflowError if |eta| > 50.
double acquisition_intensity(const FctbnModel& model, std::size_t child, MccState state,
                             const RiskFactorVector& z);

/// Sum of acquisition intensities over the conditions not yet acquired.
double total_exit_rate(const FctbnModel& model, MccState state, const RiskFactorVector& z);

template <typename Scalar>
Scalar sojourn_cdf(Scalar rate, Scalar t) {
    if (!(t >= Scalar(0))) throw DomainError("sojourn_cdf: time must be nonnegative");
    if (!(rate > Scalar(0))) throw DomainError("sojourn_cdf: rate must be positive");
    using std::expm1;
    return -expm1(-rate * t);
}

template <typename Scalar>
Scalar sojourn_pdf(Scalar rate, Scalar t) {
    if (!(t >= Scalar(0))) throw DomainError("sojourn_pdf: time must be nonnegative");
    if (!(rate > Scalar(0))) throw DomainError("sojourn_pdf: rate must be positive");
    using std::exp;
    return rate * exp(-rate * t);
}

}  // namespace fctbn
