#pragma once

#include "fctbn/conditions.hpp"
#include "fctbn/covariates.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace fctbn {

/// One visit interval of one patient: the state at the interval start, the covariates in
/// force, and either the condition acquired at t_end or censoring at t_end.
struct TransitionRecord {
    std::string patient_id;
    double t_start = 0.0;
    double t_end = 0.0;
    MccState state;
    StateMask unknown = 0;  // conditions whose status could not be coded at t_start
    Eigen::VectorXd z;
    std::optional<std::size_t> acquired;

    double duration() const { return t_end - t_start; }
    bool censored() const { return !acquired.has_value(); }
    bool operator==(const TransitionRecord& o) const;
};

class TrajectoryDataset {
public:
    TrajectoryDataset() = default;
    TrajectoryDataset(ConditionSet conditions, CovariateDictionary covariates,
                      std::vector<TransitionRecord> records = {})
        : conditions_(std::move(conditions)), covariates_(std::move(covariates)), records_(std::move(records)) {}

    const ConditionSet& conditions() const { return conditions_; }
    const CovariateDictionary& covariates() const { return covariates_; }
    const std::vector<TransitionRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    void add(TransitionRecord r) { records_.push_back(std::move(r)); }

    /// Throws ValidationError on the first violated invariant. `field` names the record index.
    void validate() const;

    /// Whether a record may enter the likelihood: no at-risk condition has unknown status.
    static bool usable(const TransitionRecord& r) { return (r.unknown & ~r.state.bits()) == 0; }
    std::size_t usable_count() const;
    std::size_t excluded_count() const { return size() - usable_count(); }

    /// Records in [first, last) as a new dataset with the same layout.
    TrajectoryDataset slice(std::size_t first, std::size_t last) const;
    /// Durations and event times multiplied by `factor` (unit change).
    TrajectoryDataset rescaled_time(double factor) const;

    bool operator==(const TrajectoryDataset& o) const {
        return conditions_ == o.conditions_ && covariates_ == o.covariates_ && records_ == o.records_;
    }

private:
    ConditionSet conditions_;
    CovariateDictionary covariates_;
    std::vector<TransitionRecord> records_;
};

}  // namespace fctbn
