#include "fctbn/dataset.hpp"

#include "fctbn/errors.hpp"

#include <cmath>
#include <unordered_map>

namespace fctbn {

bool TransitionRecord::operator==(const TransitionRecord& o) const {
    return patient_id == o.patient_id && t_start == o.t_start && t_end == o.t_end && state == o.state &&
           unknown == o.unknown && z.size() == o.z.size() && z == o.z && acquired == o.acquired;
}

void TrajectoryDataset::validate() const {
    struct Last {
        double t_end;
        MccState state;
        std::optional<std::size_t> acquired;
    };
    std::unordered_map<std::string, Last> last;
    const std::size_t n = conditions_.size();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        const std::string where = "records[" + std::to_string(i) + "]";
        if (r.patient_id.empty()) throw ValidationError(where + ": empty patient_id", where + ".patient_id");
        if (!std::isfinite(r.t_start) || !std::isfinite(r.t_end) || !(r.t_end > r.t_start))
            throw ValidationError(where + ": t_end must exceed t_start", where + ".t_end");
        if (!r.state.is_subset_of(MccState(conditions_.full_mask())))
            throw ValidationError(where + ": state references unknown conditions", where + ".state");
        if (static_cast<std::size_t>(r.z.size()) != covariates_.size())
            throw ValidationError(where + ": covariate vector has wrong size", where + ".covariates");
        for (std::size_t c = 0; c < covariates_.size(); ++c) {
            const double v = r.z(static_cast<Eigen::Index>(c));
            if (!std::isfinite(v) ||
                (covariates_[c].kind == CovariateKind::Modifiable && (v < 0.0 || v > 1.0)))
                throw ValidationError(where + ": covariate " + covariates_[c].name + " out of range",
                                      where + ".covariates." + covariates_[c].name);
        }
        if (r.acquired) {
            if (*r.acquired >= n)
                throw ValidationError(where + ": unknown outcome condition", where + ".outcome");
            if (r.state.has(*r.acquired))
                throw ValidationError(where + ": outcome condition " + conditions_.name(*r.acquired) +
                                          " already acquired",
                                      where + ".outcome");
        }
        auto it = last.find(r.patient_id);
        if (it != last.end()) {
            if (r.t_start < it->second.t_end - 1e-12)
                throw ValidationError(where + ": records of " + r.patient_id + " are not time-ordered",
                                      where + ".t_start");
            MccState expected = it->second.state;
            if (it->second.acquired) expected = expected.with(*it->second.acquired);
            if (!expected.is_subset_of(r.state))
                throw ValidationError(where + ": state of " + r.patient_id + " lost a condition",
                                      where + ".state");
        }
        last[r.patient_id] = Last{r.t_end, r.state, r.acquired};
    }
}

std::size_t TrajectoryDataset::usable_count() const {
    std::size_t k = 0;
    for (const auto& r : records_) k += usable(r) ? 1 : 0;
    return k;
}

TrajectoryDataset TrajectoryDataset::slice(std::size_t first, std::size_t last) const {
    if (first > last || last > records_.size()) throw DomainError("slice out of range");
    return TrajectoryDataset(conditions_, covariates_,
                             std::vector<TransitionRecord>(records_.begin() + static_cast<long>(first),
                                                           records_.begin() + static_cast<long>(last)));
}

TrajectoryDataset TrajectoryDataset::rescaled_time(double factor) const {
    if (!(factor > 0.0)) throw DomainError("time scale factor must be positive");
    auto out = *this;
    for (auto& r : out.records_) {
        r.t_start *= factor;
        r.t_end *= factor;
    }
    return out;
}

}  // namespace fctbn
