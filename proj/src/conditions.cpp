#include "fctbn/conditions.hpp"

#include "fctbn/errors.hpp"

#include <algorithm>
#include <unordered_set>

namespace fctbn {

ConditionSet::ConditionSet() : ConditionSet({"DI", "OB", "HP", "HL", "CI"}) {}

ConditionSet::ConditionSet(std::vector<std::string> ids) : ids_(std::move(ids)) {
    if (ids_.empty()) throw DomainError("condition set must not be empty");
    if (ids_.size() > kMaxConditions)
        throw CapacityError("condition set holds at most 31 conditions");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids_) {
        if (id.empty()) throw DomainError("condition identifiers must be non-empty");
        if (!seen.insert(id).second) throw DomainError("duplicate condition identifier: " + id);
    }
}

std::size_t ConditionSet::index_of(const std::string& id) const {
    auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) throw DomainError("unknown condition: " + id);
    return static_cast<std::size_t>(it - ids_.begin());
}

bool ConditionSet::contains(const std::string& id) const {
    return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

MccState MccState::from_names(const ConditionSet& set, const std::vector<std::string>& names) {
    MccState s;
    for (const auto& n : names) s = s.with(set.index_of(n));
    return s;
}

std::vector<std::string> MccState::names(const ConditionSet& set) const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < set.size(); ++j)
        if (has(j)) out.push_back(set.name(j));
    return out;
}

}  // namespace fctbn
