#include "fctbn/covariates.hpp"

#include "fctbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fctbn {

CovariateDictionary::CovariateDictionary(std::vector<CovariateSpec> specs) : specs_(std::move(specs)) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const auto& s = specs_[i];
        if (s.name.empty() || s.name == "intercept" || s.name == "main")
            throw DomainError("invalid covariate name '" + s.name + "'");
        if (!seen.insert(s.name).second) throw DomainError("duplicate covariate: " + s.name);
        (s.kind == CovariateKind::Modifiable ? modifiable_ : fixed_).push_back(i);
    }
}

CovariateDictionary CovariateDictionary::standard_roster() {
    using K = CovariateKind;
    return CovariateDictionary({{"diet", K::Modifiable},
                                {"exercise", K::Modifiable},
                                {"tobacco", K::Modifiable},
                                {"alcohol", K::Modifiable},
                                {"age_group", K::Fixed},
                                {"gender", K::Fixed},
                                {"education", K::Fixed},
                                {"marital", K::Fixed}});
}

std::size_t CovariateDictionary::index_of(const std::string& name) const {
    auto it = std::find_if(specs_.begin(), specs_.end(), [&](const auto& s) { return s.name == name; });
    if (it == specs_.end()) throw CovariateLayoutError("unknown covariate: " + name);
    return static_cast<std::size_t>(it - specs_.begin());
}

bool CovariateDictionary::contains(const std::string& name) const {
    return std::any_of(specs_.begin(), specs_.end(), [&](const auto& s) { return s.name == name; });
}

Eigen::VectorXd RiskFactorVector::modifiable(const CovariateDictionary& dict) const {
    const auto& idx = dict.modifiable();
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = (*this)[idx[i]];
    return out;
}

RiskFactorVector RiskFactorVector::with_modifiable(const CovariateDictionary& dict,
                                                   const Eigen::VectorXd& mod) const {
    const auto& idx = dict.modifiable();
    if (static_cast<std::size_t>(mod.size()) != idx.size())
        throw CovariateLayoutError("modifiable vector has wrong dimension");
    Eigen::VectorXd v = values_;
    for (std::size_t i = 0; i < idx.size(); ++i)
        v(static_cast<Eigen::Index>(idx[i])) = mod(static_cast<Eigen::Index>(i));
    return RiskFactorVector(std::move(v));
}

RiskFactorVector RiskFactorVector::with(std::size_t i, double v) const {
    Eigen::VectorXd out = values_;
    out(static_cast<Eigen::Index>(i)) = v;
    return RiskFactorVector(std::move(out));
}

void RiskFactorVector::validate(const CovariateDictionary& dict) const {
    if (size() != dict.size())
        throw CovariateLayoutError("risk factor vector has " + std::to_string(size()) +
                                   " entries, dictionary expects " + std::to_string(dict.size()));
    for (std::size_t i = 0; i < size(); ++i) {
        const double v = (*this)[i];
        if (!std::isfinite(v)) throw DomainError("covariate " + dict[i].name + " is not finite");
        if (dict[i].kind == CovariateKind::Modifiable && (v < 0.0 || v > 1.0))
            throw DomainError("modifiable covariate " + dict[i].name + " outside [0,1]");
    }
}

}  // namespace fctbn
