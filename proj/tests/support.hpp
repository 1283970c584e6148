#pragma once

#include "fctbn/model.hpp"

#include <string>
#include <vector>

namespace fctbn::testing {

inline ConditionSet named_conditions(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t j = 0; j < n; ++j) ids.push_back("C" + std::to_string(j));
    return ConditionSet(ids);
}

/// Covariate-free model with the given baseline rates and no edges.
inline FctbnModel constant_rate_model(const std::vector<double>& rates) {
    FctbnModel m(named_conditions(rates.size()), CovariateDictionary{});
    for (std::size_t j = 0; j < rates.size(); ++j) m.set_baseline(j, Eigen::VectorXd::Constant(1, std::log(rates[j])));
    return m;
}

inline RiskFactorVector no_covariates() { return RiskFactorVector(Eigen::VectorXd(0)); }

inline CovariateDictionary behaviors(std::vector<std::string> modifiable, std::vector<std::string> fixed = {}) {
    std::vector<CovariateSpec> specs;
    for (auto& n : modifiable) specs.push_back({n, CovariateKind::Modifiable});
    for (auto& n : fixed) specs.push_back({n, CovariateKind::Fixed});
    return CovariateDictionary(specs);
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

}  // namespace fctbn::testing
