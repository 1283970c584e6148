#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace fctbn {

enum class CovariateKind { Modifiable, Fixed };

struct CovariateSpec {
    std::string name;
    CovariateKind kind = CovariateKind::Fixed;

    bool operator==(const CovariateSpec&) const = default;
};

/// Named covariate layout shared by a model and the data it is fit to.
/// The intercept is implicit and never listed.
class CovariateDictionary {
public:
    CovariateDictionary() = default;
    explicit CovariateDictionary(std::vector<CovariateSpec> specs);

    /// diet, exercise, tobacco, alcohol (modifiable); age_group, gender, education, marital (fixed)
    static CovariateDictionary standard_roster();

    std::size_t size() const { return specs_.size(); }
    const CovariateSpec& operator[](std::size_t i) const { return specs_.at(i); }
    const std::vector<CovariateSpec>& specs() const { return specs_; }

    std::size_t index_of(const std::string& name) const;
    bool contains(const std::string& name) const;

    /// Dictionary positions of modifiable covariates, in dictionary order.
    const std::vector<std::size_t>& modifiable() const { return modifiable_; }
    const std::vector<std::size_t>& fixed() const { return fixed_; }

    bool operator==(const CovariateDictionary& o) const { return specs_ == o.specs_; }

private:
    std::vector<CovariateSpec> specs_;
    std::vector<std::size_t> modifiable_;
    std::vector<std::size_t> fixed_;
};

/// Covariate values in dictionary order.
class RiskFactorVector {
public:
    RiskFactorVector() = default;
    explicit RiskFactorVector(Eigen::VectorXd values) : values_(std::move(values)) {}

    static RiskFactorVector zeros(const CovariateDictionary& dict) {
        return RiskFactorVector(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dict.size())));
    }

    const Eigen::VectorXd& values() const { return values_; }
    double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    Eigen::VectorXd modifiable(const CovariateDictionary& dict) const;
    RiskFactorVector with_modifiable(const CovariateDictionary& dict, const Eigen::VectorXd& mod) const;
    RiskFactorVector with(std::size_t i, double v) const;

    /// Throws CovariateLayoutError on size mismatch, DomainError if a modifiable entry leaves [0,1].
    void validate(const CovariateDictionary& dict) const;

    bool operator==(const RiskFactorVector& o) const {
        return values_.size() == o.values_.size() && values_ == o.values_;
    }

private:
    Eigen::VectorXd values_;
};

}  // namespace fctbn
