#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fctbn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition on an argument's value does not hold (negative time, empty schedule, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Covariate vector does not match the model's covariate dictionary.
class CovariateLayoutError : public Error {
public:
    using Error::Error;
};

/// A linear predictor left the representable range or produced a non-finite value.
class NumericOverflowError : public Error {
public:
    using Error::Error;
};

/// Requested state space is too large to enumerate.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Data cannot identify the model (e.g. a condition with no exposure).
class StructuralError : public Error {
public:
    StructuralError(const std::string& what, std::string condition)
        : Error(what), condition_(std::move(condition)) {}
    const std::string& condition() const { return condition_; }

private:
    std::string condition_;
};

/// Online gradient descent diverged; the step size is too large.
class StepSizeError : public Error {
public:
    using Error::Error;
};

/// Invalid input data. `field` is a dotted path; `line` is 1-based, 0 if not file-backed.
class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::string field, std::size_t line = 0)
        : Error(what), field_(std::move(field)), line_(line) {}
    const std::string& field() const { return field_; }
    std::size_t line() const { return line_; }

private:
    std::string field_;
    std::size_t line_;
};

/// File written by an incompatible format version.
class VersionError : public Error {
public:
    using Error::Error;
};

struct BoundConflict {
    std::string covariate;
    double lower;
    double upper;
    std::string reason;
};

/// Behavior bounds admit no feasible plan.
class InfeasibleBoundsError : public DomainError {
public:
    InfeasibleBoundsError(const std::string& what, std::vector<BoundConflict> conflicts)
        : DomainError(what), conflicts_(std::move(conflicts)) {}
    const std::vector<BoundConflict>& conflicts() const { return conflicts_; }

private:
    std::vector<BoundConflict> conflicts_;
};

}  // namespace fctbn
