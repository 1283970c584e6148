#include "fctbn/model.hpp"

#include <cmath>

namespace fctbn {

namespace {

void require_finite(const Eigen::VectorXd& v, const std::string& what) {
    if (!v.allFinite()) throw DomainError(what + ": coefficients must be finite");
}

}  // namespace

FctbnModel::FctbnModel(ConditionSet conditions, CovariateDictionary covariates,
                       EdgeFeatures edge_features, double prune_threshold)
    : conditions_(std::move(conditions)),
      covariates_(std::move(covariates)),
      edge_features_(edge_features),
      prune_threshold_(prune_threshold) {
    if (!(prune_threshold_ >= 0.0)) throw DomainError("prune threshold must be nonnegative");
    const auto n = conditions_.size();
    baseline_.assign(n, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(baseline_size())));
    edges_.assign(n * n, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(edge_group_size())));
}

const Eigen::VectorXd& FctbnModel::edge(std::size_t parent, std::size_t child) const {
    if (parent == child || parent >= num_conditions() || child >= num_conditions())
        throw DomainError("invalid edge index");
    return edges_[parent * num_conditions() + child];
}

const Eigen::VectorXd& FctbnModel::group(const GroupKey& key) const {
    return key.is_baseline() ? baseline(key.child) : edge(*key.parent, key.child);
}

void FctbnModel::set_baseline(std::size_t child, Eigen::VectorXd coefficients) {
    if (static_cast<std::size_t>(coefficients.size()) != baseline_size())
        throw CovariateLayoutError("baseline group for " + conditions_.name(child) + " has wrong size");
    require_finite(coefficients, "baseline group for " + conditions_.name(child));
    baseline_.at(child) = std::move(coefficients);
}

void FctbnModel::set_edge(std::size_t parent, std::size_t child, Eigen::VectorXd coefficients) {
    if (parent == child || parent >= num_conditions() || child >= num_conditions())
        throw DomainError("invalid edge index");
    if (static_cast<std::size_t>(coefficients.size()) != edge_group_size())
        throw CovariateLayoutError("edge group " + conditions_.name(parent) + "->" +
                                   conditions_.name(child) + " has wrong size");
    require_finite(coefficients, "edge group");
    edges_[parent * num_conditions() + child] = std::move(coefficients);
}

void FctbnModel::set_group(const GroupKey& key, Eigen::VectorXd coefficients) {
    if (key.is_baseline())
        set_baseline(key.child, std::move(coefficients));
    else
        set_edge(*key.parent, key.child, std::move(coefficients));
}

std::vector<std::string> FctbnModel::coefficient_names(const GroupKey& key) const {
    if (!key.is_baseline() && edge_features_ == EdgeFeatures::MainEffect) return {"main"};
    std::vector<std::string> names{"intercept"};
    for (const auto& s : covariates_.specs()) names.push_back(s.name);
    return names;
}

bool FctbnModel::has_edge(std::size_t parent, std::size_t child) const {
    return edge(parent, child).norm() > prune_threshold_;
}

std::vector<std::pair<std::size_t, std::size_t>> FctbnModel::edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t c = 0; c < num_conditions(); ++c)
        for (std::size_t p = 0; p < num_conditions(); ++p)
            if (p != c && has_edge(p, c)) out.emplace_back(p, c);
    return out;
}

std::vector<CoefficientGroup> FctbnModel::groups() const {
    std::vector<CoefficientGroup> out;
    for (std::size_t c = 0; c < num_conditions(); ++c) {
        out.push_back({GroupKey{c, std::nullopt}, baseline_[c]});
        for (std::size_t p = 0; p < num_conditions(); ++p)
            if (p != c) out.push_back({GroupKey{c, p}, edge(p, c)});
    }
    return out;
}

std::size_t FctbnModel::edge_offset(std::size_t parent, std::size_t child) const {
    if (parent == child) throw DomainError("invalid edge index");
    const std::size_t slot = parent < child ? parent : parent - 1;
    return baseline_size() + slot * edge_group_size();
}

Eigen::VectorXd FctbnModel::child_parameters(std::size_t child) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(child_parameter_count()));
    const auto b = static_cast<Eigen::Index>(baseline_size());
    const auto k = static_cast<Eigen::Index>(edge_group_size());
    out.head(b) = baseline_.at(child);
    for (std::size_t p = 0; p < num_conditions(); ++p)
        if (p != child) out.segment(static_cast<Eigen::Index>(edge_offset(p, child)), k) = edge(p, child);
    return out;
}

void FctbnModel::set_child_parameters(std::size_t child, const Eigen::VectorXd& params) {
    if (static_cast<std::size_t>(params.size()) != child_parameter_count())
        throw CovariateLayoutError("child parameter vector has wrong size");
    const auto b = static_cast<Eigen::Index>(baseline_size());
    const auto k = static_cast<Eigen::Index>(edge_group_size());
    set_baseline(child, params.head(b));
    for (std::size_t p = 0; p < num_conditions(); ++p)
        if (p != child) set_edge(p, child, params.segment(static_cast<Eigen::Index>(edge_offset(p, child)), k));
}

Eigen::VectorXd FctbnModel::parameters() const {
    const auto per = static_cast<Eigen::Index>(child_parameter_count());
    Eigen::VectorXd out(per * static_cast<Eigen::Index>(num_conditions()));
    for (std::size_t c = 0; c < num_conditions(); ++c)
        out.segment(static_cast<Eigen::Index>(c) * per, per) = child_parameters(c);
    return out;
}

void FctbnModel::set_parameters(const Eigen::VectorXd& params) {
    const auto per = static_cast<Eigen::Index>(child_parameter_count());
    if (params.size() != per * static_cast<Eigen::Index>(num_conditions()))
        throw CovariateLayoutError("parameter vector has wrong size");
    for (std::size_t c = 0; c < num_conditions(); ++c)
        set_child_parameters(c, params.segment(static_cast<Eigen::Index>(c) * per, per));
}

double FctbnModel::linear_predictor(std::size_t child, MccState state, const Eigen::VectorXd& z) const {
    const auto& b = baseline_[child];
    double eta = b(0) + b.tail(b.size() - 1).dot(z);
    for (std::size_t p = 0; p < num_conditions(); ++p) {
        if (p == child || !state.has(p)) continue;
        const auto& e = edges_[p * num_conditions() + child];
        eta += edge_features_ == EdgeFeatures::MainEffect ? e(0) : e(0) + e.tail(e.size() - 1).dot(z);
    }
    return eta;
}

Eigen::VectorXd feature_row(const FctbnModel& model, std::size_t child, MccState state,
                            const Eigen::VectorXd& z) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.child_parameter_count()));
    x(0) = 1.0;
    x.segment(1, z.size()) = z;
    const auto k = static_cast<Eigen::Index>(model.edge_group_size());
    for (std::size_t p = 0; p < model.num_conditions(); ++p) {
        if (p == child || !state.has(p)) continue;
        const auto off = static_cast<Eigen::Index>(model.edge_offset(p, child));
        if (k == 1) {
            x(off) = 1.0;
        } else {
            x(off) = 1.0;
            x.segment(off + 1, z.size()) = z;
        }
    }
    return x;
}

double acquisition_intensity(const FctbnModel& model, std::size_t child, MccState state,
                             const RiskFactorVector& z) {
    if (child >= model.num_conditions()) throw DomainError("child index out of range");
    if (z.size() != model.covariates().size())
        throw CovariateLayoutError("risk factor vector has " + std::to_string(z.size()) +
                                   " entries, model expects " + std::to_string(model.covariates().size()));
    if (state.has(child))
        throw DomainError("condition " + model.conditions().name(child) + " is already acquired");
    const double eta = model.linear_predictor(child, state, z.values());
    if (!std::isfinite(eta) || std::abs(eta) > kMaxLinearPredictor)
        throw NumericOverflowError("linear predictor for " + model.conditions().name(child) +
                                   " is " + std::to_string(eta) + ", outside [-50, 50]");
    return std::exp(eta);
}

double total_exit_rate(const FctbnModel& model, MccState state, const RiskFactorVector& z) {
    double total = 0.0;
    for (std::size_t j = 0; j < model.num_conditions(); ++j)
        if (!state.has(j)) total += acquisition_intensity(model, j, state, z);
    return total;
}

}  // namespace fctbn
