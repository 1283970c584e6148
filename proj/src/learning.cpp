#include "fctbn/learning.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fctbn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_compatible(const FctbnModel& model, const TrajectoryDataset& dataset) {
    if (!(model.conditions() == dataset.conditions()))
        throw CovariateLayoutError("model and dataset condition sets differ");
    if (!(model.covariates() == dataset.covariates()))
        throw CovariateLayoutError("model and dataset covariate dictionaries differ");
}

/// Poisson-regression view of one child: one row per usable record in which it is at risk.
struct ChildDesign {
    Eigen::MatrixXd x;
    Eigen::VectorXd exposure;
    Eigen::VectorXd events;
    std::vector<std::size_t> record;  // source record of each row
};

std::vector<ChildDesign> build_designs(const FctbnModel& layout, const TrajectoryDataset& dataset) {
    const std::size_t n = layout.num_conditions();
    const auto p = static_cast<Eigen::Index>(layout.child_parameter_count());
    std::vector<ChildDesign> designs(n);
    std::vector<std::size_t> rows(n, 0);
    for (const auto& r : dataset.records())
        if (TrajectoryDataset::usable(r))
            for (std::size_t j = 0; j < n; ++j) rows[j] += r.state.has(j) ? 0 : 1;
    for (std::size_t j = 0; j < n; ++j) {
        const auto m = static_cast<Eigen::Index>(rows[j]);
        designs[j].x.resize(m, p);
        designs[j].exposure.resize(m);
        designs[j].events.resize(m);
        designs[j].record.reserve(rows[j]);
    }
    std::vector<Eigen::Index> next(n, 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& r = dataset.records()[i];
        if (!TrajectoryDataset::usable(r)) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (r.state.has(j)) continue;
            auto& d = designs[j];
            const Eigen::Index row = next[j]++;
            d.x.row(row) = feature_row(layout, j, r.state, r.z).transpose();
            d.exposure(row) = r.duration();
            d.events(row) = r.acquired == j ? 1.0 : 0.0;
            d.record.push_back(i);
        }
    }
    return designs;
}

/// Penalty weights (k * lambda_j) laid out over one child's parameter block.
Eigen::VectorXd penalty_diagonal(const FctbnModel& layout, const RegularizationSpec& reg, std::size_t child) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.child_parameter_count()));
    const auto k = static_cast<Eigen::Index>(layout.edge_group_size());
    for (std::size_t p = 0; p < layout.num_conditions(); ++p) {
        if (p == child) continue;
        w.segment(static_cast<Eigen::Index>(layout.edge_offset(p, child)), k)
            .setConstant(static_cast<double>(k) * reg.group_lambda(p, child));
    }
    return w;
}

/// Negative log-likelihood plus penalty for one child; +inf when a predictor leaves [-50, 50].
double child_objective(const ChildDesign& d, const Eigen::VectorXd& beta, const Eigen::VectorXd& pen) {
    const Eigen::VectorXd eta = d.x * beta;
    if (eta.size() > 0 && !(eta.cwiseAbs().maxCoeff() <= kMaxLinearPredictor)) return kInf;
    const double nll = d.exposure.dot(eta.array().exp().matrix()) - d.events.dot(eta);
    return nll + (pen.array() * beta.array().square()).sum();
}

Eigen::VectorXd child_gradient(const ChildDesign& d, const Eigen::VectorXd& beta, const Eigen::VectorXd& pen) {
    const Eigen::VectorXd mu = (d.x * beta).array().exp().matrix().cwiseProduct(d.exposure);
    return d.x.transpose() * (mu - d.events) + 2.0 * pen.cwiseProduct(beta);
}

Eigen::MatrixXd child_hessian(const ChildDesign& d, const Eigen::VectorXd& beta, const Eigen::VectorXd& pen) {
    const Eigen::VectorXd mu = (d.x * beta).array().exp().matrix().cwiseProduct(d.exposure);
    Eigen::MatrixXd h = d.x.transpose() * mu.asDiagonal() * d.x;
    h.diagonal() += 2.0 * pen;
    return h;
}

struct ChildFit {
    Eigen::VectorXd beta;
    std::vector<double> history;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
};

ChildFit newton(const ChildDesign& d, Eigen::VectorXd beta, const Eigen::VectorXd& pen,
                const Eigen::VectorXd& free_mask, const FitOptions& options) {
    ChildFit fit;
    beta = beta.cwiseProduct(free_mask);
    double f = child_objective(d, beta, pen);
    if (!std::isfinite(f)) {
        beta.setZero();
        f = child_objective(d, beta, pen);
    }
    fit.history.push_back(f);
    const auto p = beta.size();
    for (int it = 0; it < options.max_iterations; ++it) {
        const Eigen::VectorXd g = child_gradient(d, beta, pen).cwiseProduct(free_mask);
        fit.gradient_norm = g.norm();
        if (fit.gradient_norm < options.gradient_tolerance) {
            fit.converged = true;
            break;
        }
        Eigen::MatrixXd h = child_hessian(d, beta, pen);
        for (Eigen::Index i = 0; i < p; ++i) {
            if (free_mask(i) != 0.0) continue;
            h.row(i).setZero();
            h.col(i).setZero();
            h(i, i) = 1.0;
        }
        double damping = 1e-10 * std::max(1.0, h.diagonal().maxCoeff());
        Eigen::VectorXd step;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Eigen::MatrixXd hd = h;
            hd.diagonal().array() += damping;
            step = -hd.ldlt().solve(g);
            if (step.allFinite() && g.dot(step) < 0.0) break;
            damping *= 100.0;
        }
        if (!step.allFinite() || !(g.dot(step) < 0.0)) break;

        const double slope = g.dot(step);
        double alpha = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving, alpha *= 0.5) {
            const Eigen::VectorXd trial = beta + alpha * step;
            const double ft = child_objective(d, trial, pen);
            if (!std::isfinite(ft)) continue;
            // near the optimum the decrease drops below the rounding of f; fall back on the gradient
            const bool flat = ft - f <= 16.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
            if (ft <= f + 1e-4 * alpha * slope ||
                (flat && child_gradient(d, trial, pen).cwiseProduct(free_mask).norm() < fit.gradient_norm)) {
                beta = trial;
                f = ft;
                accepted = true;
                break;
            }
        }
        ++fit.iterations;
        if (!accepted) break;
        fit.history.push_back(f);
    }
    if (!fit.converged) {
        fit.gradient_norm = child_gradient(d, beta, pen).cwiseProduct(free_mask).norm();
        fit.converged = fit.gradient_norm < options.gradient_tolerance;
    }
    fit.beta = std::move(beta);
    return fit;
}

Eigen::VectorXd free_mask_for(const FctbnModel& layout, const FitOptions& options, std::size_t child) {
    Eigen::VectorXd mask = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(layout.child_parameter_count()));
    if (options.active_edges.empty()) return mask;
    const std::size_t n = layout.num_conditions();
    if (options.active_edges.size() != n * n) throw DomainError("active_edges must have n*n entries");
    const auto k = static_cast<Eigen::Index>(layout.edge_group_size());
    for (std::size_t p = 0; p < n; ++p)
        if (p != child && !options.active_edges[p * n + child])
            mask.segment(static_cast<Eigen::Index>(layout.edge_offset(p, child)), k).setZero();
    return mask;
}

FctbnModel zero_pruned(FctbnModel model, double epsilon) {
    const std::size_t n = model.num_conditions();
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t p = 0; p < n; ++p)
            if (p != c && model.edge(p, c).norm() < epsilon)
                model.set_edge(p, c, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.edge_group_size())));
    return model;
}

}  // namespace

std::map<StatsKey, ExposureStats> sufficient_stats(const TrajectoryDataset& dataset) {
    std::map<StatsKey, ExposureStats> stats;
    const std::size_t n = dataset.conditions().size();
    for (const auto& r : dataset.records()) {
        if (!TrajectoryDataset::usable(r)) continue;
        std::vector<double> stratum(r.z.data(), r.z.data() + r.z.size());
        for (std::size_t j = 0; j < n; ++j) {
            if (r.state.has(j)) continue;
            auto& s = stats[StatsKey{j, r.state.bits(), stratum}];
            s.exposure += r.duration();
            s.events += r.acquired == j ? 1.0 : 0.0;
        }
    }
    return stats;
}

double log_likelihood(const FctbnModel& model, const TrajectoryDataset& dataset) {
    require_compatible(model, dataset);
    const auto designs = build_designs(model, dataset);
    double ll = 0.0;
    for (std::size_t j = 0; j < designs.size(); ++j) {
        const auto& d = designs[j];
        const Eigen::VectorXd eta = d.x * model.child_parameters(j);
        if (eta.size() > 0 && !(eta.cwiseAbs().maxCoeff() <= kMaxLinearPredictor))
            throw NumericOverflowError("linear predictor for " + model.conditions().name(j) +
                                       " outside [-50, 50]");
        ll += d.events.dot(eta) - d.exposure.dot(eta.array().exp().matrix());
    }
    return ll;
}

double printed_exposure_sum(const FctbnModel& model, const TrajectoryDataset& dataset) {
    require_compatible(model, dataset);
    double total = 0.0;
    for (const auto& r : dataset.records()) {
        if (!TrajectoryDataset::usable(r)) continue;
        for (std::size_t j = 0; j < model.num_conditions(); ++j)
            if (!r.state.has(j)) total += r.duration() * std::exp(model.linear_predictor(j, r.state, r.z));
    }
    return total;
}

double penalty(const FctbnModel& model, const RegularizationSpec& reg) {
    const std::size_t n = model.num_conditions();
    if (!reg.weights.empty() && reg.weights.size() != n * n)
        throw DomainError("regularization weights must have n*n entries");
    const double k = static_cast<double>(model.edge_group_size());
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t p = 0; p < n; ++p)
            if (p != c) total += k * reg.group_lambda(p, c) * model.edge(p, c).squaredNorm();
    return total;
}

double penalized_objective(const FctbnModel& model, const TrajectoryDataset& dataset,
                           const RegularizationSpec& reg) {
    return -log_likelihood(model, dataset) + penalty(model, reg);
}

Eigen::VectorXd penalized_gradient(const FctbnModel& model, const TrajectoryDataset& dataset,
                                   const RegularizationSpec& reg) {
    require_compatible(model, dataset);
    const auto designs = build_designs(model, dataset);
    const auto per = static_cast<Eigen::Index>(model.child_parameter_count());
    Eigen::VectorXd g(per * static_cast<Eigen::Index>(model.num_conditions()));
    for (std::size_t j = 0; j < designs.size(); ++j)
        g.segment(static_cast<Eigen::Index>(j) * per, per) =
            child_gradient(designs[j], model.child_parameters(j), penalty_diagonal(model, reg, j));
    return g;
}

FitResult fit_mle(const TrajectoryDataset& dataset, const RegularizationSpec& reg,
                  const std::optional<FctbnModel>& init, const FitOptions& options) {
    if (dataset.empty()) throw DomainError("fit_mle: dataset is empty");
    FctbnModel model = init ? *init
                            : FctbnModel(dataset.conditions(), dataset.covariates(), options.edge_features,
                                         reg.prune_epsilon);
    require_compatible(model, dataset);
    const std::size_t n = model.num_conditions();
    if (!reg.weights.empty() && reg.weights.size() != n * n)
        throw DomainError("regularization weights must have n*n entries");

    const auto designs = build_designs(model, dataset);
    FitReport report;
    report.records_used = dataset.usable_count();
    report.records_excluded = dataset.size() - report.records_used;

    std::vector<ChildFit> fits(n);
    double grad_sq = 0.0;
    bool all_converged = true;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& d = designs[j];
        const double exposure = d.exposure.sum();
        if (!(exposure > 0.0))
            throw StructuralError("condition " + model.conditions().name(j) + " has zero exposure",
                                  model.conditions().name(j));
        if (d.events.sum() == 0.0) {
            Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.child_parameter_count()));
            beta(0) = kFlooredIntercept;
            fits[j].beta = beta;
            fits[j].converged = true;
            fits[j].history.push_back(child_objective(d, beta, penalty_diagonal(model, reg, j)));
            report.floored_conditions.push_back(model.conditions().name(j));
            continue;
        }
        fits[j] = newton(d, model.child_parameters(j), penalty_diagonal(model, reg, j),
                         free_mask_for(model, options, j), options);
        grad_sq += fits[j].gradient_norm * fits[j].gradient_norm;
        all_converged = all_converged && fits[j].converged;
    }

    std::size_t longest = 0;
    for (const auto& f : fits) longest = std::max(longest, f.history.size());
    for (std::size_t i = 0; i < longest; ++i) {
        double total = 0.0;
        for (const auto& f : fits) total += f.history[std::min(i, f.history.size() - 1)];
        report.objective_history.push_back(total);
    }
    for (std::size_t j = 0; j < n; ++j) {
        model.set_child_parameters(j, fits[j].beta);
        report.iterations = std::max(report.iterations, fits[j].iterations);
    }
    report.gradient_norm = std::sqrt(grad_sq);
    report.converged = all_converged;
    return {std::move(model), std::move(report)};
}

RegularizationSpec adaptive_regularization(const TrajectoryDataset& dataset, double lambda,
                                           const FitOptions& options) {
    if (!(lambda >= 0.0)) throw DomainError("lambda must be nonnegative");
    RegularizationSpec pilot;
    pilot.num_conditions = dataset.conditions().size();
    pilot.lambda = pilot.pilot_lambda;
    const auto fit = fit_mle(dataset, pilot, std::nullopt, options);

    const std::size_t n = pilot.num_conditions;
    RegularizationSpec reg = pilot;
    reg.lambda = lambda;
    reg.weights.assign(n * n, 0.0);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t p = 0; p < n; ++p)
            if (p != c)
                reg.weights[p * n + c] = 1.0 / std::max(fit.model.edge(p, c).norm(), reg.pilot_norm_floor);
    return reg;
}

RegularizationSpec with_lambda(RegularizationSpec reg, double lambda) {
    if (!(lambda >= 0.0)) throw DomainError("lambda must be nonnegative");
    reg.lambda = lambda;
    return reg;
}

StructurePath structure_path(const TrajectoryDataset& dataset, const std::vector<double>& lambda_grid,
                             const FitOptions& options, double prune_epsilon) {
    if (lambda_grid.empty()) throw DomainError("structure_path: lambda grid is empty");
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        if (!(lambda_grid[i] >= 0.0)) throw DomainError("structure_path: lambdas must be nonnegative");
        if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1]))
            throw DomainError("structure_path: lambda grid must be strictly increasing");
    }

    StructurePath path;
    path.regularization = adaptive_regularization(dataset, 0.0, options);
    path.regularization.prune_epsilon = prune_epsilon;
    const std::size_t n = dataset.conditions().size();
    const double log_n = std::log(static_cast<double>(std::max<std::size_t>(1, dataset.usable_count())));

    std::optional<FctbnModel> warm;
    for (double lambda : lambda_grid) {
        const auto reg = with_lambda(path.regularization, lambda);
        auto fit = fit_mle(dataset, reg, warm, options);
        warm = fit.model;

        PathEntry entry;
        entry.lambda = lambda;
        entry.model = zero_pruned(fit.model, prune_epsilon);
        entry.edges = entry.model.edges();
        entry.report = std::move(fit.report);

        FitOptions refit_options = options;
        refit_options.active_edges.assign(n * n, false);
        for (auto [p, c] : entry.edges) refit_options.active_edges[p * n + c] = true;
        RegularizationSpec unpenalized = with_lambda(path.regularization, 0.0);
        entry.refit = fit_mle(dataset, unpenalized, entry.model, refit_options).model;

        double parameters = 0.0;
        for (const auto& g : entry.refit.groups())
            if (g.coefficients.norm() > 0.0) parameters += static_cast<double>(g.coefficients.size());
        entry.score = -2.0 * log_likelihood(entry.refit, dataset) + log_n * parameters;
        path.entries.push_back(std::move(entry));
    }
    for (std::size_t i = 1; i < path.entries.size(); ++i)
        if (path.entries[i].score <= path.entries[path.best].score) path.best = i;
    return path;
}

OnlineUpdateResult online_update(const FctbnModel& model, const TrajectoryDataset& batch,
                                 const OnlineUpdateConfig& cfg, const RegularizationSpec& reg) {
    if (batch.empty()) throw DomainError("online_update: batch is empty");
    if (!(cfg.learning_rate >= 0.0) || cfg.batch_size == 0 || cfg.max_epochs < 1 || !(cfg.tolerance > 0.0))
        throw DomainError("online_update: invalid configuration");
    require_compatible(model, batch);

    const std::size_t n = model.num_conditions();
    const auto designs = build_designs(model, batch);
    std::vector<Eigen::VectorXd> pen(n);
    std::vector<Eigen::VectorXd> beta(n);
    for (std::size_t j = 0; j < n; ++j) {
        pen[j] = penalty_diagonal(model, reg, j);
        beta[j] = model.child_parameters(j);
    }
    auto objective = [&] {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += child_objective(designs[j], beta[j], pen[j]);
        return total;
    };

    // Row ranges of each child's design per mini-batch of records.
    const std::size_t records = batch.size();
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < records; s += cfg.batch_size) starts.push_back(s);

    OnlineUpdateResult result{model, 0, 0.0, 0.0, false};
    const Eigen::VectorXd initial = model.parameters();
    double previous = objective();
    int rising = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<Eigen::VectorXd> before = beta;
        std::vector<Eigen::Index> row(n, 0);
        for (std::size_t s : starts) {
            const std::size_t end = std::min(records, s + cfg.batch_size);
            const double share = static_cast<double>(end - s) / static_cast<double>(records);
            for (std::size_t j = 0; j < n; ++j) {
                const auto& d = designs[j];
                const Eigen::Index first = row[j];
                while (row[j] < d.x.rows() && d.record[static_cast<std::size_t>(row[j])] < end) ++row[j];
                const Eigen::Index count = row[j] - first;
                Eigen::VectorXd g = 2.0 * share * pen[j].cwiseProduct(beta[j]);
                if (count > 0) {
                    const auto x = d.x.middleRows(first, count);
                    const Eigen::VectorXd eta = x * beta[j];
                    if (!(eta.cwiseAbs().maxCoeff() <= kMaxLinearPredictor))
                        throw StepSizeError("online_update diverged (linear predictor out of range); "
                                            "use a smaller learning rate");
                    const Eigen::VectorXd mu =
                        eta.array().exp().matrix().cwiseProduct(d.exposure.segment(first, count));
                    g += x.transpose() * (mu - d.events.segment(first, count));
                }
                beta[j] -= cfg.learning_rate * g;
            }
        }
        ++result.epochs;
        double change_sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) change_sq += (beta[j] - before[j]).squaredNorm();
        result.last_epoch_change = std::sqrt(change_sq);

        const double current = objective();
        if (!std::isfinite(current))
            throw StepSizeError("online_update diverged (objective not finite); use a smaller learning rate");
        rising = current > previous ? rising + 1 : 0;
        if (rising >= 10)
            throw StepSizeError("online_update objective increased for 10 consecutive epochs; "
                                "use a smaller learning rate");
        previous = current;
        if (result.last_epoch_change < cfg.tolerance) {
            result.converged = true;
            break;
        }
    }
    for (std::size_t j = 0; j < n; ++j) result.model.set_child_parameters(j, beta[j]);
    result.parameter_change = (result.model.parameters() - initial).norm();
    return result;
}

}  // namespace fctbn
