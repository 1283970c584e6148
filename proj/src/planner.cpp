#include "fctbn/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fctbn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Box {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

/// Resolves locks and checks feasibility for the given mode.
Box resolve_bounds(const FctbnModel& model, const BehaviorBounds& bounds, const Eigen::VectorXd& current,
                   BehaviorMode mode) {
    const auto& dict = model.covariates();
    const std::size_t k = dict.modifiable().size();
    if (bounds.size() != k || static_cast<std::size_t>(bounds.upper.size()) != k ||
        (!bounds.locked.empty() && bounds.locked.size() != k))
        throw CovariateLayoutError("behavior bounds must cover the " + std::to_string(k) +
                                   " modifiable covariates");
    Box box{bounds.lower, bounds.upper};
    std::vector<BoundConflict> conflicts;
    for (std::size_t i = 0; i < k; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::string& name = dict[dict.modifiable()[i]].name;
        if (!bounds.locked.empty() && bounds.locked[i]) box.lower(ii) = box.upper(ii) = current(ii);
        const double lo = box.lower(ii);
        const double hi = box.upper(ii);
        if (!std::isfinite(lo) || !std::isfinite(hi)) {
            conflicts.push_back({name, lo, hi, "bounds must be finite"});
        } else if (lo > hi) {
            conflicts.push_back({name, lo, hi, "lower bound exceeds upper bound"});
        } else if (lo < 0.0 || hi > 1.0) {
            conflicts.push_back({name, lo, hi, "bounds must lie within [0, 1]"});
        } else if (mode == BehaviorMode::Binary && lo > 0.0 && hi < 1.0) {
            conflicts.push_back({name, lo, hi, "no binary value within bounds"});
        }
    }
    if (!conflicts.empty()) throw InfeasibleBoundsError("behavior bounds are infeasible", std::move(conflicts));
    return box;
}

double change_cost(const Eigen::VectorXd& from, const Eigen::VectorXd& to, double lambda) {
    return lambda * (to - from).squaredNorm();
}

/// d(stage_risk)/d(modifiable covariates) at z.
Eigen::VectorXd risk_gradient(const FctbnModel& model, MccState state, const RiskFactorVector& z, double dt) {
    const auto& dict = model.covariates();
    const auto m = static_cast<Eigen::Index>(dict.size());
    Eigen::VectorXd full = Eigen::VectorXd::Zero(m);
    for (std::size_t j = 0; j < model.num_conditions(); ++j) {
        if (state.has(j)) continue;
        Eigen::VectorXd slope = model.baseline(j).tail(m);
        if (model.edge_features() == EdgeFeatures::Interaction)
            for (std::size_t p = 0; p < model.num_conditions(); ++p)
                if (p != j && state.has(p)) slope += model.edge(p, j).tail(m);
        full += acquisition_intensity(model, j, state, z) * slope;
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(dict.modifiable().size()));
    for (std::size_t i = 0; i < dict.modifiable().size(); ++i)
        out(static_cast<Eigen::Index>(i)) = dt * full(static_cast<Eigen::Index>(dict.modifiable()[i]));
    return out;
}

struct Objective {
    const FctbnModel& model;
    MccState state;
    const RiskFactorVector& current;
    const PlannerConfig& cfg;

    Eigen::VectorXd z0() const { return current.modifiable(model.covariates()); }

    double risk(const Eigen::VectorXd& mod) const {
        return stage_risk(model, state, current.with_modifiable(model.covariates(), mod), cfg.step);
    }

    /// Per-stage (risk, cost) for a sequence; cost already survival weighted if enabled.
    void evaluate(const std::vector<Eigen::VectorXd>& seq, std::vector<double>& risks,
                  std::vector<double>& costs, double& total) const {
        risks.clear();
        costs.clear();
        total = 0.0;
        double survival = 1.0;
        Eigen::VectorXd previous = z0();
        for (const auto& z : seq) {
            const double r = risk(z);
            const double weighted = cfg.survival_weighted ? survival * r : r;
            const double c = weighted + change_cost(previous, z, cfg.change_penalty);
            risks.push_back(r);
            costs.push_back(c);
            total += c;
            survival *= std::exp(-r);
            previous = z;
        }
    }

    double value(const std::vector<Eigen::VectorXd>& seq) const {
        std::vector<double> r, c;
        double total = 0.0;
        evaluate(seq, r, c, total);
        return total;
    }

    std::vector<Eigen::VectorXd> gradient(const std::vector<Eigen::VectorXd>& seq) const {
        const std::size_t L = seq.size();
        std::vector<double> risks(L), survival_before(L);
        double s = 1.0;
        for (std::size_t l = 0; l < L; ++l) {
            risks[l] = risk(seq[l]);
            survival_before[l] = s;
            s *= std::exp(-risks[l]);
        }
        std::vector<Eigen::VectorXd> g(L);
        for (std::size_t l = 0; l < L; ++l) {
            double weight = 1.0;
            if (cfg.survival_weighted) {
                weight = survival_before[l];
                for (std::size_t k = l + 1; k < L; ++k) weight -= survival_before[k] * risks[k];
            }
            g[l] = weight * risk_gradient(model, state,
                                          current.with_modifiable(model.covariates(), seq[l]), cfg.step);
            const Eigen::VectorXd& prev = l == 0 ? z0() : seq[l - 1];
            g[l] += 2.0 * cfg.change_penalty * (seq[l] - prev);
            if (l + 1 < L) g[l] -= 2.0 * cfg.change_penalty * (seq[l + 1] - seq[l]);
        }
        return g;
    }
};

/// Feasible binary profiles in lexicographic order (first covariate most significant).
std::vector<Eigen::VectorXd> binary_profiles(const Box& box) {
    const auto k = box.lower.size();
    if (k > 20) throw CapacityError("binary planner supports at most 20 modifiable behaviors");
    std::vector<Eigen::VectorXd> out;
    for (std::uint32_t code = 0; code < (1u << k); ++code) {
        Eigen::VectorXd z(k);
        bool ok = true;
        for (Eigen::Index i = 0; i < k; ++i) {
            z(i) = (code >> (k - 1 - i)) & 1u ? 1.0 : 0.0;
            ok = ok && z(i) >= box.lower(i) && z(i) <= box.upper(i);
        }
        if (ok) out.push_back(std::move(z));
    }
    return out;
}

std::vector<Eigen::VectorXd> solve_binary_dp(const Objective& obj, const std::vector<Eigen::VectorXd>& profiles) {
    const std::size_t F = profiles.size();
    const std::size_t L = static_cast<std::size_t>(obj.cfg.horizon);
    const double lambda = obj.cfg.change_penalty;
    std::vector<double> stage(F);
    for (std::size_t a = 0; a < F; ++a) stage[a] = obj.risk(profiles[a]);

    // to_go[l][a]: optimal cost of stages l..L-1 given profile a at stage l
    std::vector<std::vector<double>> to_go(L, std::vector<double>(F));
    to_go[L - 1] = stage;
    for (std::size_t l = L - 1; l-- > 0;) {
        for (std::size_t a = 0; a < F; ++a) {
            double best = kInf;
            for (std::size_t b = 0; b < F; ++b)
                best = std::min(best, change_cost(profiles[a], profiles[b], lambda) + to_go[l + 1][b]);
            to_go[l][a] = stage[a] + best;
        }
    }

    auto pick = [&](const Eigen::VectorXd& from, std::size_t l) {
        double best = kInf;
        for (std::size_t b = 0; b < F; ++b) best = std::min(best, change_cost(from, profiles[b], lambda) + to_go[l][b]);
        const double tol = 1e-12 * std::max(1.0, std::abs(best));
        for (std::size_t b = 0; b < F; ++b)
            if (change_cost(from, profiles[b], lambda) + to_go[l][b] <= best + tol) return b;
        return F - 1;
    };

    std::vector<Eigen::VectorXd> seq;
    Eigen::VectorXd previous = obj.z0();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t b = pick(previous, l);
        seq.push_back(profiles[b]);
        previous = profiles[b];
    }
    return seq;
}

std::vector<Eigen::VectorXd> solve_binary_enumeration(const Objective& obj,
                                                      const std::vector<Eigen::VectorXd>& profiles) {
    const std::size_t F = profiles.size();
    const std::size_t L = static_cast<std::size_t>(obj.cfg.horizon);
    double count = std::pow(static_cast<double>(F), static_cast<double>(L));
    if (count > double(1u << 22))
        throw CapacityError("survival-weighted binary planning enumerates " + std::to_string(count) +
                            " sequences; reduce the horizon or free behaviors");
    std::vector<std::size_t> idx(L, 0);
    std::vector<Eigen::VectorXd> seq(L, profiles[0]), best_seq;
    double best = kInf;
    while (true) {
        for (std::size_t l = 0; l < L; ++l) seq[l] = profiles[idx[l]];
        const double v = obj.value(seq);
        if (v < best) {
            best = v;
            best_seq = seq;
        }
        std::size_t pos = L;
        while (pos-- > 0) {
            if (++idx[pos] < F) break;
            idx[pos] = 0;
        }
        if (pos == static_cast<std::size_t>(-1)) break;
    }
    return best_seq;
}

std::vector<Eigen::VectorXd> solve_continuous(const Objective& obj, const Box& box) {
    const std::size_t L = static_cast<std::size_t>(obj.cfg.horizon);
    auto project = [&](std::vector<Eigen::VectorXd> seq) {
        for (auto& z : seq) z = z.cwiseMax(box.lower).cwiseMin(box.upper);
        return seq;
    };
    std::vector<Eigen::VectorXd> seq = project(std::vector<Eigen::VectorXd>(L, obj.z0()));
    double f = obj.value(seq);
    double alpha = 1.0;
    for (int it = 0; it < 20000; ++it) {
        const auto g = obj.gradient(seq);
        std::vector<Eigen::VectorXd> probe(L);
        double stationarity = 0.0;
        for (std::size_t l = 0; l < L; ++l) probe[l] = seq[l] - g[l];
        probe = project(std::move(probe));
        for (std::size_t l = 0; l < L; ++l) stationarity += (probe[l] - seq[l]).squaredNorm();
        if (std::sqrt(stationarity) < obj.cfg.stationarity_tolerance) break;

        bool accepted = false;
        alpha = std::min(1.0, alpha * 2.0);
        for (int bt = 0; bt < 60; ++bt, alpha *= 0.5) {
            std::vector<Eigen::VectorXd> trial(L);
            for (std::size_t l = 0; l < L; ++l) trial[l] = seq[l] - alpha * g[l];
            trial = project(std::move(trial));
            double linear = 0.0, dist = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                linear += g[l].dot(trial[l] - seq[l]);
                dist += (trial[l] - seq[l]).squaredNorm();
            }
            const double ft = obj.value(trial);
            if (ft <= f + linear + dist / (2.0 * alpha)) {
                seq = std::move(trial);
                f = ft;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    return seq;
}

}  // namespace

void PlannerConfig::validate() const {
    if (horizon < 1) throw DomainError("planner horizon must be at least 1");
    if (!(step > 0.0)) throw DomainError("planner step must be positive");
    if (!(change_penalty >= 0.0) || !std::isfinite(change_penalty))
        throw DomainError("change penalty must be finite and nonnegative");
    if (!(adherence_window > 0.0)) throw DomainError("adherence window must be positive");
}

BehaviorBounds BehaviorBounds::unrestricted(std::size_t count) {
    const auto k = static_cast<Eigen::Index>(count);
    return {Eigen::VectorXd::Zero(k), Eigen::VectorXd::Ones(k), std::vector<bool>(count, false)};
}

BehaviorBounds& BehaviorBounds::lock(std::size_t i, double value) {
    if (locked.size() != size()) locked.assign(size(), false);
    lower(static_cast<Eigen::Index>(i)) = value;
    upper(static_cast<Eigen::Index>(i)) = value;
    locked.at(i) = true;
    return *this;
}

bool BehaviorBounds::contains(const Eigen::VectorXd& z) const {
    return z.size() == lower.size() && (z.array() >= lower.array()).all() && (z.array() <= upper.array()).all();
}

double stage_risk(const FctbnModel& model, MccState state, const RiskFactorVector& z, double dt) {
    z.validate(model.covariates());
    return total_exit_rate(model, state, z) * dt;
}

double sequence_cost(const FctbnModel& model, MccState state, const RiskFactorVector& current,
                     const std::vector<Eigen::VectorXd>& sequence, const PlannerConfig& cfg) {
    return Objective{model, state, current, cfg}.value(sequence);
}

InterventionPlan plan(const FctbnModel& model, MccState state, const RiskFactorVector& current,
                      const BehaviorBounds& bounds, const PlannerConfig& cfg, double start_time) {
    cfg.validate();
    current.validate(model.covariates());
    const Objective obj{model, state, current, cfg};
    const Eigen::VectorXd z0 = obj.z0();
    const Box box = resolve_bounds(model, bounds, z0, cfg.mode);

    std::vector<Eigen::VectorXd> seq;
    if (cfg.mode == BehaviorMode::Binary) {
        const auto profiles = binary_profiles(box);
        seq = cfg.survival_weighted ? solve_binary_enumeration(obj, profiles) : solve_binary_dp(obj, profiles);
    } else {
        seq = solve_continuous(obj, box);
    }

    InterventionPlan out;
    out.start_time = start_time;
    out.state = state;
    out.current = z0;
    out.current_out_of_bounds = !((z0.array() >= box.lower.array()).all() && (z0.array() <= box.upper.array()).all());
    out.behaviors = seq;
    obj.evaluate(seq, out.stage_risks, out.stage_costs, out.total_cost);
    out.applied_action = seq.front();
    for (int l = 0; l < cfg.horizon; ++l) out.epoch_times.push_back(start_time + l * cfg.step);

    Schedule planned, held;
    for (const auto& z : seq) planned.push_back({cfg.step, current.with_modifiable(model.covariates(), z)});
    held.push_back({cfg.step * cfg.horizon, current});
    ForwardOptions fo;
    fo.origin = start_time;
    out.with_plan = forward_trajectory(model, state, planned, fo);
    out.without_plan = forward_trajectory(model, state, held, fo);
    return out;
}

MccState PatientTimeline::state_at(double t) const {
    MccState s = initial_state;
    double latest = -kInf;
    for (const auto& [time, observed] : observations)
        if (time <= t && time >= latest) {
            latest = time;
            s = observed;
        }
    return s;
}

RecedingHorizonResult receding_horizon_run(const FctbnModel& model, const PatientTimeline& timeline,
                                           const std::vector<double>& epochs, const BehaviorBounds& bounds,
                                           const PlannerConfig& cfg, double simulation_horizon,
                                           const ForwardOptions& forward) {
    cfg.validate();
    if (!(simulation_horizon > 0.0)) throw DomainError("simulation horizon must be positive");
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        if (!(epochs[i] >= 0.0)) throw DomainError("intervention epochs must be nonnegative");
        if (!(epochs[i] < simulation_horizon))
            throw DomainError("intervention epoch " + std::to_string(epochs[i]) + " is not before the horizon end");
        if (i > 0 && !(epochs[i] > epochs[i - 1]))
            throw DomainError("intervention epochs must be strictly increasing");
    }
    const auto& dict = model.covariates();
    const Eigen::VectorXd observed = timeline.covariates.modifiable(dict);

    struct Window {
        double start;
        double end;
        Eigen::VectorXd action;
    };
    std::vector<Window> windows;
    RecedingHorizonResult out;
    for (double e : epochs) {
        Eigen::VectorXd in_force = observed;
        if (!windows.empty() && windows.back().end > e) {
            in_force = windows.back().action;
            windows.back().end = e;
        }
        auto p = plan(model, timeline.state_at(e), timeline.covariates.with_modifiable(dict, in_force), bounds,
                      cfg, e);
        windows.push_back({e, std::min(e + cfg.adherence_window, simulation_horizon), p.applied_action});
        out.plans.push_back(std::move(p));
    }

    out.baseline_schedule.push_back({simulation_horizon, timeline.covariates});
    double t = 0.0;
    for (const auto& w : windows) {
        if (w.end <= w.start) continue;
        if (w.start > t) out.intervened_schedule.push_back({w.start - t, timeline.covariates});
        out.intervened_schedule.push_back({w.end - w.start, timeline.covariates.with_modifiable(dict, w.action)});
        t = w.end;
    }
    if (simulation_horizon > t) out.intervened_schedule.push_back({simulation_horizon - t, timeline.covariates});

    out.baseline = forward_trajectory(model, timeline.initial_state, out.baseline_schedule, forward);
    out.intervened = forward_trajectory(model, timeline.initial_state, out.intervened_schedule, forward);
    return out;
}

double first_behavior_change(const RecedingHorizonResult& run, double tolerance) {
    for (const auto& p : run.plans)
        if ((p.applied_action - p.current).cwiseAbs().maxCoeff() > tolerance) return p.start_time;
    return -1.0;
}

std::vector<SensitivityEntry> sensitivity_report(const FctbnModel& model, MccState state,
                                                 const RiskFactorVector& current, const BehaviorBounds& bounds,
                                                 const PlannerConfig& cfg, double probability_horizon) {
    cfg.validate();
    current.validate(model.covariates());
    if (!(probability_horizon > 0.0)) throw DomainError("probability horizon must be positive");
    const auto& dict = model.covariates();
    const Eigen::VectorXd z0 = current.modifiable(dict);
    const Box box = resolve_bounds(model, bounds, z0, cfg.mode);

    const double base_risk = stage_risk(model, state, current, cfg.step);
    const auto base_traj = forward_trajectory(model, state, {{probability_horizon, current}});
    const Eigen::VectorXd base_prob = base_traj.marginals.bottomRows(1).transpose();

    std::vector<SensitivityEntry> out;
    for (std::size_t i = 0; i < dict.modifiable().size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        SensitivityEntry e;
        e.covariate = dict[dict.modifiable()[i]].name;
        e.index = i;
        e.from = z0(ii);
        const double lo = box.lower(ii), hi = box.upper(ii);
        e.to = std::abs(hi - e.from) >= std::abs(e.from - lo) ? hi : lo;
        e.changed = e.to != e.from;
        e.delta_probability = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.num_conditions()));
        if (e.changed) {
            const auto z = current.with(dict.modifiable()[i], e.to);
            e.delta_stage_risk = stage_risk(model, state, z, cfg.step) - base_risk;
            const auto traj = forward_trajectory(model, state, {{probability_horizon, z}});
            e.delta_probability = traj.marginals.bottomRows(1).transpose() - base_prob;
        }
        out.push_back(std::move(e));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::abs(a.delta_stage_risk) > std::abs(b.delta_stage_risk);
    });
    return out;
}

}  // namespace fctbn
