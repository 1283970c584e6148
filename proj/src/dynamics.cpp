#include "fctbn/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace fctbn {

namespace {

void check_capacity(const FctbnModel& model) {
    if (model.num_conditions() > kMaxJointConditions)
        throw CapacityError("joint state space limited to " + std::to_string(kMaxJointConditions) +
                            " conditions, model has " + std::to_string(model.num_conditions()));
}

constexpr double kMergeTolerance = 1e-9;

}  // namespace

SparseGenerator joint_generator(const FctbnModel& model, const RiskFactorVector& z) {
    check_capacity(model);
    const std::size_t n = model.num_conditions();
    const auto states = static_cast<Eigen::Index>(1u << n);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(states) * (n + 1));
    for (Eigen::Index s = 0; s < states; ++s) {
        const MccState state(static_cast<StateMask>(s));
        double exit = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (state.has(j)) continue;
            const double q = acquisition_intensity(model, j, state, z);
            triplets.emplace_back(s, static_cast<Eigen::Index>(state.with(j).bits()), q);
            exit += q;
        }
        triplets.emplace_back(s, s, -exit);
    }
    SparseGenerator q(states, states);
    q.setFromTriplets(triplets.begin(), triplets.end());
    return q;
}

Eigen::MatrixXd joint_generator_dense(const FctbnModel& model, const RiskFactorVector& z) {
    return Eigen::MatrixXd(joint_generator(model, z));
}

ForwardResult ForwardResult::sampled(double step) const {
    if (!(step > 0.0)) throw DomainError("sampling step must be positive");
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double k = std::round(times[i] / step);
        if (std::abs(times[i] - k * step) <= kMergeTolerance * std::max(1.0, std::abs(times[i])))
            rows.push_back(static_cast<Eigen::Index>(i));
    }
    ForwardResult out;
    out.joint.resize(static_cast<Eigen::Index>(rows.size()), joint.cols());
    out.marginals.resize(static_cast<Eigen::Index>(rows.size()), marginals.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.times.push_back(times[static_cast<std::size_t>(rows[r])]);
        out.joint.row(static_cast<Eigen::Index>(r)) = joint.row(rows[r]);
        out.marginals.row(static_cast<Eigen::Index>(r)) = marginals.row(rows[r]);
    }
    return out;
}

std::size_t ForwardResult::row_at(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
        if (std::abs(times[i] - t) <= kMergeTolerance * std::max(1.0, std::abs(t))) return i;
    throw DomainError("time " + std::to_string(t) + " is not on the trajectory grid");
}

ForwardResult forward_trajectory(const FctbnModel& model, MccState start, const Schedule& schedule,
                                 const ForwardOptions& options) {
    if (schedule.empty()) throw DomainError("forward_trajectory: schedule is empty");
    if (!(options.grid_step > 0.0)) throw DomainError("forward_trajectory: grid step must be positive");
    check_capacity(model);
    const std::size_t n = model.num_conditions();
    if (!start.is_subset_of(MccState(model.conditions().full_mask())))
        throw DomainError("start state references unknown conditions");

    std::vector<double> boundaries{0.0};  // relative to origin
    for (const auto& piece : schedule) {
        if (!(piece.duration > 0.0)) throw DomainError("forward_trajectory: durations must be positive");
        piece.z.validate(model.covariates());
        boundaries.push_back(boundaries.back() + piece.duration);
    }
    const double total = boundaries.back();

    // Grid times are k * step, computed (not accumulated) so that schedules sharing a prefix
    // integrate that prefix identically.
    std::vector<double> grid;
    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * options.grid_step;
        if (t > total + kMergeTolerance) break;
        grid.push_back(t);
    }
    if (total - grid.back() > kMergeTolerance) grid.push_back(total);

    // Integration nodes: grid plus boundaries not already within tolerance of a grid point.
    std::vector<double> nodes = grid;
    for (double b : boundaries) {
        const bool near = std::any_of(grid.begin(), grid.end(),
                                      [&](double g) { return std::abs(g - b) <= kMergeTolerance; });
        if (!near) nodes.push_back(b);
    }
    std::sort(nodes.begin(), nodes.end());

    std::vector<SparseGenerator> generators_t;
    generators_t.reserve(schedule.size());
    for (const auto& piece : schedule) generators_t.emplace_back(joint_generator(model, piece.z).transpose());

    auto piece_at = [&](double mid) {
        for (std::size_t i = 0; i + 1 < boundaries.size(); ++i)
            if (mid < boundaries[i + 1]) return i;
        return schedule.size() - 1;
    };

    const auto states = static_cast<Eigen::Index>(1u << n);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(states);
    p(static_cast<Eigen::Index>(start.bits())) = 1.0;

    ForwardResult out;
    out.joint.resize(static_cast<Eigen::Index>(grid.size()), states);
    std::size_t row = 0;
    auto record = [&](double t) {
        out.times.push_back(options.origin + t);
        out.joint.row(static_cast<Eigen::Index>(row++)) = p.transpose();
    };
    record(nodes.front());
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        const double a = nodes[i - 1];
        const double b = nodes[i];
        p = uniformized_transient(generators_t[piece_at(0.5 * (a + b))], p, b - a, options.tail_tolerance);
        const bool on_grid = std::any_of(grid.begin(), grid.end(), [&](double g) { return g == b; });
        if (on_grid) record(b);
    }

    // 1 - P(condition absent): states outside the start's upper set hold exact zeros, so acquired
    // conditions come out as exactly 1 instead of a rounded mass sum
    out.marginals.resize(out.joint.rows(), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        Eigen::VectorXd absent(states);
        for (Eigen::Index s = 0; s < states; ++s) absent(s) = (s >> j) & 1 ? 0.0 : 1.0;
        out.marginals.col(static_cast<Eigen::Index>(j)) =
            (1.0 - (out.joint * absent).array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
    }
    return out;
}

std::vector<Transition> sample_trajectory(const FctbnModel& model, MccState start,
                                          const RiskFactorVector& z, double horizon,
                                          std::mt19937_64& rng) {
    if (!(horizon > 0.0)) throw DomainError("sample_trajectory: horizon must be positive");
    const std::size_t n = model.num_conditions();
    const MccState full(model.conditions().full_mask());
    std::vector<Transition> path;
    std::vector<double> rates(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    MccState state = start;
    double t = 0.0;
    while (state != full) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            rates[j] = state.has(j) ? 0.0 : acquisition_intensity(model, j, state, z);
            total += rates[j];
        }
        if (!(total > 0.0)) break;
        t += std::exponential_distribution<double>(total)(rng);
        if (t >= horizon) break;
        double u = unit(rng) * total;
        std::size_t winner = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (state.has(j)) continue;
            winner = j;
            if (u < rates[j]) break;
            u -= rates[j];
        }
        state = state.with(winner);
        path.push_back({t, state});
    }
    return path;
}

std::vector<Transition> sample_trajectory(const FctbnModel& model, MccState start,
                                          const RiskFactorVector& z, double horizon,
                                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_trajectory(model, start, z, horizon, rng);
}

}  // namespace fctbn
