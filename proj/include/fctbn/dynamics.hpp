#pragma once

#include "fctbn/model.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fctbn {

/// Largest condition count for which the joint 2^n state space is materialized.
inline constexpr std::size_t kMaxJointConditions = 12;

using SparseGenerator = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Generator over the 2^n joint states (state index = bitmask). Only bit-adding transitions
/// are populated; the diagonal holds minus the total exit rate.
SparseGenerator joint_generator(const FctbnModel& model, const RiskFactorVector& z);

/// Dense copy of joint_generator, for small n.
Eigen::MatrixXd joint_generator_dense(const FctbnModel& model, const RiskFactorVector& z);

/// Transient distribution p(t) = p(0) exp(Q t) by uniformization.
///
/// `generator_t` is the transpose of Q so the update is a column product. Poisson terms are
/// accumulated until the remaining tail mass drops below `tail_tolerance`; the tail is then
/// folded into the last term so the result stays a probability vector. Long intervals are
/// split so that the uniformized rate times the sub-interval stays below 10.
template <typename Scalar, int Options, typename StorageIndex>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> uniformized_transient(
    const Eigen::SparseMatrix<Scalar, Options, StorageIndex>& generator_t,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& p0, Scalar t, Scalar tail_tolerance) {
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using std::ceil;
    using std::exp;

    Scalar rate(0);
    for (Eigen::Index k = 0; k < generator_t.outerSize(); ++k)
        for (typename Eigen::SparseMatrix<Scalar, Options, StorageIndex>::InnerIterator it(generator_t, k); it; ++it)
            if (it.row() == it.col()) rate = std::max(rate, -it.value());
    if (rate <= Scalar(0) || t <= Scalar(0)) return p0;

    const int pieces = std::max(1, static_cast<int>(ceil(rate * t / Scalar(10))));
    const Scalar h = t / Scalar(pieces);
    const Scalar mean = rate * h;

    Vec p = p0;
    for (int piece = 0; piece < pieces; ++piece) {
        Vec term = p;
        Scalar weight = exp(-mean);
        Scalar accumulated = weight;
        Vec result = weight * term;
        for (int k = 1; Scalar(1) - accumulated > tail_tolerance && k < 100000; ++k) {
            term = term + (generator_t * term) / rate;
            weight *= mean / Scalar(k);
            accumulated += weight;
            result += weight * term;
        }
        // fold truncated tail mass into the last computed term
        result += (Scalar(1) - accumulated) * term;
        p = std::move(result);
    }
    return p;
}

struct SchedulePiece {
    double duration = 0.0;
    RiskFactorVector z;
};
using Schedule = std::vector<SchedulePiece>;

struct ForwardOptions {
    double grid_step = 0.1;
    double tail_tolerance = 1e-10;
    double origin = 0.0;  // absolute time of the schedule start
};

struct ForwardResult {
    std::vector<double> times;
    Eigen::MatrixXd joint;      // rows: grid points, cols: joint states (bitmask order)
    Eigen::MatrixXd marginals;  // rows: grid points, cols: conditions

    /// Rows whose time is a multiple of `step` (within 1e-9), e.g. the yearly grid.
    ForwardResult sampled(double step) const;
    /// Row index of grid time `t`; throws DomainError if t is not on the grid.
    std::size_t row_at(double t) const;
};

/// Integrates p' = pQ(z) over a piecewise-constant covariate schedule starting from `start`.
/// Grid points and piece boundaries closer than 1e-9 are merged onto the grid point.
ForwardResult forward_trajectory(const FctbnModel& model, MccState start, const Schedule& schedule,
                                 const ForwardOptions& options = {});

struct Transition {
    double time;
    MccState state;
};

/// Competing-exponentials (Gillespie) path from `start` until `horizon` or the full state.
std::vector<Transition> sample_trajectory(const FctbnModel& model, MccState start,
                                          const RiskFactorVector& z, double horizon,
                                          std::uint64_t seed);

/// Same, drawing from a caller-owned engine.
std::vector<Transition> sample_trajectory(const FctbnModel& model, MccState start,
                                          const RiskFactorVector& z, double horizon,
                                          std::mt19937_64& rng);

}  // namespace fctbn
