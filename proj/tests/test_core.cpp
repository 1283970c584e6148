#include "support.hpp"

#include "fctbn/dynamics.hpp"

#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

using namespace fctbn;
using namespace fctbn::testing;

TEST_CASE("condition set ordering and state bits") {
    const ConditionSet set;
    CHECK(set.names() == std::vector<std::string>{"DI", "OB", "HP", "HL", "CI"});
    CHECK(set.index_of("HL") == 3);
    CHECK(set.full_mask() == 0b11111u);
    CHECK_THROWS_AS(set.index_of("XX"), DomainError);
    CHECK_THROWS_AS(ConditionSet({"A", "A"}), DomainError);
    CHECK_THROWS_AS(ConditionSet({"A", ""}), DomainError);
    CHECK_THROWS_AS(ConditionSet(std::vector<std::string>{}), DomainError);

    const auto s = MccState::from_names(set, {"OB", "HL"});
    CHECK(s.bits() == 0b01010u);
    CHECK(s.has(1));
    CHECK_FALSE(s.has(0));
    CHECK(s.count() == 2);
    CHECK(s.with(0).bits() == 0b01011u);
    CHECK(s.is_subset_of(s.with(4)));
    CHECK_FALSE(s.with(4).is_subset_of(s));
    CHECK(s.names(set) == std::vector<std::string>{"OB", "HL"});
}

TEST_CASE("risk factor vectors follow the dictionary") {
    const auto dict = CovariateDictionary::standard_roster();
    CHECK(dict.size() == 8);
    CHECK(dict.modifiable() == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(dict.fixed() == std::vector<std::size_t>{4, 5, 6, 7});
    CHECK_THROWS_AS(dict.index_of("income"), CovariateLayoutError);
    CHECK_THROWS_AS(behaviors({"intercept"}), DomainError);
    CHECK_THROWS_AS(behaviors({"a", "a"}), DomainError);

    auto z = RiskFactorVector::zeros(dict).with(dict.index_of("age_group"), 3.0);
    CHECK_NOTHROW(z.validate(dict));
    CHECK_THROWS_AS(z.with(0, 1.5).validate(dict), DomainError);
    CHECK_THROWS_AS(z.with(1, -0.1).validate(dict), DomainError);
    CHECK_THROWS_AS(RiskFactorVector(Eigen::VectorXd::Zero(7)).validate(dict), CovariateLayoutError);

    const auto mod = vec({1, 0, 1, 0});
    const auto z2 = z.with_modifiable(dict, mod);
    CHECK(z2.modifiable(dict) == mod);
    CHECK(z2[4] == 3.0);
}

TEST_CASE("acquisition intensity") {
    const auto dict = behaviors({"diet", "exercise"});
    FctbnModel m(ConditionSet({"DI", "OB"}), dict);
    const RiskFactorVector z(vec({1.0, 0.5}));

    SUBCASE("all groups zero gives rate one") { CHECK(acquisition_intensity(m, 0, MccState{}, z) == 1.0); }
    SUBCASE("intercept only") {
        m.set_baseline(0, vec({std::log(0.5), 0, 0}));
        CHECK(acquisition_intensity(m, 0, MccState{}, z) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("covariate effects") {
        m.set_baseline(0, vec({0.2, -0.4, 0.6}));
        CHECK(acquisition_intensity(m, 0, MccState{}, z) == doctest::Approx(std::exp(0.1)).epsilon(1e-15));
        CHECK(acquisition_intensity(m, 0, MccState{}, z) == doctest::Approx(1.10517).epsilon(1e-5));
    }
    SUBCASE("parent edges add to the log-intensity only when the parent is acquired") {
        m.set_baseline(0, vec({-1.0, 0, 0}));
        m.set_edge(1, 0, vec({0.7}));
        CHECK(acquisition_intensity(m, 0, MccState{}, z) == doctest::Approx(std::exp(-1.0)));
        CHECK(acquisition_intensity(m, 0, MccState(0b10), z) == doctest::Approx(std::exp(-0.3)));
        CHECK(m.has_edge(1, 0));
        CHECK_FALSE(m.has_edge(0, 1));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(acquisition_intensity(m, 0, MccState(0b01), z), DomainError);
        CHECK_THROWS_AS(acquisition_intensity(m, 0, MccState{}, RiskFactorVector(vec({1.0}))), CovariateLayoutError);
        m.set_baseline(0, vec({50.5, 0, 0}));
        CHECK_THROWS_AS(acquisition_intensity(m, 0, MccState{}, z), NumericOverflowError);
        m.set_baseline(0, vec({50.0, 0, 0}));
        CHECK(std::isfinite(acquisition_intensity(m, 0, MccState{}, RiskFactorVector(vec({0.0, 0.0})))));
    }
}

TEST_CASE("interaction edges multiply the parent indicator by (1, z)") {
    const auto dict = behaviors({"diet"});
    FctbnModel m(ConditionSet({"A", "B"}), dict, EdgeFeatures::Interaction);
    CHECK(m.edge_group_size() == 2);
    m.set_edge(1, 0, vec({0.3, -0.5}));
    const RiskFactorVector z(vec({1.0}));
    CHECK(acquisition_intensity(m, 0, MccState(0b10), z) == doctest::Approx(std::exp(-0.2)));
    CHECK(m.coefficient_names({0, 1}) == std::vector<std::string>{"intercept", "diet"});
}

TEST_CASE("parent groups commute") {
    FctbnModel m(named_conditions(4), behaviors({"x"}));
    m.set_baseline(0, vec({-2.0, 0.3}));
    m.set_edge(1, 0, vec({0.4}));
    m.set_edge(2, 0, vec({-0.25}));
    m.set_edge(3, 0, vec({0.9}));
    const RiskFactorVector z(vec({0.5}));
    const double expected = std::exp(-2.0 + 0.15 + 0.4 - 0.25 + 0.9);
    CHECK(acquisition_intensity(m, 0, MccState(0b1110), z) == doctest::Approx(expected).epsilon(1e-14));
    // a permuted condition order gives the same rate
    FctbnModel p(ConditionSet({"C0", "C3", "C1", "C2"}), behaviors({"x"}));
    p.set_baseline(0, vec({-2.0, 0.3}));
    p.set_edge(1, 0, vec({0.9}));
    p.set_edge(2, 0, vec({0.4}));
    p.set_edge(3, 0, vec({-0.25}));
    CHECK(acquisition_intensity(p, 0, MccState(0b1110), z) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("sojourn distribution") {
    CHECK(sojourn_cdf(0.7, 0.0) == 0.0);
    CHECK(sojourn_cdf(0.5, 2.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-15));
    CHECK(sojourn_cdf(0.5, 2.0) == doctest::Approx(0.63212).epsilon(1e-5));
    CHECK(std::abs(sojourn_cdf(1.0, 1e6) - 1.0) < 1e-12);
    CHECK(sojourn_pdf(2.0, 0.5) == doctest::Approx(2.0 * std::exp(-1.0)));
    CHECK_THROWS_AS(sojourn_cdf(1.0, -0.1), DomainError);
    CHECK_THROWS_AS(sojourn_pdf(1.0, -0.1), DomainError);
    CHECK_THROWS_AS(sojourn_cdf(0.0, 1.0), DomainError);
}

TEST_CASE("joint generator structure") {
    SUBCASE("single condition") {
        const auto m = constant_rate_model({0.3});
        const Eigen::MatrixXd q = joint_generator_dense(m, no_covariates());
        CHECK(q(0, 0) == doctest::Approx(-0.3));
        CHECK(q(0, 1) == doctest::Approx(0.3));
        CHECK(q(1, 0) == 0.0);
        CHECK(q(1, 1) == 0.0);
    }
    SUBCASE("two independent conditions match the hand-built matrix") {
        const double q1 = 0.4, q2 = 1.1;
        const auto m = constant_rate_model({q1, q2});
        Eigen::MatrixXd expected(4, 4);
        expected << -(q1 + q2), q1, q2, 0,  //
            0, -q2, 0, q2,                  //
            0, 0, -q1, q1,                  //
            0, 0, 0, 0;
        CHECK((joint_generator_dense(m, no_covariates()) - expected).cwiseAbs().maxCoeff() < 1e-15);

        // the sampler agrees: exit time from the empty state and the first winner
        std::mt19937_64 rng(11);
        const int runs = 100000;
        double exit_sum = 0.0;
        int first_is_c1 = 0;
        for (int r = 0; r < runs; ++r) {
            const auto path = sample_trajectory(m, MccState{}, no_covariates(), 1e9, rng);
            REQUIRE(path.size() == 2);
            exit_sum += path[0].time;
            first_is_c1 += path[0].state.bits() == 0b10 ? 1 : 0;
        }
        CHECK(exit_sum / runs == doctest::Approx(1.0 / (q1 + q2)).epsilon(0.01));
        CHECK(static_cast<double>(first_is_c1) / runs == doctest::Approx(q2 / (q1 + q2)).epsilon(0.01));
    }
    SUBCASE("rows sum to zero, only bit-adding transitions, diagonal is minus the exit rate") {
        FctbnModel m(named_conditions(4), behaviors({"x"}));
        for (std::size_t c = 0; c < 4; ++c) {
            m.set_baseline(c, vec({-1.0 - 0.2 * static_cast<double>(c), 0.3}));
            for (std::size_t p = 0; p < 4; ++p)
                if (p != c) m.set_edge(p, c, vec({0.1 * static_cast<double>(p + 1) - 0.15}));
        }
        const RiskFactorVector z(vec({0.7}));
        const Eigen::MatrixXd q = joint_generator_dense(m, z);
        for (Eigen::Index s = 0; s < q.rows(); ++s) {
            CHECK(std::abs(q.row(s).sum()) < 1e-14);
            CHECK(q(s, s) == doctest::Approx(-total_exit_rate(m, MccState(static_cast<StateMask>(s)), z)));
            for (Eigen::Index t = 0; t < q.cols(); ++t) {
                if (t == s) continue;
                CHECK(q(s, t) >= 0.0);
                const bool adds_one_bit = (t & s) == s && __builtin_popcountll(t ^ s) == 1;
                if (!adds_one_bit) CHECK(q(s, t) == 0.0);
            }
        }
    }
    SUBCASE("capacity guard") {
        const auto m = constant_rate_model(std::vector<double>(13, 0.1));
        CHECK_THROWS_AS(joint_generator(m, no_covariates()), CapacityError);
    }
}

TEST_CASE("forward trajectory") {
    SUBCASE("single condition matches the closed form") {
        const double q = 0.37;
        const auto m = constant_rate_model({q});
        const auto r = forward_trajectory(m, MccState{}, {{10.0, no_covariates()}});
        for (std::size_t i = 0; i < r.times.size(); ++i)
            CHECK(std::abs(r.marginals(static_cast<Eigen::Index>(i), 0) - (1.0 - std::exp(-q * r.times[i]))) < 1e-8);
        CHECK(r.times.size() == 101);
        CHECK(r.times.back() == doctest::Approx(10.0));
    }
    SUBCASE("all acquired stays at one") {
        const auto m = constant_rate_model({0.2, 0.3, 0.4});
        const auto r = forward_trajectory(m, MccState(0b111), {{5.0, no_covariates()}});
        CHECK((r.marginals.array() == 1.0).all());
    }
    SUBCASE("empty schedule is rejected") {
        const auto m = constant_rate_model({0.2});
        CHECK_THROWS_AS(forward_trajectory(m, MccState{}, {}), DomainError);
        CHECK_THROWS_AS(forward_trajectory(m, MccState{}, {{0.0, no_covariates()}}), DomainError);
    }
    SUBCASE("coupled model matches the matrix exponential, sums to one, and is monotone") {
        FctbnModel m(named_conditions(3), behaviors({"x"}));
        m.set_baseline(0, vec({-1.5, -0.4}));
        m.set_baseline(1, vec({-1.0, 0.2}));
        m.set_baseline(2, vec({-2.0, 0.0}));
        m.set_edge(1, 0, vec({0.8}));
        m.set_edge(0, 2, vec({1.1}));
        m.set_edge(2, 1, vec({-0.5}));
        const RiskFactorVector za(vec({1.0})), zb(vec({0.0}));
        const auto r = forward_trajectory(m, MccState{}, {{2.35, za}, {4.0, zb}});
        const Eigen::MatrixXd qa = joint_generator_dense(m, za), qb = joint_generator_dense(m, zb);
        Eigen::RowVectorXd p0 = Eigen::RowVectorXd::Zero(8);
        p0(0) = 1.0;
        for (double t : {0.5, 2.0, 2.3, 2.4, 5.0, 6.3}) {
            const Eigen::MatrixXd step = t <= 2.35 ? Eigen::MatrixXd((qa * t).exp())
                                                   : Eigen::MatrixXd((qa * 2.35).exp() * (qb * (t - 2.35)).exp());
            const Eigen::RowVectorXd expected = p0 * step;
            const Eigen::RowVectorXd got = r.joint.row(static_cast<Eigen::Index>(r.row_at(t)));
            CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-9);
        }
        // the final schedule boundary is a grid point
        CHECK(r.times.back() == doctest::Approx(6.35));
        for (Eigen::Index i = 0; i < r.joint.rows(); ++i) {
            CHECK(std::abs(r.joint.row(i).sum() - 1.0) < 1e-9);
            CHECK(r.joint.row(i).minCoeff() >= -1e-15);
            if (i > 0) CHECK((r.marginals.row(i).array() >= r.marginals.row(i - 1).array() - 1e-15).all());
        }
    }
    SUBCASE("schedules sharing a prefix agree on it exactly") {
        FctbnModel m(named_conditions(2), behaviors({"x"}));
        m.set_baseline(0, vec({-1.0, -1.0}));
        m.set_baseline(1, vec({-1.2, 0.5}));
        m.set_edge(1, 0, vec({0.6}));
        const RiskFactorVector a(vec({0.0})), b(vec({1.0}));
        const auto base = forward_trajectory(m, MccState{}, {{10.0, a}});
        const auto alt = forward_trajectory(m, MccState{}, {{2.0, a}, {1.0, b}, {7.0, a}});
        for (std::size_t i = 0; i < base.times.size(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            if (base.times[i] <= 2.0 + 1e-12) CHECK((base.joint.row(row) == alt.joint.row(row)));
            else CHECK(alt.marginals(row, 0) < base.marginals(row, 0));
        }
    }
    SUBCASE("yearly sampling") {
        const auto m = constant_rate_model({0.2});
        const auto y = forward_trajectory(m, MccState{}, {{5.0, no_covariates()}}).sampled(1.0);
        CHECK(y.times == std::vector<double>{0, 1, 2, 3, 4, 5});
    }
}

TEST_CASE("forward trajectory agrees with Monte Carlo on a coupled pair") {
    // OB -> DI edge
    FctbnModel m(ConditionSet({"DI", "OB"}), behaviors({"diet"}));
    m.set_baseline(0, vec({-2.0, -0.3}));
    m.set_baseline(1, vec({-1.2, -0.5}));
    m.set_edge(1, 0, vec({1.2}));
    const RiskFactorVector z(vec({0.0}));
    const auto f = forward_trajectory(m, MccState{}, {{5.0, z}});
    const int runs = 100000;
    std::mt19937_64 rng(2024);
    std::vector<std::array<int, 2>> hits(3, {0, 0});
    const double checkpoints[3] = {1.0, 2.0, 5.0};
    for (int r = 0; r < runs; ++r) {
        const auto path = sample_trajectory(m, MccState{}, z, 5.0, rng);
        for (int c = 0; c < 3; ++c) {
            MccState s;
            for (const auto& tr : path)
                if (tr.time <= checkpoints[c]) s = tr.state;
            for (std::size_t j = 0; j < 2; ++j) hits[c][j] += s.has(j) ? 1 : 0;
        }
    }
    for (int c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 2; ++j) {
            const double mc = static_cast<double>(hits[c][j]) / runs;
            const double exact = f.marginals(static_cast<Eigen::Index>(f.row_at(checkpoints[c])), static_cast<Eigen::Index>(j));
            CHECK(std::abs(mc - exact) < 0.01);
        }
}

TEST_CASE("sampler") {
    SUBCASE("nothing left to acquire") {
        const auto m = constant_rate_model({0.5, 0.5});
        CHECK(sample_trajectory(m, MccState(0b11), no_covariates(), 10.0, 1).empty());
    }
    SUBCASE("exponential mean sojourn") {
        const auto m = constant_rate_model({2.0});
        double sum = 0.0;
        const int runs = 100000;
        for (int s = 0; s < runs; ++s) sum += sample_trajectory(m, MccState{}, no_covariates(), 1e9, s).at(0).time;
        CHECK(std::abs(sum / runs - 0.5) < 0.01);
    }
    SUBCASE("competing risks") {
        const auto m = constant_rate_model({1.0, 3.0});
        int second = 0;
        const int runs = 100000;
        for (int s = 0; s < runs; ++s)
            second += sample_trajectory(m, MccState{}, no_covariates(), 1e9, s).at(0).state.bits() == 0b10 ? 1 : 0;
        CHECK(std::abs(static_cast<double>(second) / runs - 0.75) < 0.01);
    }
    SUBCASE("deterministic under a seed and monotone") {
        const auto m = constant_rate_model({0.3, 0.2, 0.5});
        const auto a = sample_trajectory(m, MccState{}, no_covariates(), 20.0, 77);
        const auto b = sample_trajectory(m, MccState{}, no_covariates(), 20.0, 77);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].time == b[i].time);
            CHECK(a[i].state == b[i].state);
            if (i > 0) {
                CHECK(a[i - 1].state.is_subset_of(a[i].state));
                CHECK(a[i - 1].time < a[i].time);
            }
        }
        CHECK_THROWS_AS(sample_trajectory(m, MccState{}, no_covariates(), 0.0, 1), DomainError);
    }
}
