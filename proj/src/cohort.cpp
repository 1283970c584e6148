#include "fctbn/cohort.hpp"

#include "fctbn/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace fctbn {

namespace {

// Covariate order: diet, exercise, tobacco, alcohol, age_group, gender, education, marital.
// diet = 1 and exercise = 1 mean the healthy behavior is followed.
const std::vector<std::vector<double>> kBaselines{
    {-3.80, -0.35, -0.30, 0.20, 0.10, 0.12, 0.10, -0.05, 0.00},   // DI
    {-3.20, -0.40, -0.35, 0.00, 0.15, 0.05, 0.10, -0.05, 0.05},   // OB
    {-3.30, -0.20, -0.40, 0.25, 0.20, 0.15, 0.10, -0.05, 0.00},   // HP
    {-3.20, -0.35, -0.30, 0.20, 0.10, 0.10, 0.05, -0.05, 0.00},   // HL
    {-3.95, -0.10, -0.20, 0.15, 0.15, 0.20, 0.00, -0.15, -0.05},  // CI
};

enum : std::size_t { DI, OB, HP, HL, CI };

struct EdgeSpec {
    std::size_t parent;
    std::size_t child;
    double weight;
};

FctbnModel with_edges(const std::vector<EdgeSpec>& edges) {
    FctbnModel model(ConditionSet(), CovariateDictionary::standard_roster());
    for (std::size_t c = 0; c < kBaselines.size(); ++c)
        model.set_baseline(c, Eigen::Map<const Eigen::VectorXd>(kBaselines[c].data(),
                                                                static_cast<Eigen::Index>(kBaselines[c].size())));
    for (const auto& e : edges) model.set_edge(e.parent, e.child, Eigen::VectorXd::Constant(1, e.weight));
    return model;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::vector<std::string> preset_names() { return {"chain5", "figure2a-like", "dense5", "independent5"}; }

FctbnModel preset_model(const std::string& name) {
    if (name == "independent5") return with_edges({});
    if (name == "chain5") return with_edges({{OB, HL, 0.7}, {HL, HP, 0.7}, {HP, DI, 0.7}, {DI, CI, 0.7}});
    if (name == "figure2a-like")
        return with_edges(
            {{OB, DI, 0.8}, {HL, DI, 0.6}, {OB, HP, 0.7}, {OB, HL, 0.6}, {HP, CI, 0.7}, {DI, CI, 0.6}});
    if (name == "dense5") {
        std::vector<EdgeSpec> all;
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t p = 0; p < 5; ++p)
                if (p != c) all.push_back({p, c, 0.35});
        return with_edges(all);
    }
    throw DomainError("unknown preset model: " + name);
}

std::vector<CovariateLaw> standard_covariate_laws(const CovariateDictionary& dict) {
    std::vector<CovariateLaw> laws;
    for (const auto& s : dict.specs()) {
        if (s.name == "age_group")
            laws.emplace_back(Categorical{{1, 1, 1, 1, 1}});
        else if (s.name == "education")
            laws.emplace_back(Categorical{{1, 1, 1}});
        else if (s.name == "marital")
            laws.emplace_back(Bernoulli{0.6});
        else
            laws.emplace_back(Bernoulli{0.5});
    }
    return laws;
}

void CohortSpec::validate() const {
    if (n_patients < 1) throw DomainError("cohort needs at least one patient");
    if (covariate_laws.size() != model.covariates().size())
        throw CovariateLayoutError("one covariate law per covariate is required");
    for (const auto& law : covariate_laws) {
        if (const auto* b = std::get_if<Bernoulli>(&law)) {
            if (!(b->p >= 0.0 && b->p <= 1.0)) throw DomainError("Bernoulli probability outside [0,1]");
        } else {
            const auto& w = std::get<Categorical>(law).weights;
            double total = 0.0;
            for (double x : w) {
                if (!(x >= 0.0) || !std::isfinite(x)) throw DomainError("categorical weights must be nonnegative");
                total += x;
            }
            if (w.empty() || !(total > 0.0)) throw DomainError("categorical weights must have positive mass");
        }
    }
    if (visit_times.size() < 2) throw DomainError("at least two visits are required");
    for (std::size_t i = 1; i < visit_times.size(); ++i)
        if (!(visit_times[i] > visit_times[i - 1])) throw DomainError("visit times must be strictly increasing");
    if (!initial_prevalence.empty()) {
        if (initial_prevalence.size() != model.num_conditions())
            throw DomainError("initial prevalence needs one entry per condition");
        for (double p : initial_prevalence)
            if (!(p >= 0.0 && p <= 1.0)) throw DomainError("initial prevalence outside [0,1]");
    }
}

std::uint64_t patient_seed(std::uint64_t seed, std::size_t patient) {
    return splitmix64(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(patient) + 1));
}

TrajectoryDataset generate(const CohortSpec& spec) {
    spec.validate();
    const auto& model = spec.model;
    const auto& dict = model.covariates();
    const MccState full(model.conditions().full_mask());
    TrajectoryDataset out(model.conditions(), dict);

    for (std::size_t i = 0; i < spec.n_patients; ++i) {
        std::mt19937_64 rng(patient_seed(spec.seed, i));
        char id[32];
        std::snprintf(id, sizeof id, "p%06zu", i + 1);

        Eigen::VectorXd z(static_cast<Eigen::Index>(dict.size()));
        for (std::size_t c = 0; c < dict.size(); ++c) {
            const auto& law = spec.covariate_laws[c];
            if (const auto* b = std::get_if<Bernoulli>(&law)) {
                z(static_cast<Eigen::Index>(c)) = std::bernoulli_distribution(b->p)(rng) ? 1.0 : 0.0;
            } else {
                const auto& w = std::get<Categorical>(law).weights;
                z(static_cast<Eigen::Index>(c)) =
                    static_cast<double>(std::discrete_distribution<int>(w.begin(), w.end())(rng));
            }
        }
        MccState state;
        for (std::size_t j = 0; j < spec.initial_prevalence.size(); ++j)
            if (std::bernoulli_distribution(spec.initial_prevalence[j])(rng)) state = state.with(j);

        const double first = spec.visit_times.front();
        const double span = spec.visit_times.back() - first;
        const auto path = sample_trajectory(model, state, RiskFactorVector(z), span, rng);

        double t = first;
        std::size_t next_event = 0;
        for (std::size_t v = 1; v < spec.visit_times.size() && state != full; ++v) {
            const double visit = spec.visit_times[v];
            while (next_event < path.size() && first + path[next_event].time < visit) {
                const double te = first + path[next_event].time;
                const StateMask gained = path[next_event].state.bits() & ~state.bits();
                TransitionRecord r{id, t, te, state, 0, z, static_cast<std::size_t>(__builtin_ctz(gained))};
                out.add(std::move(r));
                state = path[next_event].state;
                t = te;
                ++next_event;
                if (state == full) break;
            }
            if (state == full) break;
            out.add(TransitionRecord{id, t, visit, state, 0, z, std::nullopt});
            t = visit;
        }
    }
    return out;
}

}  // namespace fctbn

namespace fctbn {

std::vector<CaseStudyPatient> case_study_patients(const CovariateDictionary& dict) {
    auto make = [&](const std::string& id, double age_group) {
        auto z = RiskFactorVector::zeros(dict)
                     .with(dict.index_of("age_group"), age_group)
                     .with(dict.index_of("education"), 1.0)
                     .with(dict.index_of("marital"), 1.0);
        return CaseStudyPatient{id, MccState{}, z};
    };
    return {make("case1", 0.0), make("case2", 3.0)};
}

}  // namespace fctbn
