#include "fctbn/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace fctbn {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& field, const std::string& what, std::size_t line = 0) {
    std::string msg = line ? "line " + std::to_string(line) + ": " : "";
    throw ValidationError(msg + field + ": " + what, field, line);
}

const json& require(const json& j, const std::string& key, const std::string& prefix, std::size_t line = 0) {
    if (!j.is_object()) schema_error(prefix.empty() ? "<root>" : prefix, "expected an object", line);
    auto it = j.find(key);
    if (it == j.end()) schema_error(prefix.empty() ? key : prefix + "." + key, "missing", line);
    return *it;
}

double require_number(const json& j, const std::string& key, const std::string& prefix, std::size_t line = 0) {
    const auto& v = require(j, key, prefix, line);
    if (!v.is_number()) schema_error(prefix.empty() ? key : prefix + "." + key, "expected a number", line);
    return v.get<double>();
}

void check_version(const json& j, const std::string& expected_format, std::size_t line = 0) {
    const auto& format = require(j, "format", "", line);
    if (!format.is_string() || format.get<std::string>() != expected_format)
        schema_error("format", "expected \"" + expected_format + "\"", line);
    const auto& version = require(j, "format_version", "", line);
    if (!version.is_number_integer()) schema_error("format_version", "expected an integer", line);
    const int v = version.get<int>();
    if (v != kFormatVersion)
        throw VersionError(expected_format + " format_version " + std::to_string(v) + " is not supported (expected " +
                           std::to_string(kFormatVersion) + "); upgrade the file with a matching release first");
}

void check_range(const std::optional<double>& v, const char* field, double lo, double hi) {
    if (v && !(*v >= lo && *v <= hi))
        throw ValidationError(std::string(field) + " = " + std::to_string(*v) + " outside physiological range [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + "]",
                              field);
}

/// Tri-state OR: positive if any known criterion holds, unknown if none holds and some are unknown.
struct Criteria {
    bool positive = false;
    bool missing = false;
    void add(std::optional<bool> c) {
        if (!c) missing = true;
        else if (*c) positive = true;
    }
};

template <typename T, typename F>
std::optional<bool> test(const std::optional<T>& v, F f) {
    if (!v) return std::nullopt;
    return f(*v);
}

}  // namespace

// ---------------------------------------------------------------------------------------------

void MeasurementPanel::validate() const {
    check_range(fasting_glucose, "fasting_glucose", 20, 1000);
    check_range(hba1c, "hba1c", 2, 20);
    check_range(bmi, "bmi", 10, 100);
    check_range(systolic_bp, "systolic_bp", 50, 300);
    check_range(diastolic_bp, "diastolic_bp", 20, 200);
    check_range(total_cholesterol, "total_cholesterol", 50, 1000);
    check_range(triglycerides, "triglycerides", 10, 5000);
    check_range(hdlc, "hdlc", 5, 200);
    check_range(ldlc, "ldlc", 5, 600);
    if (mmse && (*mmse < 0 || *mmse > 30))
        throw ValidationError("mmse = " + std::to_string(*mmse) + " outside [0, 30]", "mmse");
}

Diagnosis diagnose(const MeasurementPanel& panel, const ConditionSet& conditions) {
    panel.validate();
    const auto& p = panel;
    std::optional<bool> low_hdl;
    if (p.hdlc && p.sex) low_hdl = *p.hdlc < (*p.sex == Sex::Male ? 40.0 : 50.0);

    Criteria di, ob, hp, hl, ci;
    di.add(test(p.fasting_glucose, [](double v) { return v >= 126.0; }));
    di.add(test(p.hba1c, [](double v) { return v >= 6.5; }));
    di.add(p.diabetes_medication);
    ob.add(test(p.bmi, [](double v) { return v >= 30.0; }));
    hp.add(test(p.systolic_bp, [](double v) { return v >= 130.0; }));
    hp.add(test(p.diastolic_bp, [](double v) { return v >= 80.0; }));
    hp.add(p.antihypertensive_medication);
    hl.add(test(p.total_cholesterol, [](double v) { return v > 200.0; }));
    hl.add(test(p.triglycerides, [](double v) { return v >= 150.0; }));
    hl.add(low_hdl);
    hl.add(test(p.ldlc, [](double v) { return v >= 130.0; }));
    hl.add(p.lipid_medication);
    ci.add(test(p.mmse, [](int v) { return v < 23; }));

    Diagnosis d;
    const std::pair<const char*, const Criteria*> coded[] = {
        {"DI", &di}, {"OB", &ob}, {"HP", &hp}, {"HL", &hl}, {"CI", &ci}};
    for (const auto& [id, c] : coded) {
        if (!conditions.contains(id)) continue;
        const std::size_t j = conditions.index_of(id);
        if (c->positive)
            d.state = d.state.with(j);
        else if (c->missing)
            d.unknown |= StateMask{1} << j;
    }
    return d;
}

MeasurementPanel panel_from_json(const json& j) {
    if (!j.is_object()) schema_error("panel", "expected an object");
    MeasurementPanel p;
    auto num = [&](const char* key, std::optional<double>& out) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) return;
        if (!it->is_number()) schema_error(key, "expected a number");
        out = it->get<double>();
    };
    auto flag = [&](const char* key, std::optional<bool>& out) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) return;
        if (!it->is_boolean()) schema_error(key, "expected a boolean");
        out = it->get<bool>();
    };
    num("fasting_glucose", p.fasting_glucose);
    num("hba1c", p.hba1c);
    num("bmi", p.bmi);
    num("systolic_bp", p.systolic_bp);
    num("diastolic_bp", p.diastolic_bp);
    num("total_cholesterol", p.total_cholesterol);
    num("triglycerides", p.triglycerides);
    num("hdlc", p.hdlc);
    num("ldlc", p.ldlc);
    if (auto it = j.find("mmse"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer()) schema_error("mmse", "expected an integer");
        p.mmse = it->get<int>();
    }
    if (auto it = j.find("sex"); it != j.end() && !it->is_null()) {
        const auto s = it->is_string() ? it->get<std::string>() : "";
        if (s == "male") p.sex = Sex::Male;
        else if (s == "female") p.sex = Sex::Female;
        else schema_error("sex", "expected \"male\" or \"female\"");
    }
    flag("diabetes_medication", p.diabetes_medication);
    flag("antihypertensive_medication", p.antihypertensive_medication);
    flag("lipid_medication", p.lipid_medication);
    return p;
}

// ---------------------------------------------------------------------------------------------

json conditions_to_json(const ConditionSet& set) { return set.names(); }

json covariates_to_json(const CovariateDictionary& dict) {
    json out = json::array();
    for (const auto& s : dict.specs())
        out.push_back({{"name", s.name}, {"kind", s.kind == CovariateKind::Modifiable ? "modifiable" : "fixed"}});
    return out;
}

ConditionSet conditions_from_json(const json& j, const std::string& field) {
    if (!j.is_array()) schema_error(field, "expected an array of condition ids");
    std::vector<std::string> ids;
    for (const auto& v : j) {
        if (!v.is_string()) schema_error(field, "condition ids must be strings");
        ids.push_back(v.get<std::string>());
    }
    try {
        return ConditionSet(std::move(ids));
    } catch (const DomainError& e) {
        schema_error(field, e.what());
    }
}

CovariateDictionary covariates_from_json(const json& j, const std::string& field) {
    if (!j.is_array()) schema_error(field, "expected an array");
    std::vector<CovariateSpec> specs;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string where = field + "[" + std::to_string(i) + "]";
        const auto& name = require(j[i], "name", where);
        const auto& kind = require(j[i], "kind", where);
        if (!name.is_string()) schema_error(where + ".name", "expected a string");
        const auto k = kind.is_string() ? kind.get<std::string>() : "";
        if (k != "modifiable" && k != "fixed") schema_error(where + ".kind", "expected \"modifiable\" or \"fixed\"");
        specs.push_back({name.get<std::string>(), k == "modifiable" ? CovariateKind::Modifiable : CovariateKind::Fixed});
    }
    try {
        return CovariateDictionary(std::move(specs));
    } catch (const DomainError& e) {
        schema_error(field, e.what());
    }
}

json model_to_json(const FctbnModel& model) {
    json groups = json::array();
    for (const auto& g : model.groups()) {
        const auto names = model.coefficient_names(g.owner);
        json coeffs = json::object();
        for (std::size_t i = 0; i < names.size(); ++i) coeffs[names[i]] = g.coefficients(static_cast<Eigen::Index>(i));
        groups.push_back({{"child", model.conditions().name(g.owner.child)},
                          {"parent", g.owner.is_baseline() ? "baseline" : model.conditions().name(*g.owner.parent)},
                          {"coefficients", coeffs}});
    }
    json edges = json::array();
    for (auto [p, c] : model.edges())
        edges.push_back({{"parent", model.conditions().name(p)}, {"child", model.conditions().name(c)}});
    return {{"format", "fctbn-model"},
            {"format_version", kFormatVersion},
            {"conditions", conditions_to_json(model.conditions())},
            {"covariates", covariates_to_json(model.covariates())},
            {"edge_features", model.edge_features() == EdgeFeatures::MainEffect ? "main" : "interaction"},
            {"prune_threshold", model.prune_threshold()},
            {"groups", groups},
            {"edges", edges}};
}

FctbnModel model_from_json(const json& j) {
    check_version(j, "fctbn-model");
    auto conditions = conditions_from_json(require(j, "conditions", ""));
    auto covariates = covariates_from_json(require(j, "covariates", ""));
    const auto& ef = require(j, "edge_features", "");
    const auto efs = ef.is_string() ? ef.get<std::string>() : "";
    if (efs != "main" && efs != "interaction") schema_error("edge_features", "expected \"main\" or \"interaction\"");
    const double prune = require_number(j, "prune_threshold", "");
    if (!(prune >= 0.0)) schema_error("prune_threshold", "must be nonnegative");

    FctbnModel model(conditions, covariates, efs == "main" ? EdgeFeatures::MainEffect : EdgeFeatures::Interaction,
                     prune);
    const auto& groups = require(j, "groups", "");
    if (!groups.is_array()) schema_error("groups", "expected an array");
    std::vector<char> seen_baseline(conditions.size(), 0);
    std::vector<char> seen_edge(conditions.size() * conditions.size(), 0);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const std::string where = "groups[" + std::to_string(i) + "]";
        const auto& g = groups[i];
        const auto& child = require(g, "child", where);
        const auto& parent = require(g, "parent", where);
        if (!child.is_string() || !conditions.contains(child.get<std::string>()))
            schema_error(where + ".child", "unknown condition");
        if (!parent.is_string()) schema_error(where + ".parent", "expected a string");
        GroupKey key{conditions.index_of(child.get<std::string>()), std::nullopt};
        if (parent.get<std::string>() != "baseline") {
            if (!conditions.contains(parent.get<std::string>())) schema_error(where + ".parent", "unknown condition");
            key.parent = conditions.index_of(parent.get<std::string>());
            if (*key.parent == key.child) schema_error(where + ".parent", "self edges are not allowed");
        }
        auto& seen = key.is_baseline() ? seen_baseline[key.child]
                                       : seen_edge[*key.parent * conditions.size() + key.child];
        if (seen) schema_error(where, "duplicate group");
        seen = 1;

        const auto& coeffs = require(g, "coefficients", where);
        if (!coeffs.is_object()) schema_error(where + ".coefficients", "expected an object");
        const auto names = model.coefficient_names(key);
        Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
        for (std::size_t c = 0; c < names.size(); ++c) v(static_cast<Eigen::Index>(c)) =
            require_number(coeffs, names[c], where + ".coefficients");
        if (coeffs.size() != names.size()) schema_error(where + ".coefficients", "unexpected coefficient names");
        if (!v.allFinite()) schema_error(where + ".coefficients", "coefficients must be finite");
        model.set_group(key, std::move(v));
    }
    for (std::size_t c = 0; c < conditions.size(); ++c)
        if (!seen_baseline[c])
            schema_error("groups", "missing baseline group for condition " + conditions.name(c));
    return model;
}

void write_model(const FctbnModel& model, const std::filesystem::path& path) {
    atomic_write(path, model_to_json(model).dump(2) + "\n");
}

FctbnModel read_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file " + path.string(), "path");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("model file is not valid JSON: ") + e.what(), "<root>");
    }
    return model_from_json(j);
}

// ---------------------------------------------------------------------------------------------

MccState state_from_json(const ConditionSet& conditions, const json& j, const std::string& field) {
    if (j.is_number_unsigned() || j.is_number_integer()) {
        const auto bits = j.get<long long>();
        if (bits < 0 || (static_cast<unsigned long long>(bits) & ~static_cast<unsigned long long>(conditions.full_mask())))
            schema_error(field, "bitmask references unknown conditions");
        return MccState(static_cast<StateMask>(bits));
    }
    if (!j.is_array()) schema_error(field, "expected a bitmask or a list of condition ids");
    MccState s;
    for (const auto& v : j) {
        if (!v.is_string() || !conditions.contains(v.get<std::string>())) schema_error(field, "unknown condition");
        s = s.with(conditions.index_of(v.get<std::string>()));
    }
    return s;
}

RiskFactorVector covariates_from_object(const CovariateDictionary& dict, const json& j, const std::string& field,
                                        std::size_t line) {
    if (!j.is_object()) schema_error(field, "expected an object", line);
    Eigen::VectorXd z(static_cast<Eigen::Index>(dict.size()));
    for (std::size_t i = 0; i < dict.size(); ++i)
        z(static_cast<Eigen::Index>(i)) = require_number(j, dict[i].name, field, line);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!dict.contains(it.key())) schema_error(field + "." + it.key(), "unknown covariate", line);
    RiskFactorVector out(std::move(z));
    try {
        out.validate(dict);
    } catch (const Error& e) {
        schema_error(field, e.what(), line);
    }
    return out;
}

json dataset_header(const TrajectoryDataset& dataset) {
    return {{"format", "fctbn-dataset"},
            {"format_version", kFormatVersion},
            {"conditions", conditions_to_json(dataset.conditions())},
            {"covariates", covariates_to_json(dataset.covariates())}};
}

json record_to_json(const TrajectoryDataset& dataset, const TransitionRecord& r) {
    json cov = json::object();
    for (std::size_t i = 0; i < dataset.covariates().size(); ++i)
        cov[dataset.covariates()[i].name] = r.z(static_cast<Eigen::Index>(i));
    json out = {{"patient_id", r.patient_id},
                {"t_start", r.t_start},
                {"t_end", r.t_end},
                {"state", r.state.bits()},
                {"covariates", cov},
                {"outcome", r.acquired ? dataset.conditions().name(*r.acquired) : "censored"}};
    if (r.unknown) out["unknown"] = r.unknown;
    return out;
}

TransitionRecord record_from_json(const ConditionSet& conditions, const CovariateDictionary& covariates,
                                  const json& j, std::size_t line) {
    TransitionRecord r;
    const auto& pid = require(j, "patient_id", "", line);
    if (!pid.is_string() || pid.get<std::string>().empty()) schema_error("patient_id", "expected a non-empty string", line);
    r.patient_id = pid.get<std::string>();
    r.t_start = require_number(j, "t_start", "", line);
    r.t_end = require_number(j, "t_end", "", line);
    if (!std::isfinite(r.t_start) || !std::isfinite(r.t_end) || !(r.t_end > r.t_start))
        schema_error("t_end", "t_end must exceed t_start", line);
    try {
        r.state = state_from_json(conditions, require(j, "state", "", line), "state");
    } catch (const ValidationError& e) {
        schema_error(e.field(), e.what(), line);
    }
    if (auto it = j.find("unknown"); it != j.end()) {
        if (!it->is_number_unsigned() || (it->get<unsigned long long>() & ~static_cast<unsigned long long>(conditions.full_mask())))
            schema_error("unknown", "expected a bitmask over the condition set", line);
        r.unknown = it->get<StateMask>();
    }
    r.z = covariates_from_object(covariates, require(j, "covariates", "", line), "covariates", line).values();
    const auto& outcome = require(j, "outcome", "", line);
    if (!outcome.is_string()) schema_error("outcome", "expected \"censored\" or a condition id", line);
    const auto o = outcome.get<std::string>();
    if (o != "censored") {
        if (!conditions.contains(o)) schema_error("outcome", "unknown condition " + o, line);
        r.acquired = conditions.index_of(o);
        if (r.state.has(*r.acquired)) schema_error("outcome", "condition " + o + " already acquired", line);
    }
    return r;
}

void write_dataset(const TrajectoryDataset& dataset, std::ostream& out) {
    out << dataset_header(dataset).dump() << '\n';
    for (const auto& r : dataset.records()) out << record_to_json(dataset, r).dump() << '\n';
}

TrajectoryDataset read_dataset(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    std::optional<TrajectoryDataset> dataset;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            schema_error("<line>", "not valid JSON", number);
        }
        if (!dataset) {
            check_version(j, "fctbn-dataset", number);
            dataset.emplace(conditions_from_json(require(j, "conditions", "", number)),
                            covariates_from_json(require(j, "covariates", "", number)));
            continue;
        }
        dataset->add(record_from_json(dataset->conditions(), dataset->covariates(), j, number));
    }
    if (!dataset) schema_error("header", "dataset has no header line", 1);
    try {
        dataset->validate();
    } catch (const ValidationError& e) {
        const auto idx = std::stoul(e.field().substr(8));  // records[<i>]...
        throw ValidationError("line " + std::to_string(idx + 2) + ": " + e.what(), e.field(), idx + 2);
    }
    return *dataset;
}

void write_dataset(const TrajectoryDataset& dataset, const std::filesystem::path& path) {
    std::ostringstream out;
    write_dataset(dataset, out);
    atomic_write(path, out.str());
}

TrajectoryDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset file " + path.string(), "path");
    return read_dataset(in);
}

json dataset_to_json(const TrajectoryDataset& dataset) {
    json records = json::array();
    for (const auto& r : dataset.records()) records.push_back(record_to_json(dataset, r));
    return {{"header", dataset_header(dataset)}, {"records", records}};
}

TrajectoryDataset dataset_from_json(const json& j) {
    const auto& header = require(j, "header", "");
    check_version(header, "fctbn-dataset");
    TrajectoryDataset dataset(conditions_from_json(require(header, "conditions", "header"), "header.conditions"),
                              covariates_from_json(require(header, "covariates", "header"), "header.covariates"));
    const auto& records = require(j, "records", "");
    if (!records.is_array()) schema_error("records", "expected an array");
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            dataset.add(record_from_json(dataset.conditions(), dataset.covariates(), records[i]));
        } catch (const ValidationError& e) {
            const std::string field = "records[" + std::to_string(i) + "]." + e.field();
            throw ValidationError(field + ": " + e.what(), field);
        }
    }
    dataset.validate();
    return dataset;
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string(), "path");
        out << contents;
        out.flush();
        if (!out) throw ValidationError("failed writing " + tmp.string(), "path");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fctbn
