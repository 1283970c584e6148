#include "fctbn/service.hpp"

#include "fctbn/cohort.hpp"
#include "fctbn/io.hpp"
#include "fctbn/learning.hpp"
#include "fctbn/planner.hpp"
#include "fctbn/report.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fctbn {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::string out;
    out.reserve(2 * len);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// ModelStore

namespace {

bool valid_id(const std::string& id) {
    return id.size() == 64 && std::all_of(id.begin(), id.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

json meta_to_json(const ModelMeta& m) {
    return {{"version", m.version}, {"parent", m.parent ? json(*m.parent) : json(nullptr)}, {"lineage", m.lineage}};
}

ModelMeta meta_from_json(const json& j) {
    ModelMeta m;
    m.version = j.at("version").get<int>();
    if (!j.at("parent").is_null()) m.parent = j.at("parent").get<std::string>();
    m.lineage = j.at("lineage").get<std::string>();
    return m;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return json::parse(in);
}

}  // namespace

ModelStore::ModelStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

std::string ModelStore::content_id(const FctbnModel& model) { return sha256_hex(model_to_json(model).dump()); }

StoredModel ModelStore::put(const FctbnModel& model, ModelMeta meta) {
    const std::string id = content_id(model);
    if (auto existing = get(id)) return *existing;
    std::lock_guard lock(mutex_);
    if (meta.lineage.empty()) meta.lineage = id;
    atomic_write(dir_ / (id + ".json"), model_to_json(model).dump(2) + "\n");
    atomic_write(dir_ / (id + ".meta.json"), meta_to_json(meta).dump(2) + "\n");
    StoredModel stored{id, meta, std::make_shared<const FctbnModel>(model)};
    cache_[id] = stored;
    return stored;
}

std::optional<StoredModel> ModelStore::get(const std::string& id) const {
    if (!valid_id(id)) return std::nullopt;
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    const fs::path model_path = dir_ / (id + ".json");
    const fs::path meta_path = dir_ / (id + ".meta.json");
    if (!fs::exists(model_path) || !fs::exists(meta_path)) return std::nullopt;
    StoredModel stored{id, meta_from_json(read_json_file(meta_path)),
                       std::make_shared<const FctbnModel>(model_from_json(read_json_file(model_path)))};
    cache_[id] = stored;
    return stored;
}

std::vector<StoredModel> ModelStore::list() const {
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = ".meta.json";
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    std::vector<StoredModel> out;
    for (const auto& id : ids)
        if (auto m = get(id)) out.push_back(*m);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Patients

json PatientRecord::to_json() const {
    json hist = json::array();
    for (const auto& [t, s] : history) hist.push_back({{"time", t}, {"state", s}});
    return {{"patient_id", patient_id}, {"state", state}, {"covariates", covariates}, {"history", hist}};
}

// ---------------------------------------------------------------------------------------------
// Request handling

namespace {

struct HttpError : Error {
    HttpError(int status, std::string what, json extra = json::object())
        : Error(std::move(what)), status(status), extra(std::move(extra)) {}
    int status;
    json extra;
};

HttpResponse reply(int status, const json& body) { return {status, body.dump() + "\n"}; }

HttpResponse error_reply(int status, const std::string& kind, const std::string& message, json extra = json::object()) {
    extra["error"] = message;
    extra["kind"] = kind;
    return reply(status, extra);
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/'))
        if (!part.empty()) parts.push_back(part);
    return parts;
}

const json& field(const json& j, const std::string& key) {
    auto it = j.find(key);
    if (it == j.end()) throw ValidationError(key + ": required", key);
    return *it;
}

json edge_list(const FctbnModel& model) {
    json edges = json::array();
    for (auto [p, c] : model.edges())
        edges.push_back({{"parent", model.conditions().name(p)}, {"child", model.conditions().name(c)}});
    return edges;
}

/// Applies {name: value} overrides to `base`.
RiskFactorVector override_covariates(const CovariateDictionary& dict, RiskFactorVector base, const json& j,
                                     const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object", where);
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string f = where + "." + it.key();
        if (!dict.contains(it.key())) throw ValidationError(f + ": unknown covariate", f);
        if (!it->is_number()) throw ValidationError(f + ": expected a number", f);
        base = base.with(dict.index_of(it.key()), it->get<double>());
    }
    try {
        base.validate(dict);
    } catch (const DomainError& e) {
        throw ValidationError(where + ": " + e.what(), where);
    }
    return base;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)), store_(config_.model_dir) {
    if (!config_.seed_patients) return;
    const ConditionSet conditions;
    const auto dict = CovariateDictionary::standard_roster();
    for (const auto& c : case_study_patients(dict)) {
        PatientRecord rec;
        rec.patient_id = c.id;
        rec.state = c.state.names(conditions);
        rec.covariates = json::object();
        for (std::size_t i = 0; i < dict.size(); ++i) rec.covariates[dict[i].name] = c.covariates[i];
        rec.history.push_back({0.0, rec.state});
        patients_[rec.patient_id] = rec;
    }
}

std::mutex& Service::lineage_lock(const std::string& lineage) {
    std::lock_guard lock(locks_mutex_);
    auto& slot = lineage_locks_[lineage];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
        const auto parts = split_path(path);
        json req;
        if (method == "POST") {
            try {
                req = body.empty() ? json::object() : json::parse(body);
            } catch (const json::parse_error& e) {
                throw ValidationError(std::string("request body is not valid JSON: ") + e.what(), "");
            }
            if (!req.is_object()) throw ValidationError("request body must be a JSON object", "");
        }

        if (!parts.empty() && parts[0] == "models") {
            if (parts.size() == 1) {
                if (method == "GET") {
                    json out = json::array();
                    for (const auto& m : store_.list())
                        out.push_back({{"id", m.id}, {"version", m.meta.version},
                                       {"parent", m.meta.parent ? json(*m.meta.parent) : json(nullptr)},
                                       {"lineage", m.meta.lineage}});
                    return reply(200, {{"models", out}});
                }
                if (method == "POST") return reply(201, fit_model(req));
            } else {
                auto stored = store_.get(parts[1]);
                if (!stored) return error_reply(404, "not_found", "unknown model " + parts[1]);
                if (parts.size() == 2 && method == "GET") return reply(200, describe_model(*stored));
                if (parts.size() == 3 && method == "POST") {
                    if (parts[2] == "predict") return reply(200, predict(*stored, req));
                    if (parts[2] == "plan") return reply(200, plan(*stored, req));
                    if (parts[2] == "update") return reply(201, update(*stored, req));
                }
            }
        } else if (!parts.empty() && parts[0] == "patients") {
            if (parts.size() == 1 && method == "GET") return reply(200, list_patients());
            if (parts.size() == 1 && method == "POST") return reply(201, add_patient(req));
            if (parts.size() == 2 && method == "GET") {
                auto p = find_patient(parts[1]);
                if (!p) return error_reply(404, "not_found", "unknown patient " + parts[1]);
                return reply(200, p->to_json());
            }
        }
        return error_reply(404, "not_found", "no route for " + method + " " + path);
    } catch (const HttpError& e) {
        json extra = e.extra;
        return error_reply(e.status, e.status == 404 ? "not_found" : "conflict", e.what(), extra);
    } catch (const InfeasibleBoundsError& e) {
        json conflicts = json::array();
        for (const auto& c : e.conflicts())
            conflicts.push_back(
                {{"covariate", c.covariate}, {"lower", c.lower}, {"upper", c.upper}, {"reason", c.reason}});
        return error_reply(409, "infeasible_bounds", e.what(), {{"conflicts", conflicts}});
    } catch (const ValidationError& e) {
        return error_reply(422, "validation", e.what(), {{"field", e.field()}});
    } catch (const NumericOverflowError& e) {
        return error_reply(422, "numeric", e.what());
    } catch (const StepSizeError& e) {
        return error_reply(422, "numeric", e.what());
    } catch (const StructuralError& e) {
        return error_reply(422, "structural", e.what(), {{"condition", e.condition()}});
    } catch (const VersionError& e) {
        return error_reply(422, "version", e.what());
    } catch (const Error& e) {
        // remaining library errors are precondition violations on request content
        return error_reply(422, "validation", e.what());
    } catch (const json::exception& e) {
        return error_reply(422, "validation", e.what());
    } catch (const std::exception& e) {
        return error_reply(500, "internal", e.what());
    }
}

namespace {

TrajectoryDataset dataset_from_request(const json& req, const fs::path& root, const std::string& inline_key,
                                       const std::string& path_key) {
    if (auto it = req.find(inline_key); it != req.end()) {
        try {
            return dataset_from_json(*it);
        } catch (const ValidationError& e) {
            const std::string f = e.field().empty() ? inline_key : inline_key + "." + e.field();
            throw ValidationError(e.what(), f);
        }
    }
    if (auto it = req.find(path_key); it != req.end()) {
        if (!it->is_string()) throw ValidationError(path_key + ": expected a string", path_key);
        fs::path p = it->get<std::string>();
        if (p.is_relative()) p = root / p;
        if (!fs::exists(p)) throw ValidationError(path_key + ": no such file " + p.string(), path_key);
        return read_dataset(p);
    }
    throw ValidationError("one of " + inline_key + " or " + path_key + " is required", inline_key);
}

}  // namespace

json Service::fit_model(const json& req) {
    const auto dataset = dataset_from_request(req, config_.data_root, "dataset", "dataset_path");
    json reg = req.value("regularization", json::object());
    if (!reg.is_object()) throw ValidationError("regularization: expected an object", "regularization");

    FitOptions options;
    if (auto it = reg.find("edge_features"); it != reg.end()) {
        if (*it == "interaction") options.edge_features = EdgeFeatures::Interaction;
        else if (*it != "main")
            throw ValidationError("regularization.edge_features: expected \"main\" or \"interaction\"",
                                  "regularization.edge_features");
    }
    const double prune = reg.value("prune_epsilon", kDefaultPruneThreshold);
    if (!(prune >= 0.0))
        throw ValidationError("regularization.prune_epsilon must be nonnegative", "regularization.prune_epsilon");

    std::lock_guard lock(fit_mutex_);
    json out;
    FctbnModel fitted;
    if (auto grid = reg.find("lambda_grid"); grid != reg.end()) {
        if (!grid->is_array() || grid->empty())
            throw ValidationError("regularization.lambda_grid: expected a nonempty array", "regularization.lambda_grid");
        std::vector<double> lambdas;
        for (const auto& v : *grid) {
            if (!v.is_number()) throw ValidationError("regularization.lambda_grid: expected numbers", "regularization.lambda_grid");
            lambdas.push_back(v.get<double>());
        }
        auto path = structure_path(dataset, lambdas, options, prune);
        fitted = path.best_entry().refit;
        out["path"] = path_to_json(path, dataset.conditions());
        out["report"] = fit_report_to_json(path.best_entry().report);
    } else {
        const double lambda = reg.value("lambda", 0.0);
        if (!(lambda >= 0.0)) throw ValidationError("regularization.lambda must be nonnegative", "regularization.lambda");
        RegularizationSpec spec;
        if (reg.value("adaptive", true) && lambda > 0.0) {
            spec = adaptive_regularization(dataset, lambda, options);
        } else {
            spec.lambda = lambda;
            spec.num_conditions = dataset.conditions().size();
        }
        spec.prune_epsilon = prune;
        auto result = fit_mle(dataset, spec, std::nullopt, options);
        fitted = result.model;
        out["report"] = fit_report_to_json(result.report);
    }
    const auto stored = store_.put(fitted, ModelMeta{});
    out["id"] = stored.id;
    out["version"] = stored.meta.version;
    out["edges"] = edge_list(*stored.model);
    return out;
}

json Service::describe_model(const StoredModel& m) const {
    return {{"id", m.id},
            {"version", m.meta.version},
            {"parent", m.meta.parent ? json(*m.meta.parent) : json(nullptr)},
            {"lineage", m.meta.lineage},
            {"model", model_to_json(*m.model)},
            {"edges", edge_list(*m.model)}};
}

namespace {

struct PatientInput {
    MccState state;
    RiskFactorVector covariates;
    std::vector<std::pair<double, MccState>> observations;
};

}  // namespace

// Resolves "patient_id" from the registry or explicit "state" + "covariates"; explicit fields
// override the registered ones.
static PatientInput patient_input(const FctbnModel& model, const json& req,
                                  const std::optional<PatientRecord>& registered) {
    const auto& conditions = model.conditions();
    const auto& dict = model.covariates();
    PatientInput in;
    json state = nullptr;
    json covs = nullptr;
    if (registered) {
        state = registered->state;
        covs = registered->covariates;
        for (const auto& [t, s] : registered->history) in.observations.push_back({t, state_from_json(conditions, s, "history")});
    }
    if (auto it = req.find("state"); it != req.end()) state = *it;
    if (state.is_null()) throw ValidationError("state: required", "state");
    in.state = state_from_json(conditions, state, "state");
    if (covs.is_null()) covs = field(req, "covariates");
    else if (auto it = req.find("covariates"); it != req.end()) covs.update(*it);
    in.covariates = covariates_from_object(dict, covs, "covariates");
    return in;
}

json Service::predict(const StoredModel& m, const json& req) const {
    const auto& model = *m.model;
    std::optional<PatientRecord> registered;
    if (auto it = req.find("patient_id"); it != req.end()) {
        registered = find_patient(it->get<std::string>());
        if (!registered) throw HttpError(404, "unknown patient " + it->get<std::string>());
    }
    const auto patient = patient_input(model, req, registered);
    const auto& sched = field(req, "schedule");
    if (!sched.is_array()) throw ValidationError("schedule: expected an array", "schedule");
    if (sched.empty()) throw ValidationError("schedule: must contain at least one piece", "schedule");
    Schedule schedule;
    for (std::size_t i = 0; i < sched.size(); ++i) {
        const std::string where = "schedule[" + std::to_string(i) + "]";
        const auto& piece = sched[i];
        if (!piece.is_object()) throw ValidationError(where + ": expected an object", where);
        const auto& d = field(piece, "duration");
        if (!d.is_number() || !(d.get<double>() > 0.0))
            throw ValidationError(where + ".duration: must be a positive number", where + ".duration");
        RiskFactorVector z = patient.covariates;
        if (auto c = piece.find("covariates"); c != piece.end())
            z = override_covariates(model.covariates(), z, *c, where + ".covariates");
        schedule.push_back({d.get<double>(), z});
    }
    double step = req.value("grid_step", 1.0);
    if (!(step > 0.0)) throw ValidationError("grid_step must be positive", "grid_step");
    ForwardOptions options;
    options.grid_step = std::min(step, 0.1);
    const auto result = forward_trajectory(model, patient.state, schedule, options);
    json out = trajectory_to_json(result, model.conditions(), step);
    out["model_id"] = m.id;
    return out;
}

json Service::plan(const StoredModel& m, const json& req) const {
    const auto& model = *m.model;
    std::optional<PatientRecord> registered;
    if (auto it = req.find("patient_id"); it != req.end()) {
        registered = find_patient(it->get<std::string>());
        if (!registered) throw HttpError(404, "unknown patient " + it->get<std::string>());
    }
    const auto patient = patient_input(model, req, registered);
    const auto cfg = planner_config_from_json(req.value("config", json(nullptr)));
    const auto bounds = bounds_from_json(model.covariates(), req.value("bounds", json(nullptr)));
    std::vector<double> epochs{0.0};
    if (auto it = req.find("epochs"); it != req.end()) {
        if (!it->is_array()) throw ValidationError("epochs: expected an array", "epochs");
        epochs.clear();
        for (const auto& e : *it) {
            if (!e.is_number()) throw ValidationError("epochs: expected numbers", "epochs");
            epochs.push_back(e.get<double>());
        }
    }
    const double horizon = req.value("simulation_horizon", 10.0);
    if (!(horizon > 0.0)) throw ValidationError("simulation_horizon must be positive", "simulation_horizon");
    for (std::size_t i = 0; i < epochs.size(); ++i)
        if (!(epochs[i] >= 0.0 && epochs[i] < horizon) || (i > 0 && !(epochs[i] > epochs[i - 1])))
            throw ValidationError("epochs must be strictly increasing within [0, simulation_horizon)", "epochs");

    PatientTimeline timeline{patient.state, patient.covariates, {}};
    const auto run = receding_horizon_run(model, timeline, epochs, bounds, cfg, horizon);
    json out = receding_to_json(run, model);
    if (patient.state.bits() == model.conditions().full_mask()) {
        out["sensitivity"] = json::array();
    } else {
        out["sensitivity"] = sensitivity_to_json(
            sensitivity_report(model, patient.state, patient.covariates, bounds, cfg), model.conditions());
    }
    out["model_id"] = m.id;
    return out;
}

json Service::update(const StoredModel& m, const json& req) {
    const auto batch = dataset_from_request(req, config_.data_root, "batch", "batch_path");
    const auto cfg = online_config_from_json(req.value("config", json(nullptr)));
    RegularizationSpec reg;
    reg.num_conditions = m.model->conditions().size();
    reg.lambda = req.value("lambda", 0.0);
    if (!(reg.lambda >= 0.0)) throw ValidationError("lambda must be nonnegative", "lambda");
    if (!(batch.conditions() == m.model->conditions()) || !(batch.covariates() == m.model->covariates()))
        throw ValidationError("batch header does not match the model's conditions and covariates", "batch");

    std::lock_guard lock(lineage_lock(m.meta.lineage));
    const auto result = online_update(*m.model, batch, cfg, reg);
    int version = m.meta.version + 1;
    for (const auto& other : store_.list())
        if (other.meta.lineage == m.meta.lineage) version = std::max(version, other.meta.version + 1);
    const auto stored = store_.put(result.model, ModelMeta{version, m.id, m.meta.lineage});
    return {{"id", stored.id},
            {"version", stored.meta.version},
            {"parent", stored.meta.parent ? json(*stored.meta.parent) : json(nullptr)},
            {"lineage", stored.meta.lineage},
            {"epochs", result.epochs},
            {"converged", result.converged},
            {"parameter_change", result.parameter_change}};
}

json Service::add_patient(const json& req) {
    const ConditionSet conditions;
    const auto dict = CovariateDictionary::standard_roster();
    PatientRecord rec;

    std::vector<std::pair<double, MccState>> history;
    if (auto it = req.find("history"); it != req.end()) {
        if (!it->is_array()) throw ValidationError("history: expected an array", "history");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string where = "history[" + std::to_string(i) + "]";
            const auto& h = (*it)[i];
            if (!h.is_object()) throw ValidationError(where + ": expected an object", where);
            const auto& t = field(h, "time");
            if (!t.is_number()) throw ValidationError(where + ".time: expected a number", where + ".time");
            const auto s = state_from_json(conditions, field(h, "state"), where + ".state");
            if (!history.empty()) {
                if (!(t.get<double>() > history.back().first))
                    throw ValidationError(where + ".time: visits must be strictly increasing", where + ".time");
                if (!history.back().second.is_subset_of(s))
                    throw ValidationError(where + ".state: acquired conditions cannot be lost", where + ".state");
            }
            history.push_back({t.get<double>(), s});
        }
    }
    MccState state;
    if (auto it = req.find("state"); it != req.end()) {
        state = state_from_json(conditions, *it, "state");
        if (!history.empty() && !(history.back().second == state))
            throw ValidationError("state: must equal the latest history entry", "state");
    } else if (!history.empty()) {
        state = history.back().second;
    } else {
        throw ValidationError("state: required when history is empty", "state");
    }
    if (history.empty()) history.push_back({0.0, state});
    const auto z = covariates_from_object(dict, field(req, "covariates"), "covariates");

    rec.state = state.names(conditions);
    rec.covariates = json::object();
    for (std::size_t i = 0; i < dict.size(); ++i) rec.covariates[dict[i].name] = z[i];
    for (const auto& [t, s] : history) rec.history.push_back({t, s.names(conditions)});

    std::lock_guard lock(patients_mutex_);
    if (auto it = req.find("patient_id"); it != req.end()) {
        if (!it->is_string() || it->get<std::string>().empty())
            throw ValidationError("patient_id: expected a nonempty string", "patient_id");
        rec.patient_id = it->get<std::string>();
        if (patients_.count(rec.patient_id)) throw HttpError(409, "patient " + rec.patient_id + " already exists");
    } else {
        std::size_t k = patients_.size() + 1;
        do {
            char buf[32];
            std::snprintf(buf, sizeof buf, "p%06zu", k++);
            rec.patient_id = buf;
        } while (patients_.count(rec.patient_id));
    }
    patients_[rec.patient_id] = rec;
    return rec.to_json();
}

std::optional<PatientRecord> Service::find_patient(const std::string& id) const {
    std::lock_guard lock(patients_mutex_);
    auto it = patients_.find(id);
    if (it == patients_.end()) return std::nullopt;
    return it->second;
}

json Service::list_patients() const {
    std::lock_guard lock(patients_mutex_);
    json out = json::array();
    for (const auto& [id, rec] : patients_) out.push_back(rec.to_json());
    return {{"patients", out}};
}

// ---------------------------------------------------------------------------------------------
// HTTP front end

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(Service& service, int timeout_seconds) : impl_(std::make_unique<Impl>()) {
    auto& srv = impl_->server;
    srv.set_read_timeout(timeout_seconds, 0);
    srv.set_write_timeout(timeout_seconds, 0);
    auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto r = service.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, "application/json");
        res.set_header("Access-Control-Allow-Origin", "*");
    };
    srv.Get(".*", forward);
    srv.Post(".*", forward);
    srv.Options(".*", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace fctbn
