#pragma once

#include "fctbn/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fctbn {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(const std::string& data);

struct ModelMeta {
    int version = 1;
    std::optional<std::string> parent;
    std::string lineage;  // id of the first version
};

struct StoredModel {
    std::string id;
    ModelMeta meta;
    std::shared_ptr<const FctbnModel> model;
};

/// Content-addressed model directory: `<id>.json` holds the model and `<id>.meta.json` its
/// version metadata, where id is the SHA-256 of the compact canonical model JSON. Stored models
/// are never rewritten.
class ModelStore {
public:
    explicit ModelStore(std::filesystem::path dir);

    static std::string content_id(const FctbnModel& model);

    /// Stores `model` unless an identical one exists; either way returns the stored entry.
    StoredModel put(const FctbnModel& model, ModelMeta meta);
    /// nullopt for ids that are malformed or not present.
    std::optional<StoredModel> get(const std::string& id) const;
    std::vector<StoredModel> list() const;

    const std::filesystem::path& directory() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, StoredModel> cache_;
};

struct PatientRecord {
    std::string patient_id;
    std::vector<std::string> state;                    // acquired condition ids
    nlohmann::json covariates;                         // {name: value}
    std::vector<std::pair<double, std::vector<std::string>>> history;  // (visit time, state)

    nlohmann::json to_json() const;
};

struct HttpResponse {
    int status = 200;
    std::string body;
};

struct ServiceConfig {
    std::filesystem::path model_dir = "models";
    /// Relative dataset paths in requests resolve against this directory.
    std::filesystem::path data_root = ".";
    /// Register the two case-study patients at startup.
    bool seed_patients = true;
};

/// Transport-independent request handling; the HTTP server forwards every request here.
class Service {
public:
    explicit Service(ServiceConfig config);

    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

    ModelStore& store() { return store_; }

private:
    nlohmann::json fit_model(const nlohmann::json& req);
    nlohmann::json describe_model(const StoredModel& m) const;
    nlohmann::json predict(const StoredModel& m, const nlohmann::json& req) const;
    nlohmann::json plan(const StoredModel& m, const nlohmann::json& req) const;
    nlohmann::json update(const StoredModel& m, const nlohmann::json& req);
    nlohmann::json add_patient(const nlohmann::json& req);
    std::optional<PatientRecord> find_patient(const std::string& id) const;
    nlohmann::json list_patients() const;
    std::mutex& lineage_lock(const std::string& lineage);

    ServiceConfig config_;
    ModelStore store_;
    mutable std::mutex patients_mutex_;
    std::map<std::string, PatientRecord> patients_;
    std::mutex locks_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> lineage_locks_;
    std::mutex fit_mutex_;
};

/// Blocking HTTP front end for a Service.
class HttpServer {
public:
    HttpServer(Service& service, int timeout_seconds = 600);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds to `port` (0 picks a free port) and returns the bound port, or -1 on failure.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    bool listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fctbn
