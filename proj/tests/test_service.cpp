#include "support.hpp"
#include "recovery.hpp"

#include "fctbn/cohort.hpp"
#include "fctbn/dynamics.hpp"
#include "fctbn/io.hpp"
#include "fctbn/service.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <regex>
#include <thread>

#include <unistd.h>

using namespace fctbn;
using namespace fctbn::testing;
using nlohmann::json;

namespace {

struct Fixture {
    std::filesystem::path dir;
    Service service;

    static std::filesystem::path fresh_dir() {
        static int counter = 0;
        auto d = std::filesystem::temp_directory_path() /
                 ("fctbn_service_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(d);
        return d;
    }
    Fixture() : dir(fresh_dir()), service(ServiceConfig{dir / "models", dir, true}) {}
    ~Fixture() { std::filesystem::remove_all(dir); }

    std::pair<int, json> call(const std::string& method, const std::string& path, const json& body = nullptr) {
        const auto r = service.handle(method, path, body.is_null() ? "" : body.dump());
        return {r.status, json::parse(r.body)};
    }
    std::string raw(const std::string& method, const std::string& path, const json& body = nullptr) {
        return service.handle(method, path, body.is_null() ? "" : body.dump()).body;
    }
    std::string fit(const std::string& preset = "figure2a-like", std::size_t n = 400, std::uint64_t seed = 1) {
        const auto [status, out] =
            call("POST", "/models", {{"dataset", dataset_to_json(preset_cohort(preset, n, seed))}});
        REQUIRE(status == 201);
        return out["id"].get<std::string>();
    }
};

const json kCase1 = {{"patient_id", "case1"}};

}  // namespace

TEST_CASE("sha256") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("model lifecycle") {
    Fixture f;
    auto [s0, empty] = f.call("GET", "/models");
    CHECK(s0 == 200);
    CHECK(empty["models"].empty());

    const auto data = preset_cohort("figure2a-like", 400, 1);
    auto [s1, fitted] = f.call("POST", "/models", {{"dataset", dataset_to_json(data)}});
    REQUIRE(s1 == 201);
    const auto id = fitted["id"].get<std::string>();
    CHECK(std::regex_match(id, std::regex("[0-9a-f]{64}")));
    CHECK(fitted["version"] == 1);
    CHECK(fitted["report"]["converged"] == true);
    CHECK(std::filesystem::exists(f.dir / "models" / (id + ".json")));
    CHECK(std::filesystem::exists(f.dir / "models" / (id + ".meta.json")));

    // identical data fit again maps to the same stored model
    auto [s2, again] = f.call("POST", "/models", {{"dataset", dataset_to_json(data)}});
    CHECK(s2 == 201);
    CHECK(again["id"] == id);

    auto [s3, desc] = f.call("GET", "/models/" + id);
    CHECK(s3 == 200);
    CHECK(desc["lineage"] == id);
    CHECK(desc["parent"].is_null());
    const auto model = model_from_json(desc["model"]);
    CHECK(ModelStore::content_id(model) == id);
    CHECK(sha256_hex(model_to_json(model).dump()) == id);

    // the stored model equals a direct unpenalized fit
    RegularizationSpec reg;
    reg.num_conditions = 5;
    CHECK(model.parameters() == fit_mle(data, reg).model.parameters());

    auto [s4, list] = f.call("GET", "/models");
    CHECK(list["models"].size() == 1);

    // a dataset on disk, relative to the data root
    write_dataset(preset_cohort("chain5", 300, 2), f.dir / "chain.jsonl");
    auto [s5, from_file] = f.call("POST", "/models", {{"dataset_path", "chain.jsonl"}, {"regularization", {{"lambda", 0.5}}}});
    CHECK(s5 == 201);
    CHECK(from_file["id"] != id);

    // a fresh service over the same directory serves the stored models
    Service reopened(ServiceConfig{f.dir / "models", f.dir, true});
    const auto r = reopened.handle("GET", "/models/" + id, "");
    CHECK(r.status == 200);
    CHECK(r.body == f.raw("GET", "/models/" + id));
}

TEST_CASE("fitting along a lambda grid") {
    Fixture f;
    const auto data = preset_cohort("figure2a-like", 1500, 3);
    auto [status, out] = f.call("POST", "/models",
                                {{"dataset", dataset_to_json(data)},
                                 {"regularization", {{"lambda_grid", {0.0, 0.1, 1.0, 10.0, 1e6}}}}});
    REQUIRE(status == 201);
    const auto& entries = out["path"]["entries"];
    REQUIRE(entries.size() == 5);
    for (std::size_t i = 1; i < entries.size(); ++i) CHECK(entries[i]["edge_count"] <= entries[i - 1]["edge_count"]);
    CHECK(entries[4]["edge_count"] == 0);
    const auto best = out["path"]["best"].get<std::size_t>();
    CHECK(out["edges"].size() == entries[best]["edge_count"]);
}

TEST_CASE("fit errors") {
    Fixture f;
    auto [s1, e1] = f.call("POST", "/models", json::object());
    CHECK(s1 == 422);
    CHECK(e1["kind"] == "validation");
    CHECK(e1["field"] == "dataset");

    auto [s2, e2] = f.call("POST", "/models", {{"dataset_path", "missing.jsonl"}});
    CHECK(s2 == 422);
    CHECK(e2["field"] == "dataset_path");

    TrajectoryDataset d(ConditionSet({"A", "B"}), CovariateDictionary{});
    d.add({"p1", 0.0, 1.0, MccState(0b10), 0, Eigen::VectorXd(0), std::nullopt});
    auto [s3, e3] = f.call("POST", "/models", {{"dataset", dataset_to_json(d)}});
    CHECK(s3 == 422);
    CHECK(e3["kind"] == "structural");
    CHECK(e3["condition"] == "B");

    auto [s4, e4] = f.call("POST", "/models",
                           {{"dataset", dataset_to_json(d)}, {"regularization", {{"lambda", -1.0}}}});
    CHECK(s4 == 422);
    CHECK(e4["field"] == "regularization.lambda");

    const auto r = f.service.handle("POST", "/models", "{not json");
    CHECK(r.status == 422);
    auto [s5, e5] = f.call("GET", "/nowhere");
    CHECK(s5 == 404);
}

TEST_CASE("prediction") {
    Fixture f;
    const auto id = f.fit();
    const auto model = model_from_json(f.call("GET", "/models/" + id).second["model"]);
    const auto patient = case_study_patients(model.covariates()).front();

    json req = kCase1;
    req["schedule"] = {{{"duration", 10}}};
    auto [status, out] = f.call("POST", "/models/" + id + "/predict", req);
    REQUIRE(status == 200);
    CHECK(out["model_id"] == id);
    CHECK(out["times"].size() == 11);
    ForwardOptions opt;
    opt.grid_step = 0.1;
    const auto direct = forward_trajectory(model, patient.state, {{10.0, patient.covariates}}, opt).sampled(1.0);
    const auto di = model.conditions().index_of("DI");
    for (std::size_t r = 0; r < 11; ++r)
        CHECK(out["marginals"]["DI"][r].get<double>() == direct.marginals(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(di)));

    // identical requests give byte-identical responses
    CHECK(f.raw("POST", "/models/" + id + "/predict", req) == f.raw("POST", "/models/" + id + "/predict", req));

    // a behavior change from year 2 leaves the first two years untouched
    json changed = kCase1;
    changed["schedule"] = {{{"duration", 2}}, {{"duration", 8}, {"covariates", {{"diet", 1}, {"exercise", 1}}}}};
    auto [s2, out2] = f.call("POST", "/models/" + id + "/predict", changed);
    REQUIRE(s2 == 200);
    for (std::size_t r = 0; r <= 2; ++r) CHECK(out2["marginals"]["DI"][r] == out["marginals"]["DI"][r]);
    CHECK(out2["marginals"]["DI"][10].get<double>() < out["marginals"]["DI"][10].get<double>());

    // explicit patient description
    json all = {{"state", model.conditions().names()}, {"covariates", f.call("GET", "/patients/case1").second["covariates"]},
                {"schedule", {{{"duration", 3}}}}, {"grid_step", 0.5}};
    auto [s3, out3] = f.call("POST", "/models/" + id + "/predict", all);
    REQUIRE(s3 == 200);
    CHECK(out3["times"].size() == 7);
    for (const auto& v : out3["marginals"]["CI"]) CHECK(v == 1.0);

    json empty = kCase1;
    empty["schedule"] = json::array();
    auto [s4, e4] = f.call("POST", "/models/" + id + "/predict", empty);
    CHECK(s4 == 422);
    CHECK(e4["field"] == "schedule");

    json ghost = {{"patient_id", "ghost"}, {"schedule", {{{"duration", 1}}}}};
    CHECK(f.call("POST", "/models/" + id + "/predict", ghost).first == 404);
    CHECK(f.call("POST", "/models/" + std::string(64, '0') + "/predict", req).first == 404);
    CHECK(f.call("POST", "/models/abc/predict", req).first == 404);

    json bad_cov = kCase1;
    bad_cov["schedule"] = {{{"duration", 1}, {"covariates", {{"smoking", 1}}}}};
    CHECK(f.call("POST", "/models/" + id + "/predict", bad_cov).first == 422);
    json bad_duration = kCase1;
    bad_duration["schedule"] = {{{"duration", -1}}};
    auto [s5, e5] = f.call("POST", "/models/" + id + "/predict", bad_duration);
    CHECK(s5 == 422);
    CHECK(e5["field"] == "schedule[0].duration");
}

TEST_CASE("planning") {
    Fixture f;
    const auto id = f.fit();

    json req = kCase1;
    req["config"] = {{"change_penalty", 1e9}};
    auto [s1, out] = f.call("POST", "/models/" + id + "/plan", req);
    REQUIRE(s1 == 200);
    REQUIRE(out["plans"].size() == 1);
    CHECK(out["plans"][0]["applied_action"] == out["plans"][0]["current"]);
    CHECK(out["first_behavior_change"].is_null());
    CHECK(out["baseline"] == out["intervened"]);

    json free_plan = kCase1;
    free_plan["epochs"] = {2.0, 6.0};
    free_plan["config"] = {{"change_penalty", 0.01}, {"horizon", 3}};
    auto [s2, out2] = f.call("POST", "/models/" + id + "/plan", free_plan);
    REQUIRE(s2 == 200);
    CHECK(out2["plans"].size() == 2);
    CHECK(out2["plans"][0]["epochs"].size() == 3);
    CHECK(out2["plans"][0]["applied_action"]["exercise"] == 1.0);
    CHECK(out2["first_behavior_change"] == 2.0);
    CHECK(out2["sensitivity"].size() == 4);
    CHECK(f.raw("POST", "/models/" + id + "/plan", free_plan) == f.raw("POST", "/models/" + id + "/plan", free_plan));

    json infeasible = kCase1;
    infeasible["bounds"] = {{"diet", {{"lower", 0.3}, {"upper", 0.6}}}};
    auto [s3, e3] = f.call("POST", "/models/" + id + "/plan", infeasible);
    CHECK(s3 == 409);
    CHECK(e3["kind"] == "infeasible_bounds");
    REQUIRE(e3["conflicts"].size() == 1);
    CHECK(e3["conflicts"][0]["covariate"] == "diet");

    json locked = free_plan;
    locked["bounds"] = {{"exercise", {{"locked", true}}}};
    auto [s4, out4] = f.call("POST", "/models/" + id + "/plan", locked);
    REQUIRE(s4 == 200);
    for (const auto& p : out4["plans"])
        for (const auto& e : p["epochs"]) CHECK(e["behaviors"]["exercise"] == 0.0);

    json late = kCase1;
    late["epochs"] = {12.0};
    auto [s5, e5] = f.call("POST", "/models/" + id + "/plan", late);
    CHECK(s5 == 422);
    CHECK(e5["field"] == "epochs");

    json bad_cfg = kCase1;
    bad_cfg["config"] = {{"horizon", 0}};
    CHECK(f.call("POST", "/models/" + id + "/plan", bad_cfg).first == 422);
    bad_cfg["config"] = {{"mode", "fuzzy"}};
    CHECK(f.call("POST", "/models/" + id + "/plan", bad_cfg).first == 422);
}

TEST_CASE("online updates create new versions") {
    Fixture f;
    const auto id = f.fit();
    const auto before = f.raw("GET", "/models/" + id);
    const auto batch = dataset_to_json(preset_cohort("figure2a-like", 100, 77));

    json req = {{"batch", batch}, {"config", {{"learning_rate", 1e-4}, {"max_epochs", 3}}}};
    auto [s1, v2] = f.call("POST", "/models/" + id + "/update", req);
    REQUIRE(s1 == 201);
    CHECK(v2["version"] == 2);
    CHECK(v2["parent"] == id);
    CHECK(v2["lineage"] == id);
    CHECK(v2["epochs"] == 3);
    CHECK(v2["parameter_change"].get<double>() > 0.0);
    const auto id2 = v2["id"].get<std::string>();
    CHECK(id2 != id);

    // version 1 is untouched
    CHECK(f.raw("GET", "/models/" + id) == before);

    json predict = kCase1;
    predict["schedule"] = {{{"duration", 5}}};
    CHECK(f.raw("POST", "/models/" + id + "/predict", predict) != f.raw("POST", "/models/" + id2 + "/predict", predict));

    // a second branch off version 1 continues the lineage numbering
    json other = req;
    other["config"]["learning_rate"] = 2e-4;
    auto [s2, v3] = f.call("POST", "/models/" + id + "/update", other);
    REQUIRE(s2 == 201);
    CHECK(v3["version"] == 3);
    CHECK(v3["parent"] == id);
    auto [s3, v4] = f.call("POST", "/models/" + id2 + "/update", req);
    REQUIRE(s3 == 201);
    CHECK(v4["version"] == 4);
    CHECK(v4["parent"] == id2);
    CHECK(f.call("GET", "/models").second["models"].size() == 4);

    // errors
    json diverge = {{"batch", batch}, {"config", {{"learning_rate", 1e3}, {"batch_size", 100000}}}};
    auto [s4, e4] = f.call("POST", "/models/" + id + "/update", diverge);
    CHECK(s4 == 422);
    CHECK(e4["kind"] == "numeric");

    TrajectoryDataset mismatch(ConditionSet({"A"}), CovariateDictionary{});
    mismatch.add({"p1", 0.0, 1.0, MccState(0), 0, Eigen::VectorXd(0), std::nullopt});
    auto [s5, e5] = f.call("POST", "/models/" + id + "/update", {{"batch", dataset_to_json(mismatch)}});
    CHECK(s5 == 422);
    CHECK(e5["field"] == "batch");
    auto [s6, e6] = f.call("POST", "/models/" + id + "/update", json::object());
    CHECK(s6 == 422);
}

TEST_CASE("patient registry") {
    Fixture f;
    auto [s0, list] = f.call("GET", "/patients");
    CHECK(s0 == 200);
    REQUIRE(list["patients"].size() == 2);
    CHECK(list["patients"][0]["patient_id"] == "case1");
    CHECK(list["patients"][1]["covariates"]["age_group"] == 3.0);

    json covs = list["patients"][0]["covariates"];
    json req = {{"covariates", covs}, {"history", {{{"time", 0}, {"state", json::array()}}, {{"time", 5}, {"state", {"OB"}}}}}};
    auto [s1, added] = f.call("POST", "/patients", req);
    REQUIRE(s1 == 201);
    CHECK(added["patient_id"] == "p000003");
    CHECK(added["state"] == json::array({"OB"}));
    auto [s2, fetched] = f.call("GET", "/patients/p000003");
    CHECK(s2 == 200);
    CHECK(fetched == added);

    json named = {{"patient_id", "case1"}, {"covariates", covs}, {"state", json::array()}};
    auto [s3, e3] = f.call("POST", "/patients", named);
    CHECK(s3 == 409);

    json lost = {{"covariates", covs}, {"history", {{{"time", 0}, {"state", {"OB"}}}, {{"time", 5}, {"state", json::array()}}}}};
    auto [s4, e4] = f.call("POST", "/patients", lost);
    CHECK(s4 == 422);
    CHECK(e4["field"] == "history[1].state");

    json backwards = {{"covariates", covs}, {"history", {{{"time", 5}, {"state", json::array()}}, {{"time", 5}, {"state", json::array()}}}}};
    CHECK(f.call("POST", "/patients", backwards).first == 422);
    json no_covs = {{"state", json::array()}};
    auto [s5, e5] = f.call("POST", "/patients", no_covs);
    CHECK(s5 == 422);
    CHECK(e5["field"] == "covariates");
    CHECK(f.call("GET", "/patients/nobody").first == 404);

    // a registered patient can be used for prediction
    const auto id = f.fit();
    json predict = {{"patient_id", "p000003"}, {"schedule", {{{"duration", 2}}}}};
    auto [s6, out] = f.call("POST", "/models/" + id + "/predict", predict);
    CHECK(s6 == 200);
    for (const auto& v : out["marginals"]["OB"]) CHECK(v == 1.0);
}

TEST_CASE("HTTP front end") {
    Fixture f;
    HttpServer server(f.service, 5);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread t([&] { server.listen(); });

    httplib::Client client("127.0.0.1", port);
    client.set_connection_timeout(5, 0);
    auto get = client.Get("/patients");
    REQUIRE(get);
    CHECK(get->status == 200);
    CHECK(get->get_header_value("Access-Control-Allow-Origin") == "*");
    CHECK(json::parse(get->body)["patients"].size() == 2);
    CHECK(get->body == f.raw("GET", "/patients"));

    auto missing = client.Get("/models/" + std::string(64, 'a'));
    REQUIRE(missing);
    CHECK(missing->status == 404);

    auto post = client.Post("/patients", json{{"covariates", json::object()}}.dump(), "application/json");
    REQUIRE(post);
    CHECK(post->status == 422);

    auto options = client.Options("/models");
    REQUIRE(options);
    CHECK(options->status == 204);

    server.stop();
    t.join();
}
