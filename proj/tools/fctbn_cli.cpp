// Command-line front end: synthesize cohorts, fit, predict, plan, serve, reproduce case studies.

#include "fctbn/cohort.hpp"
#include "fctbn/io.hpp"
#include "fctbn/learning.hpp"
#include "fctbn/planner.hpp"
#include "fctbn/report.hpp"
#include "fctbn/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace fctbn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

std::vector<double> parse_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ValidationError(what + ": cannot parse \"" + item + "\" as a number", what);
        }
    }
    return out;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path, path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what(), path);
    }
}

void emit(const std::string& out_path, const std::string& contents) {
    if (out_path.empty() || out_path == "-") std::cout << contents;
    else atomic_write(out_path, contents);
}

FctbnModel load_model(const std::string& model_path, const std::string& preset) {
    if (!model_path.empty()) return read_model(model_path);
    return preset_model(preset);
}

struct Patient {
    MccState state;
    RiskFactorVector covariates;
};

/// {"state": [...] | mask, "covariates": {...}}
Patient load_patient(const FctbnModel& model, const std::string& path) {
    const json j = read_json(path);
    if (!j.is_object()) throw ValidationError(path + ": expected an object", path);
    if (!j.contains("state")) throw ValidationError("state: required", "state");
    if (!j.contains("covariates")) throw ValidationError("covariates: required", "covariates");
    return {state_from_json(model.conditions(), j.at("state"), "state"),
            covariates_from_object(model.covariates(), j.at("covariates"), "covariates")};
}

PlannerConfig planner_config(int horizon, double lambda, double adherence, const std::string& mode, bool survival) {
    json j = {{"horizon", horizon}, {"change_penalty", lambda}, {"adherence_window", adherence}, {"mode", mode},
              {"survival_weighted", survival}};
    return planner_config_from_json(j);
}

void write_case(const fs::path& dir, const std::string& stem, const FctbnModel& model,
                const RecedingHorizonResult& run) {
    atomic_write(dir / (stem + "_baseline.csv"), trajectory_to_csv(run.baseline, model.conditions(), 0.1));
    atomic_write(dir / (stem + "_intervened.csv"), trajectory_to_csv(run.intervened, model.conditions(), 0.1));
    json plans = json::array();
    for (const auto& p : run.plans) {
        json pj = plan_to_json(p, model);
        pj.erase("with_plan");
        pj.erase("without_plan");
        plans.push_back(pj);
    }
    atomic_write(dir / (stem + "_plan.json"), json({{"plans", plans}}).dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Functional CTBN toolkit for multiple chronic conditions"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Simulate a synthetic cohort and write a JSONL dataset");
    std::string synth_preset = "figure2a-like", synth_out, synth_visits = "0,5,10", synth_prev;
    std::string synth_model;
    std::size_t synth_n = 1000;
    std::uint64_t synth_seed = 1;
    synth->add_option("--preset", synth_preset, "Preset model")->check(CLI::IsMember(preset_names()));
    synth->add_option("--model", synth_model, "Model JSON (overrides --preset)");
    synth->add_option("-n,--patients", synth_n, "Number of patients");
    synth->add_option("--seed", synth_seed, "Master seed");
    synth->add_option("--visits", synth_visits, "Comma-separated visit times");
    synth->add_option("--prevalence", synth_prev, "Comma-separated initial prevalence per condition");
    synth->add_option("-o,--out", synth_out, "Output path (default stdout)");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a model to a dataset");
    std::string fit_data, fit_out, fit_grid, fit_features = "main";
    double fit_lambda = 0.0, fit_prune = kDefaultPruneThreshold;
    fit->add_option("-d,--data", fit_data, "Dataset JSONL")->required();
    fit->add_option("--lambda-grid", fit_grid, "Comma-separated increasing lambda grid");
    fit->add_option("--lambda", fit_lambda, "Single lambda (adaptive weights) when no grid is given");
    fit->add_option("--prune", fit_prune, "Edge pruning threshold");
    fit->add_option("--edge-features", fit_features, "main or interaction")->check(CLI::IsMember({"main", "interaction"}));
    fit->add_option("-o,--out", fit_out, "Output model path");

    // predict
    auto* predict = app.add_subcommand("predict", "Forward risk trajectory for one patient");
    std::string pred_model, pred_preset = "figure2a-like", pred_patient, pred_out, pred_format = "csv";
    double pred_horizon = 10.0, pred_step = 1.0;
    predict->add_option("-m,--model", pred_model, "Model JSON");
    predict->add_option("--preset", pred_preset, "Preset model when --model is absent")->check(CLI::IsMember(preset_names()));
    predict->add_option("-p,--patient", pred_patient, "Patient JSON {state, covariates}")->required();
    predict->add_option("--horizon", pred_horizon, "Years to simulate");
    predict->add_option("--step", pred_step, "Output grid step in years");
    predict->add_option("--format", pred_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    predict->add_option("-o,--out", pred_out, "Output path (default stdout)");

    // plan
    auto* planc = app.add_subcommand("plan", "Receding-horizon behavior plan for one patient");
    std::string plan_model, plan_preset = "figure2a-like", plan_patient, plan_out, plan_epochs = "0";
    std::string plan_mode = "binary", plan_bounds;
    int plan_L = 5;
    double plan_lambda = 0.1, plan_adherence = 1.0, plan_sim = 10.0;
    bool plan_survival = false;
    planc->add_option("-m,--model", plan_model, "Model JSON");
    planc->add_option("--preset", plan_preset, "Preset model when --model is absent")->check(CLI::IsMember(preset_names()));
    planc->add_option("-p,--patient", plan_patient, "Patient JSON {state, covariates}")->required();
    planc->add_option("--epochs", plan_epochs, "Comma-separated intervention times");
    planc->add_option("-L,--lookahead", plan_L, "Planning horizon in periods");
    planc->add_option("--lambda", plan_lambda, "Behavior change penalty");
    planc->add_option("--adherence", plan_adherence, "Years a recommendation is followed");
    planc->add_option("--mode", plan_mode, "binary or continuous")->check(CLI::IsMember({"binary", "continuous"}));
    planc->add_flag("--survival-weighted", plan_survival, "Weight stages by survival probability");
    planc->add_option("--bounds", plan_bounds, "Bounds JSON {name: {lower, upper, locked}}");
    planc->add_option("--sim-horizon", plan_sim, "Years to simulate");
    planc->add_option("-o,--out", plan_out, "Output path (default stdout)");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    std::string serve_host = "127.0.0.1", serve_dir, serve_root = ".";
    int serve_port = 8080, serve_timeout = 600;
    serve->add_option("--host", serve_host, "Bind address");
    serve->add_option("--port", serve_port, "Port");
    serve->add_option("--model-dir", serve_dir, "Model directory (default $MCC_MODEL_DIR or ./models)");
    serve->add_option("--data-root", serve_root, "Directory for relative dataset paths");
    serve->add_option("--timeout", serve_timeout, "Request read/write timeout in seconds");

    // reproduce-case-studies
    auto* cases = app.add_subcommand("reproduce-case-studies",
                                     "Write baseline and intervened trajectories for the case-study scenarios");
    std::string cases_dir = "case-studies", cases_model, cases_preset = "figure2a-like";
    cases->add_option("-o,--out-dir", cases_dir, "Output directory");
    cases->add_option("-m,--model", cases_model, "Model JSON");
    cases->add_option("--preset", cases_preset, "Preset model when --model is absent")->check(CLI::IsMember(preset_names()));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*synth) {
            CohortSpec spec{.n_patients = synth_n,
                            .covariate_laws = {},
                            .visit_times = parse_list(synth_visits, "--visits"),
                            .initial_prevalence = parse_list(synth_prev, "--prevalence"),
                            .model = load_model(synth_model, synth_preset),
                            .seed = synth_seed};
            spec.covariate_laws = standard_covariate_laws(spec.model.covariates());
            const auto data = generate(spec);
            std::ostringstream out;
            write_dataset(data, out);
            emit(synth_out, out.str());
            std::cerr << json({{"event", "synth"}, {"records", data.size()}, {"patients", synth_n}}).dump() << "\n";
        } else if (*fit) {
            const auto data = read_dataset(fs::path(fit_data));
            FitOptions options;
            options.edge_features = fit_features == "interaction" ? EdgeFeatures::Interaction : EdgeFeatures::MainEffect;
            FctbnModel model;
            std::printf("%-12s %6s %16s\n", "lambda", "edges", "score");
            if (!fit_grid.empty()) {
                const auto path = structure_path(data, parse_list(fit_grid, "--lambda-grid"), options, fit_prune);
                for (std::size_t i = 0; i < path.entries.size(); ++i) {
                    const auto& e = path.entries[i];
                    std::printf("%-12g %6zu %16.6f%s\n", e.lambda, e.edges.size(), e.score,
                                i == path.best ? "  *" : "");
                    json line = fit_report_to_json(e.report);
                    line["lambda"] = e.lambda;
                    line["edges"] = e.edges.size();
                    line["score"] = e.score;
                    std::cerr << line.dump() << "\n";
                }
                model = path.best_entry().refit;
            } else {
                if (!(fit_lambda >= 0.0)) throw ValidationError("--lambda must be nonnegative", "--lambda");
                RegularizationSpec reg;
                if (fit_lambda > 0.0) {
                    reg = adaptive_regularization(data, fit_lambda, options);
                } else {
                    reg.num_conditions = data.conditions().size();
                }
                reg.prune_epsilon = fit_prune;
                const auto result = fit_mle(data, reg, std::nullopt, options);
                model = result.model;
                std::printf("%-12g %6zu %16s\n", fit_lambda, model.edges().size(), "-");
                json line = fit_report_to_json(result.report);
                line["lambda"] = fit_lambda;
                std::cerr << line.dump() << "\n";
            }
            if (!fit_out.empty()) write_model(model, fit_out);
        } else if (*predict) {
            const auto model = load_model(pred_model, pred_preset);
            const auto patient = load_patient(model, pred_patient);
            if (!(pred_horizon > 0.0)) throw ValidationError("--horizon must be positive", "--horizon");
            if (!(pred_step > 0.0)) throw ValidationError("--step must be positive", "--step");
            const auto result = forward_trajectory(model, patient.state, {{pred_horizon, patient.covariates}});
            emit(pred_out, pred_format == "csv" ? trajectory_to_csv(result, model.conditions(), pred_step)
                                                : trajectory_to_json(result, model.conditions(), pred_step).dump(2) + "\n");
        } else if (*planc) {
            const auto model = load_model(plan_model, plan_preset);
            const auto patient = load_patient(model, plan_patient);
            const auto cfg = planner_config(plan_L, plan_lambda, plan_adherence, plan_mode, plan_survival);
            const auto bounds =
                bounds_from_json(model.covariates(), plan_bounds.empty() ? json(nullptr) : read_json(plan_bounds));
            const auto run = receding_horizon_run(model, {patient.state, patient.covariates, {}},
                                                  parse_list(plan_epochs, "--epochs"), bounds, cfg, plan_sim);
            json out = receding_to_json(run, model);
            emit(plan_out, out.dump(2) + "\n");
        } else if (*serve) {
            if (serve_dir.empty()) {
                const char* env = std::getenv("MCC_MODEL_DIR");
                serve_dir = env && *env ? env : "models";
            }
            Service service(ServiceConfig{serve_dir, serve_root, true});
            HttpServer server(service, serve_timeout);
            const int port = server.bind(serve_host, serve_port);
            if (port < 0) {
                std::cerr << "cannot bind " << serve_host << ":" << serve_port << "\n";
                return kExitValidation;
            }
            std::cerr << json({{"event", "listening"}, {"host", serve_host}, {"port", port},
                               {"model_dir", serve_dir}}).dump()
                      << "\n";
            server.listen();
        } else if (*cases) {
            const auto model = load_model(cases_model, cases_preset);
            fs::create_directories(cases_dir);
            const std::vector<std::pair<std::string, std::vector<double>>> scenarios{
                {"a", {2.0}}, {"b", {3.0}}, {"c", {4.0}}, {"d", {4.0, 8.0}}};
            const PlannerConfig cfg;
            for (const auto& patient : case_study_patients(model.covariates())) {
                const auto bounds = BehaviorBounds::unrestricted(model.covariates().modifiable().size());
                for (const auto& [tag, epochs] : scenarios) {
                    const auto run = receding_horizon_run(model, {patient.state, patient.covariates, {}}, epochs,
                                                          bounds, cfg, 10.0);
                    write_case(cases_dir, patient.id + "_" + tag, model, run);
                    std::cerr << json({{"event", "case"}, {"patient", patient.id}, {"scenario", tag},
                                       {"epochs", epochs}}).dump()
                              << "\n";
                }
            }
        }
    } catch (const InfeasibleBoundsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (const auto& c : e.conflicts())
            std::cerr << "  " << c.covariate << ": [" << c.lower << ", " << c.upper << "] " << c.reason << "\n";
        return kExitValidation;
    } catch (const NumericOverflowError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const StepSizeError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return 0;
}
