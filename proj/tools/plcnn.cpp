// plcnn: train, evaluate and verify piecewise-linear CNNs.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error,
// 3 data error.

#include "plcnn/checks/suites.hpp"
#include "plcnn/config.hpp"
#include "plcnn/errors.hpp"
#include "plcnn/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifndef PLCNN_VERSION
#define PLCNN_VERSION "unknown"
#endif

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;
constexpr int kData = 3;

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct TrainArgs {
    std::string config;
    std::string solver;
    std::optional<std::size_t> pretrain_epochs;
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
    std::string out = "run";
    std::string init_weights;
    std::size_t threads = 1;
    bool wall_time = false;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    const std::string started = utc_now();
    plcnn::ExperimentConfig cfg = plcnn::load_config(a.config, a.seed);
    plcnn::Phases phases = plcnn::config_phases(cfg);
    phases.threads = a.threads;
    if (a.solver.empty() || a.solver == "lwsvm") {
        if (a.pretrain_epochs) {
            phases.baseline_epochs = *a.pretrain_epochs;
        }
        if (a.epochs) {
            phases.lwsvm_passes = *a.epochs;
        }
        if (a.solver == "lwsvm" && !a.pretrain_epochs) {
            phases.baseline_epochs = 0;
        }
    } else {
        if (a.pretrain_epochs && *a.pretrain_epochs > 0) {
            throw plcnn::ConfigError("--pretrain-epochs only applies to --solver lwsvm");
        }
        const plcnn::SgdSolver solver = plcnn::parse_solver(a.solver);
        if (solver != cfg.sgd.solver) {
            plcnn::SgdConfig fresh = plcnn::SgdConfig::mnist_defaults(solver);
            fresh.lambda = cfg.sgd.lambda;
            fresh.batch_size = cfg.sgd.batch_size;
            fresh.epochs = cfg.sgd.epochs;
            fresh.loss = cfg.sgd.loss;
            fresh.seed = cfg.sgd.seed;
            cfg.sgd = fresh;
        }
        phases.baseline_epochs = a.epochs ? *a.epochs : cfg.sgd.epochs;
        phases.lwsvm_passes = 0;
    }

    const plcnn::LoadedData data = plcnn::load_data(cfg);
    std::optional<plcnn::NetworkState> start;
    if (!a.init_weights.empty()) {
        start = plcnn::build_network(cfg);
        plcnn::load_weights(*start, a.init_weights);
    }

    fs::create_directories(a.out);
    const fs::path out(a.out);
    plcnn::TrainLog log;
    if (!a.quiet) {
        std::fprintf(stderr, "train %zu, val %zu; %zu baseline epochs, %zu LW-SVM passes\n", data.train.size(),
                     data.val.size(), phases.baseline_epochs, phases.lwsvm_passes);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto progress = [&](const plcnn::TrainRecord& r) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "[%7.1fs] %-8s pass %zu layer %3ld epoch %2zu  objective %.6f  train %.4f  val %.4f\n", s,
                     r.phase.c_str(), r.pass, r.layer, r.epoch, r.objective, r.train_acc, r.val_acc);
    };
    auto result = plcnn::run_experiment(cfg, data, phases, std::move(start),
                                        a.quiet ? std::function<void(const plcnn::TrainRecord&)>{} : progress);

    const fs::path csv = out / "metrics.csv";
    const fs::path jsonl = out / "metrics.jsonl";
    const fs::path weights = out / "weights.plcw";
    plcnn::write_metrics_csv(result.log, csv.string(), a.wall_time);
    plcnn::write_metrics_jsonl(result.log, jsonl.string(), a.wall_time);
    plcnn::save_weights(result.net, weights.string());

    json manifest;
    manifest["config"] = plcnn::to_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["version"] = PLCNN_VERSION;
    manifest["started"] = started;
    manifest["finished"] = utc_now();
    manifest["phases"] = {{"baseline_epochs", phases.baseline_epochs}, {"lwsvm_passes", phases.lwsvm_passes}};
    manifest["outputs"] = {{"metrics_csv", csv.string()}, {"metrics_jsonl", jsonl.string()},
                           {"weights", weights.string()}};
    manifest["train"] = {{"objective", result.final.objective}, {"accuracy", result.final.accuracy}};
    std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
    std::printf("final objective %.6f, train accuracy %.4f; outputs in %s\n", result.final.objective,
                result.final.accuracy, a.out.c_str());
    return 0;
}

int cmd_verify(const std::vector<std::string>& suites, std::uint64_t seed, const std::string& fault) {
    plcnn::checks::SuiteOptions opt;
    opt.seed = seed;
    if (!fault.empty()) {
        if (fault != "split-weights") {
            throw plcnn::ConfigError("unknown fault '" + fault + "'");
        }
        opt.inject_split_fault = true;
    }
    const auto& names = suites.empty() ? plcnn::checks::suite_names() : suites;
    bool all = true;
    for (const auto& name : names) {
        for (const auto& r : plcnn::checks::run_suite(name, opt)) {
            std::printf("[%s] %-22s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
            std::fflush(stdout);
            all = all && r.passed;
        }
    }
    return all ? 0 : kVerifyFailed;
}

struct DcArgs {
    std::string config;
    std::string weights;
    std::size_t samples = 20;
    std::uint64_t seed = 0;
    bool json_out = false;
};

int cmd_verify_dc(const DcArgs& a) {
    plcnn::NetworkState net;
    std::vector<plcnn::LabeledSample> samples;
    if (a.config.empty()) {
        plcnn::Rng rng(a.seed);
        net = plcnn::checks::tiny_net(a.seed);
        plcnn::checks::randomize(net, rng);
        samples = plcnn::checks::random_samples(net, a.samples, rng);
    } else {
        const auto cfg = plcnn::load_config(a.config);
        net = plcnn::build_network(cfg);
        if (!a.weights.empty()) {
            plcnn::load_weights(net, a.weights);
        }
        const auto data = plcnn::load_data(cfg);
        samples = plcnn::take(data.train, a.samples).samples;
    }
    const double tol = 1e-6;
    json report = json::array();
    bool ok = true;
    for (std::size_t l : net.parametric_indices()) {
        const plcnn::DCNetPair pair = plcnn::build_dc_pair(net, l);
        double worst = 0.0;
        for (const auto& s : samples) {
            for (std::size_t c = 0; c < net.classes(); ++c) {
                worst = std::max(worst, plcnn::verify_dc(net, pair, s, c));
            }
        }
        const std::string kind = l == net.svm_index() ? "svm" : plcnn::to_string(net.layer(l).spec.kind);
        ok = ok && worst <= tol;
        report.push_back({{"layer", l}, {"kind", kind}, {"max_residual", worst}, {"pass", worst <= tol}});
        if (!a.json_out) {
            std::printf("layer %2zu %-12s max residual %.3e %s\n", l, kind.c_str(), worst, worst <= tol ? "ok" : "FAIL");
        }
    }
    if (a.json_out) {
        std::printf("%s\n", json{{"samples", samples.size()}, {"tolerance", tol}, {"layers", report}, {"pass", ok}}
                                .dump(2)
                                .c_str());
    }
    return ok ? 0 : kVerifyFailed;
}

struct EvalArgs {
    std::string config;
    std::string weights;
    std::string split = "train";
    bool json_out = false;
};

int cmd_eval(const EvalArgs& a) {
    const auto cfg = plcnn::load_config(a.config);
    plcnn::NetworkState net = plcnn::build_network(cfg);
    plcnn::load_weights(net, a.weights);
    const auto data = plcnn::load_data(cfg);
    const auto& ds = a.split == "val" ? data.val : data.train;
    if (ds.empty()) {
        throw plcnn::DataError("the " + a.split + " split is empty");
    }
    const auto e = plcnn::evaluate(net, ds.samples, cfg.lwsvm.lambda);
    if (a.json_out) {
        std::printf("%s\n", json{{"split", a.split},
                                 {"samples", ds.size()},
                                 {"accuracy", e.accuracy},
                                 {"objective", e.objective},
                                 {"mean_hinge", e.mean_hinge}}
                                .dump(2)
                                .c_str());
    } else {
        std::printf("%s: %zu samples, accuracy %.4f, objective %.6f, mean hinge %.6f\n", a.split.c_str(), ds.size(),
                    e.accuracy, e.objective, e.mean_hinge);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layerwise structured-SVM training for piecewise-linear CNNs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PLCNN_VERSION);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Baseline and/or LW-SVM training from a config file");
    t->add_option("--config", train.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    t->add_option("--solver", train.solver, "adagrad, adadelta, adam, or lwsvm (baseline then LW-SVM by default)")
        ->check(CLI::IsMember({"adagrad", "adadelta", "adam", "lwsvm"}));
    t->add_option("--pretrain-epochs", train.pretrain_epochs, "Baseline epochs before LW-SVM");
    t->add_option("--epochs", train.epochs, "Epochs of the selected solver (passes for lwsvm)");
    t->add_option("--seed", train.seed, "Overrides the config seed");
    t->add_option("--out", train.out, "Output directory")->capture_default_str();
    t->add_option("--init-weights", train.init_weights, "Start from a saved weight file")->check(CLI::ExistingFile);
    t->add_option("--threads", train.threads, "Oracle worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    t->add_flag("--wall-time", train.wall_time, "Record wall-clock seconds (breaks byte-identical reruns)");
    t->add_flag("-q,--quiet", train.quiet, "No progress output");

    std::vector<std::string> suites;
    std::uint64_t verify_seed = 0;
    std::string fault;
    auto* v = app.add_subcommand("verify", "Run the property suites");
    v->add_option("--suite", suites, "Suite to run (repeatable)")
        ->check(CLI::IsMember(plcnn::checks::suite_names()));
    v->add_option("--seed", verify_seed, "Offset added to every suite seed");
    v->add_option("--inject-fault", fault, "Test hook: corrupt split weights")->check(CLI::IsMember({"split-weights"}));

    DcArgs dc;
    auto* d = app.add_subcommand("verify-dc", "Max DC residual per parametric layer");
    d->add_option("--config", dc.config, "Experiment config; a random tiny net when omitted")
        ->check(CLI::ExistingFile);
    d->add_option("--weights", dc.weights, "Weight file for the config network")->check(CLI::ExistingFile);
    d->add_option("--samples", dc.samples, "Samples checked")->capture_default_str()->check(CLI::PositiveNumber);
    d->add_option("--seed", dc.seed, "Seed of the random tiny net");
    d->add_flag("--json", dc.json_out, "Print a JSON report");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Accuracy and objective of saved weights");
    e->add_option("--config", ev.config, "Experiment config")->required()->check(CLI::ExistingFile);
    e->add_option("--weights", ev.weights, "Weight file")->required()->check(CLI::ExistingFile);
    e->add_option("--split", ev.split, "train or val")->capture_default_str()->check(CLI::IsMember({"train", "val"}));
    e->add_flag("--json", ev.json_out, "Print JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& s) {
        return app.exit(s);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }

    try {
        if (t->parsed()) {
            return cmd_train(train);
        }
        if (v->parsed()) {
            return cmd_verify(suites, verify_seed, fault);
        }
        if (d->parsed()) {
            return cmd_verify_dc(dc);
        }
        return cmd_eval(ev);
    } catch (const plcnn::DataError& err) {
        std::fprintf(stderr, "data error: %s\n", err.what());
        return kData;
    } catch (const plcnn::Error& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return kUsage;
    } catch (const nlohmann::json::exception& err) {
        std::fprintf(stderr, "config error: %s\n", err.what());
        return kUsage;
    }
}
