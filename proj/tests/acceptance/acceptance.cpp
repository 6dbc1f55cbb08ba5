// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The MNIST experiment runs twice; the second run doubles as the determinism check.

#include "plcnn/checks/suites.hpp"
#include "plcnn/config.hpp"
#include "plcnn/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using namespace plcnn;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Line {
    int id;
    checks::CheckResult r;
};

void print(const Line& l) {
    std::printf("[%s] %2d %-22s %s\n", l.r.passed ? "PASS" : "FAIL", l.id, l.r.name.c_str(), l.r.detail.c_str());
    std::fflush(stdout);
}

struct MnistRun {
    ExperimentResult result;
    double seconds = 0.0;
    fs::path metrics;
};

MnistRun run_mnist(const ExperimentConfig& cfg, const LoadedData& data, const fs::path& out) {
    MnistRun m;
    const auto t0 = std::chrono::steady_clock::now();
    m.result = run_experiment(cfg, data, config_phases(cfg));
    m.seconds = seconds_since(t0);
    fs::create_directories(out);
    m.metrics = out / "metrics.csv";
    write_metrics_csv(m.result.log, m.metrics.string(), false);
    return m;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string config = PLCNN_MNIST_CONFIG;
    std::string out = (fs::temp_directory_path() / "plcnn_acceptance").string();
    std::vector<int> only;
    app.add_option("--config", config, "MNIST experiment config")->check(CLI::ExistingFile);
    app.add_option("--out", out, "Directory for the metrics of the MNIST runs");
    app.add_option("--criterion", only, "Run only these criteria (1-11)")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const std::set<int> selected(only.begin(), only.end());
    const auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };
    bool all = true;
    const auto report = [&](int id, checks::CheckResult r) {
        all = all && r.passed;
        print({id, std::move(r)});
    };

    if (wanted(1)) {
        report(1, checks::check_dc_equality({}));
    }
    if (wanted(2)) {
        report(2, checks::check_cccp_monotonicity({}));
    }
    if (wanted(3)) {
        report(3, checks::check_global_monotonicity({}));
    }
    if (wanted(4)) {
        report(4, checks::check_dual_monotonicity({}));
    }
    if (wanted(5)) {
        report(5, checks::check_step_size({}));
    }
    if (wanted(6)) {
        report(6, checks::check_warm_start({}));
    }
    if (wanted(7)) {
        report(7, checks::check_oracle({}));
    }
    if (wanted(8)) {
        report(8, checks::check_features({}));
    }

    // Cheap, so computed up front and printed in order after 9.
    std::optional<checks::CheckResult> reduction;
    if (wanted(10)) {
        reduction = checks::check_constraint_reduction({}).result;
    }
    if (!wanted(9) && !wanted(11) && reduction) {
        report(10, *reduction);
    }

    if (wanted(9) || wanted(11)) {
        const ExperimentConfig cfg = load_config(config);
        const LoadedData data = load_data(cfg);
        const MnistRun first = run_mnist(cfg, data, fs::path(out) / "run1");
        if (wanted(9)) {
            const auto& before = first.result.after_baseline;
            const auto& after = first.result.final;
            checks::CheckResult r;
            r.name = "mnist-lwsvm";
            r.passed = after.objective < before.objective && after.accuracy >= before.accuracy &&
                       first.seconds < 1800.0;
            char buf[512];
            std::snprintf(buf, sizeof buf,
                          "%zu train / %zu val, %zu Adam epochs then %zu passes: objective %.6f -> %.6f, train "
                          "accuracy %.4f -> %.4f, %.1f s (limit 1800 s)",
                          data.train.size(), data.val.size(), cfg.sgd.epochs, cfg.lwsvm.max_passes, before.objective,
                          after.objective, before.accuracy, after.accuracy, first.seconds);
            r.detail = buf;
            report(9, std::move(r));
        }
        if (reduction) {
            report(10, *reduction);
        }
        if (wanted(11)) {
            // Same seed, fresh load of config and data.
            const ExperimentConfig cfg2 = load_config(config);
            const LoadedData data2 = load_data(cfg2);
            const MnistRun second = run_mnist(cfg2, data2, fs::path(out) / "run2");
            const std::string a = slurp(first.metrics);
            const std::string b = slurp(second.metrics);
            checks::CheckResult r;
            r.name = "determinism";
            r.passed = !a.empty() && a == b;
            char buf[512];
            std::snprintf(buf, sizeof buf, "two runs with seed %llu: metrics files of %zu and %zu bytes are %s",
                          static_cast<unsigned long long>(cfg.seed), a.size(), b.size(),
                          a == b ? "byte-identical" : "different");
            r.detail = buf;
            report(11, std::move(r));
        }
    }

    return all ? 0 : 1;
}
