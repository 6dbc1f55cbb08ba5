#pragma once

#include "plcnn/bcfw.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace plcnn {

// Layerwise training settings. There is deliberately no learning rate: the
// only step size is the analytic one of the inner solver.
struct TrainConfig {
    double lambda = 1e-3;
    double mu = 1e-2;
    std::size_t batch_size = 1;
    // Relative improvement of the layer objective below which CCCP stops.
    double cccp_tolerance = 1e-4;
    // Dual-improvement threshold per inner epoch.
    double inner_stop = 0.01;
    std::size_t inner_max_epochs = 100;
    // CCCP iterations per layer visit. A pass gives every layer one iteration.
    std::size_t cccp_min_iters = 1;
    std::size_t cccp_max_iters = 1;
    std::size_t max_passes = 10;
    // Stop passes once validation accuracy fails to improve.
    bool stop_on_validation = true;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    // Inner solver: gap-based escalation for dense layers (unset = default)
    // and the descent requirement on the proximal objective. Without it a
    // solve can come back worse and is simply rejected.
    std::optional<bool> escalate;
    bool require_descent = false;
    double gap_tol = 0.01;
    std::size_t gap_samples = 256;
};

// One row of the metrics table. NaN marks a column that does not apply.
struct TrainRecord {
    std::string phase;
    std::size_t pass = 0;
    // Global layer index, the SVM head being layers().size(); -1 for none.
    long layer = -1;
    std::size_t epoch = 0;
    double objective = 0.0;
    double layer_objective = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double wall_s = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::function<void(const TrainRecord&)> on_record;

    void add(TrainRecord r);
};

struct Evaluation {
    double accuracy = 0.0;
    double objective = 0.0;
    double mean_hinge = 0.0;
};

// Accuracy of predict() and the full regularized objective. Throws on empty data.
Evaluation evaluate(const NetworkState& net, std::span<const LabeledSample> data, double lambda,
                    const LossTable& loss);
Evaluation evaluate(const NetworkState& net, std::span<const LabeledSample> data, double lambda);

// lambda/2 |W^l|^2 + mean hinge: the layer's own objective, other layers' norms dropped.
double layer_objective(const NetworkState& net, std::size_t l, std::span<const LabeledSample> data, double lambda,
                       const LossTable& loss);

struct LayerReport {
    std::size_t iterations = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    // Layer objective before the first iteration and after each accepted one.
    std::vector<double> layer_objectives;
    std::vector<SolveResult> solves;
};

struct LayerContext {
    std::span<const LabeledSample> val;
    TrainLog* log = nullptr;
    std::size_t pass = 0;
    LossTable loss;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

// CCCP on one parametric layer: impute the ground-truth paths, solve the
// proximal latent SVM, repeat. A solve that would raise the layer objective is
// rejected and ends the loop.
LayerReport optimize_layer(NetworkState& net, std::size_t l, const TrainConfig& cfg,
                           std::span<const LabeledSample> data, const LayerContext& ctx);

// Passes from the SVM head down to the first layer while validation accuracy improves.
void train_lwsvm(NetworkState& net, const TrainConfig& cfg, std::span<const LabeledSample> train,
                 std::span<const LabeledSample> val, TrainLog& log, const LossTable& loss);

} // namespace plcnn
