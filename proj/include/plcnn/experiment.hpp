#pragma once

// The train pipeline shared by the CLI and the acceptance runner: an optional
// baseline phase followed by optional LW-SVM passes, all logged into one table.

#include "plcnn/config.hpp"

#include <functional>
#include <optional>

namespace plcnn {

struct Phases {
    // Baseline epochs with cfg.sgd; 0 skips the phase.
    std::size_t baseline_epochs = 0;
    // LW-SVM passes with cfg.lwsvm; 0 skips the phase.
    std::size_t lwsvm_passes = 0;
    std::size_t threads = 1;
};

// Phases taken straight from the config.
Phases config_phases(const ExperimentConfig& cfg);

struct ExperimentResult {
    NetworkState net;
    TrainLog log;
    // Regularized objective (with the LW-SVM lambda) and accuracy on the
    // training set after the baseline phase and at the end.
    Evaluation after_baseline;
    Evaluation final;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LoadedData& data, const Phases& phases,
                                std::optional<NetworkState> start = std::nullopt,
                                std::function<void(const TrainRecord&)> on_record = {});

} // namespace plcnn
