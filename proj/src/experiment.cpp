#include "plcnn/experiment.hpp"

namespace plcnn {

Phases config_phases(const ExperimentConfig& cfg) {
    Phases p;
    p.baseline_epochs = cfg.sgd.epochs;
    p.lwsvm_passes = cfg.lwsvm.max_passes;
    p.threads = cfg.lwsvm.threads;
    return p;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LoadedData& data, const Phases& phases,
                                std::optional<NetworkState> start,
                                std::function<void(const TrainRecord&)> on_record) {
    ExperimentResult r{start ? std::move(*start) : build_network(cfg), {}, {}, {}};
    r.log.on_record = std::move(on_record);
    const LossTable loss = LossTable::zero_one(cfg.classes);
    if (phases.baseline_epochs > 0) {
        SgdConfig sgd = cfg.sgd;
        sgd.epochs = phases.baseline_epochs;
        sgd_train(r.net, sgd, data.train.samples, data.val.samples, r.log, loss);
    }
    r.after_baseline = evaluate(r.net, data.train.samples, cfg.lwsvm.lambda, loss);
    if (phases.lwsvm_passes > 0) {
        TrainConfig t = cfg.lwsvm;
        t.max_passes = phases.lwsvm_passes;
        t.threads = phases.threads;
        train_lwsvm(r.net, t, data.train.samples, data.val.samples, r.log, loss);
    }
    r.final = evaluate(r.net, data.train.samples, cfg.lwsvm.lambda, loss);
    r.log.on_record = nullptr;
    return r;
}

} // namespace plcnn
