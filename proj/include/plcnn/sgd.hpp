#pragma once

#include "plcnn/cccp.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace plcnn {

enum class SgdSolver { Adagrad, Adadelta, Adam };
enum class LossKind { Hinge, SoftmaxCrossEntropy };

std::string to_string(SgdSolver s);
SgdSolver parse_solver(const std::string& name);
std::string to_string(LossKind k);
LossKind parse_loss(const std::string& name);

struct SgdConfig {
    SgdSolver solver = SgdSolver::Adam;
    double eta = 1e-3;
    double lambda = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    // Adadelta decay; Adam moments; shared epsilon per solver.
    double rho = 0.95;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossKind loss = LossKind::Hinge;
    std::uint64_t seed = 0;

    // Learning rate and regularization tuned for MNIST; standard moment constants.
    static SgdConfig mnist_defaults(SgdSolver solver);
};

// Indexed like NetworkState::weights: one tensor per global layer (empty for
// layers without weights), the SVM head last.
struct Gradients {
    std::vector<Tensor> tensors;
    // Batch objective at the current weights.
    double value = 0.0;
};

// Subgradient of lambda/2 sum |W|^2 + mean loss over the batch, following the
// same kink conventions as forward(). An empty batch gives the regularizer only.
Gradients backprop_subgradient(const NetworkState& net, std::span<const LabeledSample> batch, double lambda,
                               LossKind loss, const LossTable& table);

// Per-tensor optimizer state.
class SgdOptimizer {
public:
    SgdOptimizer(const SgdConfig& cfg, const NetworkState& net);
    void step(NetworkState& net, const Gradients& g);
    std::size_t steps() const { return t_; }

private:
    SgdConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> a_;
    std::vector<std::vector<double>> b_;
};

// Runs cfg.epochs epochs of mini-batch updates and logs one row per epoch
// (objective is always the hinge objective, whatever the training loss).
void sgd_train(NetworkState& net, const SgdConfig& cfg, std::span<const LabeledSample> train,
               std::span<const LabeledSample> val, TrainLog& log, const LossTable& table);

} // namespace plcnn
