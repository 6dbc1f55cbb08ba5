#pragma once

#include "plcnn/latent.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace plcnn {

// Dual state of
//   min_w  lambda/2 |w|^2 + mu/2 |w - w0|^2 + 1/N sum_i max_{y,h} (<w, psi_i(y,h)> + b_i(y,h))
// with psi_i = Psi_cvx(y, h) - Psi_ccv(h*_i) and b_i = Delta + c(y, h) - c*_i.
// Block i holds w_i = -A_(i) alpha_(i) and l_i = b_(i)^T alpha_(i), so
// w = rho w0 + sum_i w_i and l = sum_i l_i.
struct DualState {
    std::vector<double> w;
    std::vector<double> w0;
    std::vector<JointFeature> blocks;
    std::vector<double> block_loss;
    double l = 0.0;
    double lambda = 0.0;
    double mu = 0.0;
    double rho = 0.0;
    double dual = 0.0;
    std::size_t n = 0;
};

struct StepRecord {
    std::size_t sample = 0;
    double gamma = 0.0;
    double dual_increase = 0.0;
};

// Every block starts at its ground-truth vertex: zero features and losses,
// w = rho w0, dual 0. Throws ConfigError when lambda <= 0 or mu < 0.
DualState init_dual(const LayerProblem& problem, std::span<const double> w0, double lambda, double mu);

// -(lambda+mu)/2 |w - rho w0|^2 + mu w0^T (rho w0 - w) + l
double dual_objective(std::span<const double> w, std::span<const double> w0, double l, double lambda, double mu);

// Dual recomputed from the stored blocks rather than the running w and l.
double dual_from_scratch(const LayerProblem& problem, const DualState& state);
// rho w0 + sum_i w_i.
std::vector<double> reconstruct_primal(const LayerProblem& problem, const DualState& state);

// Block i's corner from an oracle answer: w_s = -psi / (N (lambda + mu)), l_s = b / N.
struct Corner {
    JointFeature w_s;
    double l_s = 0.0;
};
Corner corner_from_oracle(const DualState& state, const GroundTruthAnchor& anchor, const OracleResult& oracle);

// clip(((w_i - w_s)^T w - (l_i - l_s)/(lambda+mu)) / |w_i - w_s|^2, 0, 1). When w_s = w_i the dual is
// linear in the step: 1 if l_s > l_i, else 0.
double optimal_step(const LayerProblem& problem, const DualState& state, std::size_t i, const Corner& corner);

// Moves block i towards `corner` with the optimal step and updates w, l and the dual.
StepRecord apply_step(const LayerProblem& problem, DualState& state, std::size_t i, const Corner& corner);

// Oracle call at the current w followed by apply_step.
StepRecord block_step(const LayerProblem& problem, DualState& state, std::size_t i,
                      const std::vector<GroundTruthAnchor>& anchors, SearchSpace space);

// Frank-Wolfe gap of block i at corner: (lambda+mu)(w_i - w_s)^T w - (l_i - l_s). Sums to primal - dual.
double block_gap(const LayerProblem& problem, const DualState& state, std::size_t i, const Corner& corner);

// lambda/2 |w|^2 + mu/2 |w - w0|^2 + mean hinge over the given search space.
double proximal_objective(const LayerProblem& problem, const std::vector<GroundTruthAnchor>& anchors,
                          std::span<const double> w, std::span<const double> w0, double lambda, double mu,
                          SearchSpace space);

struct EpochRecord {
    std::size_t epoch = 0;
    double dual = 0.0;
    // Sampled estimate of the factorized primal, the gap against the full
    // latent space, and the tier in use.
    double primal_estimate = 0.0;
    double gap_estimate = 0.0;
    std::size_t tier = 0;
    std::size_t steps = 0;
    std::size_t nonzero_steps = 0;
    double mean_gamma = 0.0;
    double dual_drift = 0.0;
    bool escalated = false;
};

struct SolverConfig {
    double lambda = 1e-3;
    double mu = 1e-2;
    // Stop when an epoch raises the dual by at most inner_stop * |dual|.
    double inner_stop = 0.01;
    std::size_t min_epochs = 1;
    std::size_t max_epochs = 100;
    // 1: plain BCFW. Larger: oracles for a batch run at a frozen w.
    std::size_t batch_size = 1;
    std::size_t threads = 1;
    std::uint64_t seed = 0;
    // Starting tier; defaults to the layer's default space.
    std::optional<SearchSpace> start_space;
    // Gap-triggered escalation; defaults to on for dense layers, off otherwise.
    std::optional<bool> escalate;
    double gap_tol = 0.01;
    std::size_t gap_samples = 256;
    // Off: the full tier ends on the dual criterion alone. On: it also waits
    // for the gap estimate to drop below gap_tol.
    bool require_gap = false;
    // Keep going (escalating when allowed) until the full-space proximal
    // objective is no worse than at w0.
    bool require_descent = false;
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct SolveResult {
    Tensor w;
    std::vector<EpochRecord> epochs;
    SearchSpace final_space;
    std::size_t steps = 0;
    double dual = 0.0;
    // Full-space proximal objective at w0 and at the result (when evaluated).
    std::optional<double> start_objective;
    std::optional<double> final_objective;
};

SolveResult solve_layer_svm(const LayerProblem& problem, const std::vector<GroundTruthAnchor>& anchors,
                            std::span<const double> w0, const SolverConfig& cfg);

} // namespace plcnn
