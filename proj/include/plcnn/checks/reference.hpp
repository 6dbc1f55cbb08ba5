#pragma once

// Independent reference implementations used as oracles by the test suites.
// Nothing here calls into the optimized kernels or the DC engine: layers are
// evaluated with plain index arithmetic straight from their definitions.

#include "plcnn/network.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace plcnn::ref {

// One layer by direct summation. `bias_input` multiplies the bias column.
std::vector<double> linear(const Layer& layer, std::span<const double> w, std::span<const double> in,
                           double bias_input = 1.0);
std::vector<double> layer_value(const Layer& layer, std::span<const double> in);

// Output of layers [0, end).
std::vector<double> prefix(const NetworkState& net, std::size_t end, std::span<const double> x);
std::vector<double> forward(const NetworkState& net, std::span<const double> x);
std::vector<double> scores(const NetworkState& net, std::span<const double> phi);
double hinge(const NetworkState& net, const LabeledSample& s, const LossTable& loss);
double objective(const NetworkState& net, std::span<const LabeledSample> data, double lambda, const LossTable& loss);

// Latent layers (ReLU, MaxPool) downstream of layer l, in order.
std::vector<std::size_t> latent_layers(const NetworkState& net, std::size_t l);

// Convex and concave stream values of the DC pair for layer l with class
// y_bar and every downstream PL unit frozen to `h`. `z` is the input of
// layer l and `w` its weights.
struct Streams {
    double cvx = 0.0;
    double ccv = 0.0;
};
Streams frozen_streams(const NetworkState& net, std::size_t l, std::span<const double> w, std::span<const double> z,
                       std::size_t y, std::size_t y_bar, const ActivationPath& h, const LossTable& loss);

// Every path over the last `free_tail` latent layers; the other latent layers
// copy `base`. Throws ConfigError beyond `limit` paths.
std::vector<ActivationPath> enumerate_paths(const NetworkState& net, std::size_t l, const ActivationPath& base,
                                            std::size_t free_tail, std::size_t limit = 1u << 16);

struct Enumeration {
    std::size_t y_bar = 0;
    ActivationPath h;
    double value = 0.0;
    // Candidates attaining the maximum (within 1e-12 relative).
    std::size_t maximizers = 0;
};

// max over (y_bar, h) of the frozen convex stream; the first maximum in
// (class, path) enumeration order wins.
Enumeration exhaustive_oracle(const NetworkState& net, std::size_t l, std::span<const double> w,
                              std::span<const double> z, std::size_t y, const ActivationPath& base,
                              std::size_t free_tail, const LossTable& loss);
// max over h of the frozen concave stream at the ground-truth class.
Enumeration exhaustive_impute(const NetworkState& net, std::size_t l, std::span<const double> w,
                              std::span<const double> z, std::size_t y, const LossTable& loss);

// Explicit constraint set of the convex sub-problem:
//   min_w lambda/2 |w|^2 + mu/2 |w - w0|^2 + 1/N sum_i max_k (psi_ik . w + b_ik)
struct Constraint {
    std::vector<double> psi;
    double b = 0.0;
    std::size_t y_bar = 0;
};
struct ExplicitProblem {
    std::size_t dim = 0;
    std::vector<std::vector<Constraint>> samples;
};

// Constraint k of sample i is the frozen convex stream for candidate k minus
// the frozen concave stream at anchors[i], both affine in w and read off by
// evaluating at 0 and at the unit vectors.
ExplicitProblem extract_constraints(const NetworkState& net, std::size_t l, std::span<const LabeledSample> data,
                                    const std::vector<ActivationPath>& anchors, std::size_t free_tail,
                                    const LossTable& loss);

double explicit_primal(const ExplicitProblem& p, std::span<const double> w, std::span<const double> w0, double lambda,
                       double mu);

struct QpSolution {
    std::vector<double> w;
    double primal = 0.0;
    double dual = 0.0;
    std::size_t iterations = 0;
};

// Interior-point solve of the epigraph QP. `dual` is the dual objective at
// the renormalized multipliers, a certified lower bound on the optimum.
QpSolution solve_explicit(const ExplicitProblem& p, std::span<const double> w0, double lambda, double mu,
                          std::size_t max_iters = 100);

// Textbook block-coordinate Frank-Wolfe for the multiclass SVM
//   min_w lambda/2 |w|^2 + 1/N sum_i max_y (Delta(y, y_i) + (w_y - w_{y_i}) . phi_i)
// with w stored as [classes, D]. Each epoch visits a fresh seeded shuffle.
struct BcfwTrace {
    std::vector<double> gammas;
    std::vector<double> w;
};
BcfwTrace standard_bcfw(const std::vector<std::vector<double>>& phi, const std::vector<std::size_t>& labels,
                        std::size_t classes, const LossTable& loss, double lambda, std::size_t epochs,
                        std::uint64_t seed);

// Argmax of a unimodal f on [a, b].
double golden_section_max(const std::function<double(double)>& f, double a, double b, double tol = 1e-12);

// Projection of v onto the probability simplex.
void project_simplex(std::span<double> v);

} // namespace plcnn::ref
