#pragma once

#include "plcnn/network.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace plcnn {

// W = w_plus - w_minus with both parts nonnegative.
struct SplitWeights {
    Tensor w_plus;
    Tensor w_minus;
};

SplitWeights split_linear(const Tensor& w);

// An activation written as cvx - ccv, both convex in the free layer's weights.
struct DCValue {
    std::vector<double> cvx;
    std::vector<double> ccv;

    std::vector<double> value() const;
};

// out.cvx = W+ [cvx; 1] + W- [ccv; 0], out.ccv = W- [cvx; 1] + W+ [ccv; 0].
// The positive part of the bias lands in cvx, the negative part in ccv.
DCValue dc_linear(const Layer& layer, const SplitWeights& sw, const DCValue& u);

// cvx = max(cvx, ccv), ccv unchanged. Writes 1 (active) / 0 (clamped) into
// `selection` when it is non-empty; ties are clamped.
DCValue dc_relu(const DCValue& u, std::span<std::uint16_t> selection = {});

struct DCMax {
    double cvx = 0.0;
    double ccv = 0.0;
    std::size_t selected = 0;
};

// Point-wise maximum over K inputs: cvx = max_k (cvx_k + sum_{i != k} ccv_i),
// ccv = sum_k ccv_k. Lowest index wins ties. Throws ShapeError on K = 0.
DCMax dc_max(std::span<const double> cvx, std::span<const double> ccv);

DCValue dc_maxpool(const Layer& layer, const DCValue& u, std::span<std::uint16_t> selection = {});

// Frozen per-channel scale split like a linear map; the shift goes to cvx.
DCValue dc_affine(const Layer& layer, const SplitWeights& scale, const DCValue& u);

struct DCStage {
    std::size_t layer = 0;
    // Split weights for Convolution/Dense, split scale for Affine.
    SplitWeights split;
};

// The two interleaved networks for one free layer. Every max node lives in the
// convex stream; the concave stream only mixes those nodes with nonnegative
// weights. A single ActivationPath (indexed by global layer) therefore
// describes the selections of both streams.
struct DCNetPair {
    const NetworkState* net = nullptr;
    std::size_t target_layer = 0;
    // Frozen layers after the target, in order.
    std::vector<DCStage> stages;
    // Empty when the target is the SVM head.
    SplitWeights svm_split;
    LossTable loss;

    bool targets_svm() const { return target_layer == net->svm_index(); }
    // Global indices of the downstream PL layers (ReLU/MaxPool), in order.
    std::vector<std::size_t> latent_layers() const;
    // Readable stage sequence, e.g. {"conv*", "relu", "maxpool", "dense", "svm"};
    // the free layer is marked with '*'.
    std::vector<std::string> stage_names() const;
};

// Throws ShapeError when l is out of range or names a non-parametric layer.
DCNetPair build_dc_pair(const NetworkState& net, std::size_t l);
DCNetPair build_dc_pair(const NetworkState& net, std::size_t l, LossTable loss);

struct DCQuery {
    // Evaluate the convex stream at this class instead of maximizing over classes.
    std::optional<std::size_t> fixed_class;
    // Selections used for latent layers that are not maximized.
    const ActivationPath* forced = nullptr;
    // Number of latent layers, counted from the SVM end, that are maximized.
    // The rest replay `forced`. Ignored (everything maximized) when `forced` is null.
    std::size_t free_tail = std::numeric_limits<std::size_t>::max();
};

struct DCForward {
    double f_cvx = 0.0;
    double f_ccv = 0.0;
    std::size_t y_bar = 0;
    ActivationPath path;
    // Smallest gap between the chosen piece and its runner-up over every
    // maximized node, in pre-activation units. Infinite when nothing was maximized.
    double min_margin = std::numeric_limits<double>::infinity();
};

// Evaluates both streams for input z = z^{l-1} (the output of the frozen
// prefix), ground truth y and free weights w shaped like W^l.
DCForward dc_forward(const DCNetPair& pair, std::span<const double> z, std::size_t y, std::span<const double> w,
                     const DCQuery& query = {});

enum class Stream { Convex, Concave };

// Gradient of a path-and-class-frozen stream with respect to the free layer's
// output u = W^l [z; 1], and the constant the frozen layers add (loss term,
// downstream biases and shifts). With the path frozen the stream equals
// <grad_u, u> + offset.
struct StreamGradient {
    std::vector<double> grad_u;
    double offset = 0.0;
};

StreamGradient dc_backward(const DCNetPair& pair, std::size_t y, std::size_t y_bar, const ActivationPath& path,
                           Stream stream);

// |(f_cvx - f_ccv) - hinge term| / (1 + |hinge term|) with the convex stream
// evaluated at y_bar and the hinge term from the plain network.
double verify_dc(const NetworkState& net, const DCNetPair& pair, const LabeledSample& sample, std::size_t y_bar);

} // namespace plcnn
