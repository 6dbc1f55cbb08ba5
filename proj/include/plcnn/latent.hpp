#pragma once

#include "plcnn/dc.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace plcnn {

// Which latent layers the loss-augmented oracle may choose freely. Tier t
// frees the t latent layers closest to the SVM head; the others replay the
// ground-truth path. Tier 0 searches over classes only.
struct SearchSpace {
    std::size_t free_tail = 0;

    static SearchSpace labels_only() { return {0}; }
    friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

// Subgradient of a stream with respect to W^l. Dense layers and the SVM head
// use the compact layout: only the gradient with respect to the layer output
// is kept and the layer input is recomputed from the sample handle.
struct JointFeature {
    enum class Layout { Full, Compact };

    Layout layout = Layout::Full;
    // Full: shaped like W^l, row-major.
    std::vector<double> full;
    // Compact: gradient with respect to u = W^l [z; 1].
    std::vector<double> out_grad;
    std::size_t sample = 0;
};

struct GroundTruthAnchor {
    ActivationPath h_star;
    // Concave stream linearized at the snapshot: <W, feature> + offset.
    JointFeature feature;
    double offset = 0.0;
    std::uint64_t snapshot = 0;
};

struct OracleResult {
    std::size_t y_hat = 0;
    ActivationPath h_hat;
    // Convex-stream piece selected by the oracle: <W, feature> + offset.
    JointFeature feature;
    double offset = 0.0;
    double loss = 0.0;
    // <w, feature - anchor.feature> + offset - anchor.offset.
    double score = 0.0;
    // Smallest distance to a kink seen by the forward pass.
    double min_margin = 0.0;
};

// One layer's latent structured SVM: the DC pair plus the per-sample inputs
// z^{l-1}_i of the free layer.
class LayerProblem {
public:
    // Input caching is on by default; when off, inputs are recomputed from the
    // samples on demand. `data` must outlive the problem.
    LayerProblem(const NetworkState& net, std::size_t layer, std::span<const LabeledSample> data,
                 const LossTable& loss, bool cache_inputs = true);

    const NetworkState& net() const { return *pair_.net; }
    const DCNetPair& pair() const { return pair_; }
    std::size_t layer() const { return pair_.target_layer; }
    std::size_t size() const { return data_.size(); }
    std::size_t label(std::size_t i) const { return data_[i].label; }
    const LabeledSample& sample(std::size_t i) const { return data_[i]; }
    // z^{l-1}_i, cached or recomputed. The span form only fills `scratch`
    // when inputs are not cached.
    std::vector<double> input(std::size_t i) const;
    std::span<const double> input(std::size_t i, std::vector<double>& scratch) const;

    bool compact() const { return compact_; }
    std::size_t weight_size() const { return weight_size_; }
    const std::vector<std::size_t>& weight_shape() const { return weight_shape_; }
    std::size_t latent_layer_count() const { return latent_count_; }
    SearchSpace full_space() const { return {latent_count_}; }
    // Default tier: classes only for convolutions and the SVM head, classes only
    // (escalated on demand) for dense layers.
    SearchSpace default_space() const { return SearchSpace::labels_only(); }

    // Builds a feature from a stream gradient.
    JointFeature make_feature(std::size_t i, const StreamGradient& g) const;
    // <w, f>
    double inner(const JointFeature& f, std::span<const double> w) const;
    // w += alpha * f
    void add_to(double alpha, const JointFeature& f, std::span<double> w) const;
    Tensor materialize(const JointFeature& f) const;
    double squared_norm(const JointFeature& f) const;
    JointFeature zero_feature(std::size_t i) const;

private:
    DCNetPair pair_;
    std::span<const LabeledSample> data_;
    std::vector<std::vector<double>> inputs_;
    // |[z_i; 1]|^2 for the compact layout.
    std::vector<double> input_norms_;
    bool compact_ = false;
    std::size_t weight_size_ = 0;
    std::vector<std::size_t> weight_shape_;
    std::size_t latent_count_ = 0;
    std::size_t columns_ = 0;
    bool bias_ = false;
};

// a - b; both must share a layout (and sample, when compact).
JointFeature subtract(const JointFeature& a, const JointFeature& b);
// Coefficients of a feature: `full` or `out_grad` depending on the layout.
std::vector<double>& coefficients(JointFeature& f);
const std::vector<double>& coefficients(const JointFeature& f);

std::uint64_t weight_fingerprint(std::span<const double> w);

// Ground-truth path of the concave stream at w_snapshot and its linearization.
GroundTruthAnchor impute_latent(const LayerProblem& problem, std::size_t i, std::span<const double> w_snapshot);

// argmax over (y_bar, h) in the search space of <w, Psi(y_bar, h)> + Delta(y_bar, y_i).
// Throws ConfigError on a search space larger than the layer's latent space.
OracleResult loss_augmented_oracle(const LayerProblem& problem, std::size_t i, const GroundTruthAnchor& anchor,
                                   std::span<const double> w, SearchSpace space);

// Gradient of Delta(y, y_i) + (W^svm_y - W^svm_{y_i}) . Phi with every latent
// unit frozen to h. Zero when y = y_i.
JointFeature feature_vector(const LayerProblem& problem, std::size_t i, std::size_t y, const ActivationPath& h);

} // namespace plcnn
