#pragma once

#include "plcnn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace plcnn {

struct Shape3 {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t size() const { return channels * height * width; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

enum class LayerKind { Convolution, Dense, Relu, MaxPool, Affine };

std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    // Convolution
    std::size_t filters = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t padding = 0;
    // Convolution and MaxPool
    std::size_t stride = 1;
    // Dense
    std::size_t units = 0;
    // MaxPool
    std::size_t window_h = 0;
    std::size_t window_w = 0;
    // Affine: frozen per-channel scale and shift (a fixed batch-norm)
    std::vector<double> scale;
    std::vector<double> shift;
    // Convolution and Dense
    bool bias = true;

    static LayerSpec convolution(std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
                                 std::size_t stride = 1, std::size_t padding = 0, bool bias = true);
    static LayerSpec dense(std::size_t units, bool bias = true);
    static LayerSpec relu();
    static LayerSpec max_pool(std::size_t window_h, std::size_t window_w, std::size_t stride);
    static LayerSpec affine(std::vector<double> scale, std::vector<double> shift);
};

struct Layer {
    LayerSpec spec;
    Shape3 input;
    Shape3 output;
    // Convolution/Dense: [rows, fan_in + bias]; the bias is the last column and
    // acts on a constant-1 input extension.
    Tensor weight;

    bool parametric() const {
        return spec.kind == LayerKind::Convolution || spec.kind == LayerKind::Dense;
    }
    bool piecewise() const { return spec.kind == LayerKind::Relu || spec.kind == LayerKind::MaxPool; }
    bool has_bias() const { return parametric() && spec.bias; }
    // Receptive-field size, excluding the bias column.
    std::size_t fan_in() const;
    // Weight rows: filters or units.
    std::size_t rows() const;
    std::size_t columns() const { return fan_in() + (has_bias() ? 1 : 0); }
    // Number of pieces each PL unit chooses between.
    std::size_t arity() const;
};

// Recorded argmax choices of PL units. selections[k] is empty for layers that
// are not piecewise linear (or are not covered). ReLU: 1 = active, 0 = clamped.
// MaxPool: window offset ky * window_w + kx.
struct ActivationPath {
    std::vector<std::vector<std::uint16_t>> selections;

    friend bool operator==(const ActivationPath&, const ActivationPath&) = default;
};

struct LabeledSample {
    Tensor input;
    std::size_t label = 0;
};

// Task loss Delta(y_bar, y). Nonnegative with a zero diagonal.
class LossTable {
public:
    LossTable() = default;
    LossTable(std::size_t classes, std::vector<double> table);
    static LossTable zero_one(std::size_t classes);

    std::size_t classes() const { return classes_; }
    double operator()(std::size_t y_bar, std::size_t y) const { return table_[y * classes_ + y_bar]; }

private:
    std::size_t classes_ = 0;
    std::vector<double> table_; // row y (ground truth), column y_bar
};

class NetworkState {
public:
    NetworkState() = default;
    // Builds the layer stack with zero weights. Throws ShapeError on
    // incompatible layer geometry.
    NetworkState(Shape3 input, std::vector<LayerSpec> specs, std::size_t classes);

    const Shape3& input_shape() const { return input_; }
    std::size_t classes() const { return classes_; }
    // D, the dimension of the representation fed to the SVM head.
    std::size_t feature_dim() const;

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(std::size_t k) const { return layers_.at(k); }

    Tensor& svm_weights() { return svm_; }
    const Tensor& svm_weights() const { return svm_; }

    // Index used for the SVM head wherever a layer index is expected.
    std::size_t svm_index() const { return layers_.size(); }
    bool is_parametric(std::size_t index) const;
    Tensor& weights(std::size_t index);
    const Tensor& weights(std::size_t index) const;
    // Parametric layers in ascending order, the SVM head last.
    std::vector<std::size_t> parametric_indices() const;

    // He-normal weights, zero biases.
    void init_random(std::uint64_t seed);
    // Sum of squared Frobenius norms over every weight tensor, SVM included.
    double squared_weight_norm() const;

private:
    Shape3 input_;
    std::size_t classes_ = 0;
    std::vector<Layer> layers_;
    Tensor svm_;
};

struct ForwardResult {
    Tensor phi;
    ActivationPath path;
};

// Phi(x; W) with the selection of every PL unit recorded. ReLU inputs <= 0
// record "clamped"; max-pool ties go to the lowest window offset.
ForwardResult forward(const NetworkState& net, const Tensor& x);
// Evaluates the network with every PL unit frozen to the given selection.
Tensor replay(const NetworkState& net, const Tensor& x, const ActivationPath& path);
// Output of layers [0, end) for input x, i.e. z^{end-1}.
std::vector<double> forward_prefix(const NetworkState& net, std::size_t end, std::span<const double> x);

std::vector<double> class_scores(const NetworkState& net, std::span<const double> phi);
// Highest scoring class, lowest index on ties.
std::size_t predict(const NetworkState& net, const Tensor& x);

struct HingeValue {
    double value = 0.0;
    std::size_t argmax_class = 0;
};

// max over y_bar of Delta(y_bar, y) + scores[y_bar] - scores[y].
HingeValue hinge_upper_bound(std::span<const double> scores, std::size_t y, const LossTable& loss);

double sample_hinge(const NetworkState& net, const LabeledSample& sample, const LossTable& loss);

// (lambda/2) * sum_l ||W^l||_F^2 + mean hinge. Throws on empty data.
double objective(const NetworkState& net, std::span<const LabeledSample> data, double lambda,
                 const LossTable& loss);

// Mean hinge over the data, no regularizer.
double mean_hinge(const NetworkState& net, std::span<const LabeledSample> data, const LossTable& loss);

void check_input(const NetworkState& net, const Tensor& x);

} // namespace plcnn
