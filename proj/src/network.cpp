#include "plcnn/network.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/layer_ops.hpp"
#include "plcnn/random.hpp"

#include <algorithm>
#include <cmath>

namespace plcnn {

std::string to_string(const Shape3& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

std::string to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::Convolution:
        return "conv";
    case LayerKind::Dense:
        return "dense";
    case LayerKind::Relu:
        return "relu";
    case LayerKind::MaxPool:
        return "maxpool";
    case LayerKind::Affine:
        return "affine";
    }
    return "unknown";
}

LayerSpec LayerSpec::convolution(std::size_t filters, std::size_t kernel_h, std::size_t kernel_w,
                                 std::size_t stride, std::size_t padding, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::Convolution;
    s.filters = filters;
    s.kernel_h = kernel_h;
    s.kernel_w = kernel_w;
    s.stride = stride;
    s.padding = padding;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t units, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool(std::size_t window_h, std::size_t window_w, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.window_h = window_h;
    s.window_w = window_w;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::affine(std::vector<double> scale, std::vector<double> shift) {
    LayerSpec s;
    s.kind = LayerKind::Affine;
    s.scale = std::move(scale);
    s.shift = std::move(shift);
    return s;
}

std::size_t Layer::fan_in() const {
    switch (spec.kind) {
    case LayerKind::Convolution:
        return input.channels * spec.kernel_h * spec.kernel_w;
    case LayerKind::Dense:
        return input.size();
    default:
        return 0;
    }
}

std::size_t Layer::rows() const {
    switch (spec.kind) {
    case LayerKind::Convolution:
        return spec.filters;
    case LayerKind::Dense:
        return spec.units;
    default:
        return 0;
    }
}

std::size_t Layer::arity() const {
    switch (spec.kind) {
    case LayerKind::Relu:
        return 2;
    case LayerKind::MaxPool:
        return spec.window_h * spec.window_w;
    default:
        return 1;
    }
}

LossTable::LossTable(std::size_t classes, std::vector<double> table) : classes_(classes), table_(std::move(table)) {
    if (table_.size() != classes_ * classes_) {
        throw ConfigError("loss table must be classes x classes");
    }
    for (std::size_t y = 0; y < classes_; ++y) {
        for (std::size_t yb = 0; yb < classes_; ++yb) {
            const double v = table_[y * classes_ + yb];
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw ConfigError("loss table entries must be finite and nonnegative");
            }
            if (y == yb && v != 0.0) {
                throw ConfigError("loss table diagonal must be zero");
            }
        }
    }
}

LossTable LossTable::zero_one(std::size_t classes) {
    std::vector<double> t(classes * classes, 1.0);
    for (std::size_t y = 0; y < classes; ++y) {
        t[y * classes + y] = 0.0;
    }
    return LossTable(classes, std::move(t));
}

namespace {

Shape3 build_layer(Layer& layer, const Shape3& in) {
    layer.input = in;
    const LayerSpec& s = layer.spec;
    switch (s.kind) {
    case LayerKind::Convolution: {
        if (s.filters == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.stride == 0) {
            throw ShapeError("convolution needs positive filters, kernel and stride");
        }
        const std::size_t ph = in.height + 2 * s.padding;
        const std::size_t pw = in.width + 2 * s.padding;
        if (s.kernel_h > ph || s.kernel_w > pw) {
            throw ShapeError("convolution kernel larger than padded input " + to_string(in));
        }
        layer.output = {s.filters, (ph - s.kernel_h) / s.stride + 1, (pw - s.kernel_w) / s.stride + 1};
        layer.weight = Tensor({s.filters, layer.columns()});
        break;
    }
    case LayerKind::Dense:
        if (s.units == 0) {
            throw ShapeError("dense layer needs positive units");
        }
        layer.output = {s.units, 1, 1};
        layer.weight = Tensor({s.units, layer.columns()});
        break;
    case LayerKind::Relu:
        layer.output = in;
        break;
    case LayerKind::MaxPool: {
        if (s.window_h == 0 || s.window_w == 0 || s.stride == 0) {
            throw ShapeError("max-pool needs positive window and stride");
        }
        if (s.window_h > in.height || s.window_w > in.width) {
            throw ShapeError("max-pool window larger than input " + to_string(in));
        }
        if (s.window_h * s.window_w > 65535) {
            throw ShapeError("max-pool window too large");
        }
        layer.output = {in.channels, (in.height - s.window_h) / s.stride + 1, (in.width - s.window_w) / s.stride + 1};
        break;
    }
    case LayerKind::Affine:
        if (s.scale.size() != in.channels || s.shift.size() != in.channels) {
            throw ShapeError("affine layer needs one scale and shift per channel");
        }
        for (double a : s.scale) {
            if (a == 0.0 || !std::isfinite(a)) {
                throw ShapeError("affine scale entries must be finite and nonzero");
            }
        }
        layer.output = in;
        break;
    }
    return layer.output;
}

void check_finite(std::span<const double> v, const char* where) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value in ") + where);
        }
    }
}

// Runs layers [begin, end) on `cur`; records selections when `record` is set,
// replays them when `forced` is set.
std::vector<double> run_layers(const NetworkState& net, std::size_t begin, std::size_t end, std::vector<double> cur,
                               ActivationPath* record, const ActivationPath* forced) {
    const auto& layers = net.layers();
    std::vector<double> next;
    for (std::size_t k = begin; k < end; ++k) {
        const Layer& layer = layers[k];
        next.assign(layer.output.size(), 0.0);
        switch (layer.spec.kind) {
        case LayerKind::Convolution:
        case LayerKind::Dense:
            ops::linear_forward(layer, layer.weight.values(), cur, 1.0, next);
            break;
        case LayerKind::Relu:
        case LayerKind::MaxPool: {
            if (forced) {
                const auto& sel = forced->selections.at(k);
                if (sel.size() != layer.output.size()) {
                    throw ShapeError("activation path does not cover layer " + std::to_string(k));
                }
                if (layer.spec.kind == LayerKind::Relu) {
                    ops::relu_replay(cur, next, sel);
                } else {
                    ops::max_pool_replay(layer, cur, next, sel);
                }
            } else {
                std::vector<std::uint16_t> scratch;
                auto& sel = record ? record->selections[k] : scratch;
                sel.assign(layer.output.size(), 0);
                if (layer.spec.kind == LayerKind::Relu) {
                    ops::relu_forward(cur, next, sel);
                } else {
                    ops::max_pool_forward(layer, cur, next, sel);
                }
            }
            break;
        }
        case LayerKind::Affine:
            ops::affine_forward(layer, cur, next);
            break;
        }
        check_finite(next, "forward pass");
        cur.swap(next);
    }
    return cur;
}

} // namespace

NetworkState::NetworkState(Shape3 input, std::vector<LayerSpec> specs, std::size_t classes)
    : input_(input), classes_(classes) {
    if (input.size() == 0) {
        throw ShapeError("input shape must be positive");
    }
    if (classes < 2) {
        throw ShapeError("need at least two classes");
    }
    Shape3 cur = input;
    layers_.reserve(specs.size());
    for (auto& spec : specs) {
        Layer layer;
        layer.spec = std::move(spec);
        cur = build_layer(layer, cur);
        layers_.push_back(std::move(layer));
    }
    svm_ = Tensor({classes_, cur.size()});
}

std::size_t NetworkState::feature_dim() const { return layers_.empty() ? input_.size() : layers_.back().output.size(); }

bool NetworkState::is_parametric(std::size_t index) const {
    return index == svm_index() || (index < layers_.size() && layers_[index].parametric());
}

Tensor& NetworkState::weights(std::size_t index) {
    if (index == svm_index()) {
        return svm_;
    }
    if (!is_parametric(index)) {
        throw ShapeError("layer " + std::to_string(index) + " has no weights");
    }
    return layers_[index].weight;
}

const Tensor& NetworkState::weights(std::size_t index) const {
    return const_cast<NetworkState*>(this)->weights(index);
}

std::vector<std::size_t> NetworkState::parametric_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        if (layers_[k].parametric()) {
            out.push_back(k);
        }
    }
    out.push_back(svm_index());
    return out;
}

void NetworkState::init_random(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& layer : layers_) {
        if (!layer.parametric()) {
            continue;
        }
        const double std_dev = std::sqrt(2.0 / static_cast<double>(layer.fan_in()));
        const std::size_t cols = layer.columns();
        for (std::size_t r = 0; r < layer.rows(); ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const bool is_bias = layer.has_bias() && c + 1 == cols;
                layer.weight.at(r, c) = is_bias ? 0.0 : std_dev * rng.normal();
            }
        }
    }
    const double svm_std = std::sqrt(1.0 / static_cast<double>(feature_dim()));
    for (auto& v : svm_.storage()) {
        v = svm_std * rng.normal();
    }
}

double NetworkState::squared_weight_norm() const {
    double s = squared_norm(svm_);
    for (const auto& layer : layers_) {
        if (layer.parametric()) {
            s += squared_norm(layer.weight);
        }
    }
    return s;
}

void check_input(const NetworkState& net, const Tensor& x) {
    const Shape3& in = net.input_shape();
    bool ok = x.size() == in.size();
    if (ok && x.rank() == 3) {
        ok = x.shape()[0] == in.channels && x.shape()[1] == in.height && x.shape()[2] == in.width;
    }
    if (!ok) {
        throw ShapeError("input " + x.shape_string() + " does not match network input " + to_string(in));
    }
}

ForwardResult forward(const NetworkState& net, const Tensor& x) {
    check_input(net, x);
    ForwardResult r;
    r.path.selections.resize(net.layers().size());
    auto phi = run_layers(net, 0, net.layers().size(), x.storage(), &r.path, nullptr);
    const std::size_t d = phi.size();
    r.phi = Tensor({d}, std::move(phi));
    return r;
}

Tensor replay(const NetworkState& net, const Tensor& x, const ActivationPath& path) {
    check_input(net, x);
    if (path.selections.size() != net.layers().size()) {
        throw ShapeError("activation path has wrong layer count");
    }
    auto phi = run_layers(net, 0, net.layers().size(), x.storage(), nullptr, &path);
    const std::size_t d = phi.size();
    return Tensor({d}, std::move(phi));
}

std::vector<double> forward_prefix(const NetworkState& net, std::size_t end, std::span<const double> x) {
    if (end > net.layers().size()) {
        throw ShapeError("prefix end beyond network");
    }
    if (x.size() != net.input_shape().size()) {
        throw ShapeError("input size does not match network input");
    }
    return run_layers(net, 0, end, std::vector<double>(x.begin(), x.end()), nullptr, nullptr);
}

std::vector<double> class_scores(const NetworkState& net, std::span<const double> phi) {
    const std::size_t d = net.feature_dim();
    if (phi.size() != d) {
        throw ShapeError("representation size does not match SVM head");
    }
    std::vector<double> scores(net.classes());
    const auto& w = net.svm_weights();
    for (std::size_t c = 0; c < net.classes(); ++c) {
        scores[c] = dot(std::span<const double>(w.storage()).subspan(c * d, d), phi);
    }
    return scores;
}

std::size_t predict(const NetworkState& net, const Tensor& x) {
    const auto phi = forward(net, x).phi;
    const auto scores = class_scores(net, phi.values());
    return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

HingeValue hinge_upper_bound(std::span<const double> scores, std::size_t y, const LossTable& loss) {
    HingeValue best;
    best.value = -std::numeric_limits<double>::infinity();
    for (std::size_t yb = 0; yb < scores.size(); ++yb) {
        const double v = loss(yb, y) + scores[yb] - scores[y];
        if (v > best.value) {
            best.value = v;
            best.argmax_class = yb;
        }
    }
    return best;
}

double sample_hinge(const NetworkState& net, const LabeledSample& sample, const LossTable& loss) {
    const auto phi = forward(net, sample.input).phi;
    return hinge_upper_bound(class_scores(net, phi.values()), sample.label, loss).value;
}

double mean_hinge(const NetworkState& net, std::span<const LabeledSample> data, const LossTable& loss) {
    if (data.empty()) {
        throw DataError("objective over an empty dataset");
    }
    double total = 0.0;
    for (const auto& s : data) {
        total += sample_hinge(net, s, loss);
    }
    return total / static_cast<double>(data.size());
}

double objective(const NetworkState& net, std::span<const LabeledSample> data, double lambda,
                 const LossTable& loss) {
    const double hinge = mean_hinge(net, data, loss);
    return 0.5 * lambda * net.squared_weight_norm() + hinge;
}

} // namespace plcnn
