#include "plcnn/latent.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/layer_ops.hpp"

#include <algorithm>
#include <cstring>

namespace plcnn {

LayerProblem::LayerProblem(const NetworkState& net, std::size_t layer, std::span<const LabeledSample> data,
                           const LossTable& loss, bool cache_inputs)
    : pair_(build_dc_pair(net, layer, loss)), data_(data) {
    if (data.empty()) {
        throw DataError("layer problem over an empty dataset");
    }
    const Tensor& w = net.weights(layer);
    weight_size_ = w.size();
    weight_shape_ = w.shape();
    latent_count_ = pair_.latent_layers().size();
    if (pair_.targets_svm()) {
        compact_ = true;
        columns_ = net.feature_dim();
    } else {
        const Layer& l = net.layer(layer);
        compact_ = l.spec.kind == LayerKind::Dense;
        columns_ = l.columns();
        bias_ = l.has_bias();
    }
    if (cache_inputs) {
        inputs_.reserve(data.size());
        for (const auto& s : data) {
            if (s.label >= net.classes()) {
                throw DataError("label outside the class range");
            }
            inputs_.push_back(forward_prefix(net, std::min(layer, net.layers().size()), s.input.values()));
        }
    }
    if (compact_) {
        input_norms_.reserve(data.size());
        std::vector<double> scratch;
        for (std::size_t i = 0; i < data.size(); ++i) {
            input_norms_.push_back(plcnn::squared_norm(input(i, scratch)) + (bias_ ? 1.0 : 0.0));
        }
    }
}

std::span<const double> LayerProblem::input(std::size_t i, std::vector<double>& scratch) const {
    if (!inputs_.empty()) {
        return inputs_[i];
    }
    scratch = input(i);
    return scratch;
}

double LayerProblem::squared_norm(const JointFeature& f) const {
    if (f.layout == JointFeature::Layout::Full) {
        return plcnn::squared_norm(f.full);
    }
    return plcnn::squared_norm(f.out_grad) * input_norms_[f.sample];
}

JointFeature LayerProblem::zero_feature(std::size_t i) const {
    JointFeature f;
    f.sample = i;
    if (compact_) {
        f.layout = JointFeature::Layout::Compact;
        f.out_grad.assign(pair_.targets_svm() ? net().classes() : net().layer(layer()).output.size(), 0.0);
    } else {
        f.full.assign(weight_size_, 0.0);
    }
    return f;
}

std::vector<double>& coefficients(JointFeature& f) {
    return f.layout == JointFeature::Layout::Full ? f.full : f.out_grad;
}

const std::vector<double>& coefficients(const JointFeature& f) {
    return f.layout == JointFeature::Layout::Full ? f.full : f.out_grad;
}

std::vector<double> LayerProblem::input(std::size_t i) const {
    if (!inputs_.empty()) {
        return inputs_[i];
    }
    const auto& n = net();
    return forward_prefix(n, std::min(layer(), n.layers().size()), data_[i].input.values());
}

JointFeature LayerProblem::make_feature(std::size_t i, const StreamGradient& g) const {
    JointFeature f;
    f.sample = i;
    if (compact_) {
        f.layout = JointFeature::Layout::Compact;
        f.out_grad = g.grad_u;
        return f;
    }
    f.layout = JointFeature::Layout::Full;
    f.full.assign(weight_size_, 0.0);
    std::vector<double> scratch;
    ops::linear_weight_grad(net().layer(layer()), g.grad_u, input(i, scratch), f.full);
    return f;
}

double LayerProblem::inner(const JointFeature& f, std::span<const double> w) const {
    if (f.layout == JointFeature::Layout::Full) {
        return dot(f.full, w);
    }
    std::vector<double> scratch;
    const auto z = input(f.sample, scratch);
    double total = 0.0;
    for (std::size_t r = 0; r < f.out_grad.size(); ++r) {
        const double c = f.out_grad[r];
        if (c == 0.0) {
            continue;
        }
        const auto row = w.subspan(r * columns_, columns_);
        double u = dot(row.subspan(0, z.size()), z);
        if (bias_) {
            u += row[columns_ - 1];
        }
        total += c * u;
    }
    return total;
}

void LayerProblem::add_to(double alpha, const JointFeature& f, std::span<double> w) const {
    if (f.layout == JointFeature::Layout::Full) {
        axpy(alpha, f.full, w);
        return;
    }
    std::vector<double> scratch;
    const auto z = input(f.sample, scratch);
    for (std::size_t r = 0; r < f.out_grad.size(); ++r) {
        const double c = alpha * f.out_grad[r];
        if (c == 0.0) {
            continue;
        }
        auto row = w.subspan(r * columns_, columns_);
        axpy(c, z, row.subspan(0, z.size()));
        if (bias_) {
            row[columns_ - 1] += c;
        }
    }
}

Tensor LayerProblem::materialize(const JointFeature& f) const {
    Tensor t(weight_shape_);
    add_to(1.0, f, t.values());
    return t;
}

JointFeature subtract(const JointFeature& a, const JointFeature& b) {
    if (a.layout != b.layout || (a.layout == JointFeature::Layout::Compact && a.sample != b.sample)) {
        throw ShapeError("cannot subtract features with different layouts");
    }
    JointFeature d = a;
    auto& dst = a.layout == JointFeature::Layout::Full ? d.full : d.out_grad;
    const auto& src = a.layout == JointFeature::Layout::Full ? b.full : b.out_grad;
    if (dst.size() != src.size()) {
        throw ShapeError("feature size mismatch");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] -= src[k];
    }
    return d;
}

std::uint64_t weight_fingerprint(std::span<const double> w) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : w) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

GroundTruthAnchor impute_latent(const LayerProblem& problem, std::size_t i, std::span<const double> w_snapshot) {
    const std::size_t y = problem.label(i);
    std::vector<double> scratch;
    const auto z = problem.input(i, scratch);
    const auto f = dc_forward(problem.pair(), z, y, w_snapshot);
    GroundTruthAnchor a;
    a.h_star = f.path;
    const auto g = dc_backward(problem.pair(), y, y, a.h_star, Stream::Concave);
    a.feature = problem.make_feature(i, g);
    a.offset = g.offset;
    a.snapshot = weight_fingerprint(w_snapshot);
    return a;
}

OracleResult loss_augmented_oracle(const LayerProblem& problem, std::size_t i, const GroundTruthAnchor& anchor,
                                   std::span<const double> w, SearchSpace space) {
    if (space.free_tail > problem.latent_layer_count()) {
        throw ConfigError("search space tier " + std::to_string(space.free_tail) + " exceeds the " +
                          std::to_string(problem.latent_layer_count()) + " latent layers of layer " +
                          std::to_string(problem.layer()));
    }
    const std::size_t y = problem.label(i);
    std::vector<double> scratch;
    const auto z = problem.input(i, scratch);
    DCQuery query;
    query.forced = &anchor.h_star;
    query.free_tail = space.free_tail;
    const auto f = dc_forward(problem.pair(), z, y, w, query);

    OracleResult r;
    r.y_hat = f.y_bar;
    r.h_hat = f.path;
    r.loss = problem.pair().loss(f.y_bar, y);
    r.min_margin = f.min_margin;
    const auto g = dc_backward(problem.pair(), y, f.y_bar, f.path, Stream::Convex);
    r.feature = problem.make_feature(i, g);
    r.offset = g.offset;
    r.score = f.f_cvx - (problem.inner(anchor.feature, w) + anchor.offset);
    return r;
}

JointFeature feature_vector(const LayerProblem& problem, std::size_t i, std::size_t y, const ActivationPath& h) {
    const std::size_t yi = problem.label(i);
    const auto gc = dc_backward(problem.pair(), yi, y, h, Stream::Convex);
    const auto gv = dc_backward(problem.pair(), yi, y, h, Stream::Concave);
    StreamGradient g;
    g.grad_u.resize(gc.grad_u.size());
    for (std::size_t k = 0; k < g.grad_u.size(); ++k) {
        g.grad_u[k] = gc.grad_u[k] - gv.grad_u[k];
    }
    return problem.make_feature(i, g);
}

} // namespace plcnn
