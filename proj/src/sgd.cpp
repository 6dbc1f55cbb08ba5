#include "plcnn/sgd.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/layer_ops.hpp"
#include "plcnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace plcnn {

std::string to_string(SgdSolver s) {
    switch (s) {
    case SgdSolver::Adagrad:
        return "adagrad";
    case SgdSolver::Adadelta:
        return "adadelta";
    case SgdSolver::Adam:
        return "adam";
    }
    return "unknown";
}

SgdSolver parse_solver(const std::string& name) {
    if (name == "adagrad") {
        return SgdSolver::Adagrad;
    }
    if (name == "adadelta") {
        return SgdSolver::Adadelta;
    }
    if (name == "adam") {
        return SgdSolver::Adam;
    }
    throw ConfigError("unknown SGD solver '" + name + "'");
}

std::string to_string(LossKind k) { return k == LossKind::Hinge ? "hinge" : "softmax"; }

LossKind parse_loss(const std::string& name) {
    if (name == "hinge" || name == "svm") {
        return LossKind::Hinge;
    }
    if (name == "softmax" || name == "cross-entropy" || name == "sce") {
        return LossKind::SoftmaxCrossEntropy;
    }
    throw ConfigError("unknown loss '" + name + "'");
}

SgdConfig SgdConfig::mnist_defaults(SgdSolver solver) {
    SgdConfig c;
    c.solver = solver;
    c.lambda = 1e-3;
    switch (solver) {
    case SgdSolver::Adagrad:
        c.eta = 0.01;
        c.epsilon = 1e-8;
        break;
    case SgdSolver::Adadelta:
        c.eta = 1.0;
        c.rho = 0.95;
        c.epsilon = 1e-6;
        break;
    case SgdSolver::Adam:
        c.eta = 0.001;
        c.beta1 = 0.9;
        c.beta2 = 0.999;
        c.epsilon = 1e-8;
        break;
    }
    return c;
}

Gradients backprop_subgradient(const NetworkState& net, std::span<const LabeledSample> batch, double lambda,
                               LossKind loss, const LossTable& table) {
    const auto& layers = net.layers();
    Gradients g;
    g.tensors.resize(layers.size() + 1);
    for (std::size_t k = 0; k <= layers.size(); ++k) {
        if (net.is_parametric(k)) {
            g.tensors[k] = Tensor(net.weights(k).shape());
        }
    }
    const std::size_t d = net.feature_dim();
    const double inv_n = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());

    std::vector<std::vector<double>> acts(layers.size() + 1);
    for (const auto& s : batch) {
        check_input(net, s.input);
        // Forward with every layer input kept.
        acts[0] = s.input.storage();
        ActivationPath path;
        path.selections.resize(layers.size());
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const Layer& layer = layers[k];
            std::vector<double> out(layer.output.size(), 0.0);
            switch (layer.spec.kind) {
            case LayerKind::Convolution:
            case LayerKind::Dense:
                ops::linear_forward(layer, layer.weight.values(), acts[k], 1.0, out);
                break;
            case LayerKind::Relu:
                path.selections[k].assign(out.size(), 0);
                ops::relu_forward(acts[k], out, path.selections[k]);
                break;
            case LayerKind::MaxPool:
                path.selections[k].assign(out.size(), 0);
                ops::max_pool_forward(layer, acts[k], out, path.selections[k]);
                break;
            case LayerKind::Affine:
                ops::affine_forward(layer, acts[k], out);
                break;
            }
            acts[k + 1] = std::move(out);
        }
        const auto& phi = acts[layers.size()];
        const auto scores = class_scores(net, phi);

        // d loss / d scores
        std::vector<double> ds(net.classes(), 0.0);
        if (loss == LossKind::Hinge) {
            const auto h = hinge_upper_bound(scores, s.label, table);
            g.value += h.value * inv_n;
            if (h.argmax_class != s.label) {
                ds[h.argmax_class] += 1.0;
                ds[s.label] -= 1.0;
            }
        } else {
            const double m = *std::max_element(scores.begin(), scores.end());
            double z = 0.0;
            for (double v : scores) {
                z += std::exp(v - m);
            }
            g.value += (std::log(z) + m - scores[s.label]) * inv_n;
            for (std::size_t c = 0; c < scores.size(); ++c) {
                ds[c] = std::exp(scores[c] - m) / z;
            }
            ds[s.label] -= 1.0;
        }

        std::vector<double> grad(d, 0.0);
        auto& gsvm = g.tensors[layers.size()].storage();
        const auto& wsvm = net.svm_weights().storage();
        for (std::size_t c = 0; c < ds.size(); ++c) {
            if (ds[c] == 0.0) {
                continue;
            }
            axpy(ds[c] * inv_n, phi, std::span<double>(gsvm).subspan(c * d, d));
            axpy(ds[c], std::span<const double>(wsvm).subspan(c * d, d), grad);
        }
        for (std::size_t k = layers.size(); k-- > 0;) {
            const Layer& layer = layers[k];
            std::vector<double> gin(layer.input.size(), 0.0);
            switch (layer.spec.kind) {
            case LayerKind::Convolution:
            case LayerKind::Dense: {
                std::vector<double> scaled = grad;
                scale(inv_n, scaled);
                ops::linear_weight_grad(layer, scaled, acts[k], g.tensors[k].values());
                if (k > 0) {
                    ops::linear_backward(layer, layer.weight.values(), grad, gin);
                }
                break;
            }
            case LayerKind::Relu:
                for (std::size_t j = 0; j < gin.size(); ++j) {
                    gin[j] = path.selections[k][j] ? grad[j] : 0.0;
                }
                break;
            case LayerKind::MaxPool:
                for (std::size_t o = 0; o < grad.size(); ++o) {
                    gin[ops::pool_input_index(layer, o, path.selections[k][o])] += grad[o];
                }
                break;
            case LayerKind::Affine: {
                const std::size_t plane = layer.input.height * layer.input.width;
                for (std::size_t j = 0; j < gin.size(); ++j) {
                    gin[j] = layer.spec.scale[j / plane] * grad[j];
                }
                break;
            }
            }
            grad.swap(gin);
        }
    }

    // Regularizer.
    for (std::size_t k = 0; k <= layers.size(); ++k) {
        if (net.is_parametric(k)) {
            axpy(lambda, net.weights(k).values(), g.tensors[k].values());
        }
    }
    g.value += 0.5 * lambda * net.squared_weight_norm();
    return g;
}

SgdOptimizer::SgdOptimizer(const SgdConfig& cfg, const NetworkState& net) : cfg_(cfg) {
    if (!(cfg.eta >= 0.0)) {
        throw ConfigError("learning rate must be nonnegative");
    }
    const std::size_t n = net.layers().size() + 1;
    a_.resize(n);
    b_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (net.is_parametric(k)) {
            a_[k].assign(net.weights(k).size(), 0.0);
            b_[k].assign(net.weights(k).size(), 0.0);
        }
    }
}

void SgdOptimizer::step(NetworkState& net, const Gradients& g) {
    ++t_;
    const double eta = cfg_.eta;
    const double eps = cfg_.epsilon;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < a_.size(); ++k) {
        if (a_[k].empty()) {
            continue;
        }
        auto& w = net.weights(k).storage();
        const auto& gk = g.tensors[k].storage();
        auto& a = a_[k];
        auto& b = b_[k];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = gk[j];
            switch (cfg_.solver) {
            case SgdSolver::Adagrad:
                a[j] += gj * gj;
                w[j] -= eta * gj / (std::sqrt(a[j]) + eps);
                break;
            case SgdSolver::Adadelta: {
                a[j] = cfg_.rho * a[j] + (1.0 - cfg_.rho) * gj * gj;
                const double dx = -std::sqrt(b[j] + eps) / std::sqrt(a[j] + eps) * gj;
                b[j] = cfg_.rho * b[j] + (1.0 - cfg_.rho) * dx * dx;
                w[j] += eta * dx;
                break;
            }
            case SgdSolver::Adam: {
                a[j] = cfg_.beta1 * a[j] + (1.0 - cfg_.beta1) * gj;
                b[j] = cfg_.beta2 * b[j] + (1.0 - cfg_.beta2) * gj * gj;
                w[j] -= eta * (a[j] / bc1) / (std::sqrt(b[j] / bc2) + eps);
                break;
            }
            }
        }
    }
}

void sgd_train(NetworkState& net, const SgdConfig& cfg, std::span<const LabeledSample> train,
               std::span<const LabeledSample> val, TrainLog& log, const LossTable& table) {
    if (train.empty()) {
        throw DataError("cannot train on an empty dataset");
    }
    if (cfg.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    const auto start = std::chrono::steady_clock::now();
    SgdOptimizer opt(cfg, net);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::vector<LabeledSample> batch;
    const auto record = [&](std::size_t epoch) {
        const Evaluation ev = evaluate(net, train, cfg.lambda, table);
        TrainRecord r;
        r.phase = to_string(cfg.solver);
        r.epoch = epoch;
        r.objective = ev.objective;
        r.layer_objective = std::numeric_limits<double>::quiet_NaN();
        r.train_acc = ev.accuracy;
        r.val_acc = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                : evaluate(net, val, cfg.lambda, table).accuracy;
        r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.add(std::move(r));
    };
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            batch.clear();
            for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
                batch.push_back(train[order[k]]);
            }
            opt.step(net, backprop_subgradient(net, batch, cfg.lambda, cfg.loss, table));
        }
        record(epoch);
    }
}

} // namespace plcnn
