#include "plcnn/dc.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/layer_ops.hpp"

#include <algorithm>
#include <cmath>

namespace plcnn {

std::vector<double> DCValue::value() const {
    std::vector<double> v(cvx.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cvx[i] - ccv[i];
    }
    return v;
}

SplitWeights split_linear(const Tensor& w) {
    SplitWeights s{Tensor(w.shape()), Tensor(w.shape())};
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] > 0.0) {
            s.w_plus[i] = w[i];
        } else if (w[i] < 0.0) {
            s.w_minus[i] = -w[i];
        }
    }
    return s;
}

DCValue dc_linear(const Layer& layer, const SplitWeights& sw, const DCValue& u) {
    if (u.cvx.size() != layer.input.size() || u.ccv.size() != layer.input.size()) {
        throw ShapeError("DC input does not match " + to_string(layer.spec.kind) + " layer");
    }
    DCValue out{std::vector<double>(layer.output.size()), std::vector<double>(layer.output.size())};
    ops::linear_forward(layer, sw.w_plus.values(), u.cvx, 1.0, out.cvx);
    ops::linear_forward(layer, sw.w_minus.values(), u.ccv, 0.0, out.cvx);
    ops::linear_forward(layer, sw.w_minus.values(), u.cvx, 1.0, out.ccv);
    ops::linear_forward(layer, sw.w_plus.values(), u.ccv, 0.0, out.ccv);
    return out;
}

DCValue dc_relu(const DCValue& u, std::span<std::uint16_t> selection) {
    DCValue out{u.cvx, u.ccv};
    for (std::size_t j = 0; j < u.cvx.size(); ++j) {
        const bool active = u.cvx[j] > u.ccv[j];
        out.cvx[j] = active ? u.cvx[j] : u.ccv[j];
        if (!selection.empty()) {
            selection[j] = active ? 1 : 0;
        }
    }
    return out;
}

DCMax dc_max(std::span<const double> cvx, std::span<const double> ccv) {
    if (cvx.empty() || cvx.size() != ccv.size()) {
        throw ShapeError("dc_max needs a non-empty window");
    }
    DCMax r;
    double best = cvx[0] - ccv[0];
    for (std::size_t k = 1; k < cvx.size(); ++k) {
        const double d = cvx[k] - ccv[k];
        if (d > best) {
            best = d;
            r.selected = k;
        }
    }
    r.cvx = cvx[r.selected];
    for (std::size_t k = 0; k < cvx.size(); ++k) {
        r.ccv += ccv[k];
        if (k != r.selected) {
            r.cvx += ccv[k];
        }
    }
    return r;
}

DCValue dc_maxpool(const Layer& layer, const DCValue& u, std::span<std::uint16_t> selection) {
    const std::size_t window = layer.arity();
    const std::size_t n = layer.output.size();
    DCValue out{std::vector<double>(n), std::vector<double>(n)};
    std::vector<double> a(window), b(window);
    for (std::size_t o = 0; o < n; ++o) {
        for (std::size_t k = 0; k < window; ++k) {
            const std::size_t i = ops::pool_input_index(layer, o, k);
            a[k] = u.cvx[i];
            b[k] = u.ccv[i];
        }
        const DCMax m = dc_max(a, b);
        out.cvx[o] = m.cvx;
        out.ccv[o] = m.ccv;
        if (!selection.empty()) {
            selection[o] = static_cast<std::uint16_t>(m.selected);
        }
    }
    return out;
}

DCValue dc_affine(const Layer& layer, const SplitWeights& scale, const DCValue& u) {
    const std::size_t plane = layer.input.height * layer.input.width;
    DCValue out{std::vector<double>(u.cvx.size()), std::vector<double>(u.cvx.size())};
    for (std::size_t c = 0; c < layer.input.channels; ++c) {
        const double ap = scale.w_plus[c];
        const double am = scale.w_minus[c];
        const double t = layer.spec.shift[c];
        for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            out.cvx[i] = ap * u.cvx[i] + am * u.ccv[i] + t;
            out.ccv[i] = am * u.cvx[i] + ap * u.ccv[i];
        }
    }
    return out;
}

std::vector<std::size_t> DCNetPair::latent_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t k = target_layer + 1; k < net->layers().size(); ++k) {
        if (net->layers()[k].piecewise()) {
            out.push_back(k);
        }
    }
    return out;
}

std::vector<std::string> DCNetPair::stage_names() const {
    std::vector<std::string> names;
    if (!targets_svm()) {
        names.push_back(to_string(net->layers()[target_layer].spec.kind) + "*");
        for (std::size_t k = target_layer + 1; k < net->layers().size(); ++k) {
            names.push_back(to_string(net->layers()[k].spec.kind));
        }
        names.push_back("svm");
    } else {
        names.push_back("svm*");
    }
    return names;
}

DCNetPair build_dc_pair(const NetworkState& net, std::size_t l) {
    return build_dc_pair(net, l, LossTable::zero_one(net.classes()));
}

DCNetPair build_dc_pair(const NetworkState& net, std::size_t l, LossTable loss) {
    if (l > net.svm_index()) {
        throw ShapeError("layer index " + std::to_string(l) + " out of range");
    }
    if (!net.is_parametric(l)) {
        throw ShapeError("layer " + std::to_string(l) + " (" + to_string(net.layer(l).spec.kind) +
                         ") has no weights to optimize");
    }
    if (loss.classes() != net.classes()) {
        throw ConfigError("loss table size does not match the number of classes");
    }
    DCNetPair pair;
    pair.net = &net;
    pair.target_layer = l;
    pair.loss = std::move(loss);
    if (l == net.svm_index()) {
        return pair;
    }
    for (std::size_t k = l + 1; k < net.layers().size(); ++k) {
        const Layer& layer = net.layers()[k];
        DCStage stage;
        stage.layer = k;
        if (layer.parametric()) {
            stage.split = split_linear(layer.weight);
        } else if (layer.spec.kind == LayerKind::Affine) {
            stage.split = split_linear(Tensor({layer.spec.scale.size()}, layer.spec.scale));
        }
        pair.stages.push_back(std::move(stage));
    }
    pair.svm_split = split_linear(net.svm_weights());
    return pair;
}

namespace {

void check_finite(const DCValue& v) {
    for (std::size_t i = 0; i < v.cvx.size(); ++i) {
        if (!std::isfinite(v.cvx[i]) || !std::isfinite(v.ccv[i])) {
            throw NumericError("non-finite value in DC forward pass");
        }
    }
}

// Gap between the best and second-best of `d`.
double runner_up_gap(std::span<const double> d, std::size_t best) {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < d.size(); ++k) {
        if (k != best) {
            gap = std::min(gap, d[best] - d[k]);
        }
    }
    return gap;
}

// Distance of the current DC input from the nearest kink of a ReLU or max-pool layer.
double selection_margin(const Layer& layer, const DCValue& u) {
    double m = std::numeric_limits<double>::infinity();
    if (layer.spec.kind == LayerKind::Relu) {
        for (std::size_t j = 0; j < u.cvx.size(); ++j) {
            m = std::min(m, std::abs(u.cvx[j] - u.ccv[j]));
        }
        return m;
    }
    const std::size_t window = layer.arity();
    std::vector<double> d(window);
    for (std::size_t o = 0; o < layer.output.size(); ++o) {
        for (std::size_t k = 0; k < window; ++k) {
            const std::size_t i = ops::pool_input_index(layer, o, k);
            d[k] = u.cvx[i] - u.ccv[i];
        }
        const std::size_t best = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
        m = std::min(m, runner_up_gap(d, best));
    }
    return m;
}

DCValue replay_piecewise(const Layer& layer, const DCValue& u, std::span<const std::uint16_t> sel) {
    if (layer.spec.kind == LayerKind::Relu) {
        DCValue out = u;
        for (std::size_t j = 0; j < sel.size(); ++j) {
            if (!sel[j]) {
                out.cvx[j] = u.ccv[j];
            }
        }
        return out;
    }
    const std::size_t window = layer.arity();
    DCValue out{std::vector<double>(sel.size()), std::vector<double>(sel.size())};
    for (std::size_t o = 0; o < sel.size(); ++o) {
        if (sel[o] >= window) {
            throw ShapeError("max-pool selection outside its window");
        }
        for (std::size_t k = 0; k < window; ++k) {
            const std::size_t i = ops::pool_input_index(layer, o, k);
            out.ccv[o] += u.ccv[i];
            out.cvx[o] += k == sel[o] ? u.cvx[i] : u.ccv[i];
        }
    }
    return out;
}

const std::vector<std::uint16_t>& selections_for(const ActivationPath& path, std::size_t layer, std::size_t n) {
    if (layer >= path.selections.size() || path.selections[layer].size() != n) {
        throw ShapeError("activation path does not cover layer " + std::to_string(layer));
    }
    return path.selections[layer];
}

} // namespace

DCForward dc_forward(const DCNetPair& pair, std::span<const double> z, std::size_t y, std::span<const double> w,
                     const DCQuery& query) {
    const NetworkState& net = *pair.net;
    const std::size_t classes = net.classes();
    if (y >= classes || (query.fixed_class && *query.fixed_class >= classes)) {
        throw ShapeError("class index out of range");
    }
    const Tensor& w_ref = net.weights(pair.target_layer);
    if (w.size() != w_ref.size()) {
        throw ShapeError("free weights do not match layer " + std::to_string(pair.target_layer));
    }
    DCForward r;
    r.path.selections.resize(net.layers().size());

    const auto pick_class = [&](std::span<const double> cand) {
        if (query.fixed_class) {
            return *query.fixed_class;
        }
        const std::size_t best =
            static_cast<std::size_t>(std::max_element(cand.begin(), cand.end()) - cand.begin());
        r.min_margin = std::min(r.min_margin, runner_up_gap(cand, best));
        return best;
    };

    if (pair.targets_svm()) {
        if (z.size() != net.feature_dim()) {
            throw ShapeError("SVM input does not match the representation size");
        }
        std::vector<double> s(classes), cand(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            s[c] = dot(w.subspan(c * z.size(), z.size()), z);
            cand[c] = pair.loss(c, y) + s[c];
        }
        r.y_bar = pick_class(cand);
        r.f_cvx = cand[r.y_bar];
        r.f_ccv = s[y];
        if (!std::isfinite(r.f_cvx) || !std::isfinite(r.f_ccv)) {
            throw NumericError("non-finite value in DC forward pass");
        }
        return r;
    }

    const Layer& target = net.layer(pair.target_layer);
    if (z.size() != target.input.size()) {
        throw ShapeError("free layer input does not match its shape");
    }
    DCValue v{std::vector<double>(target.output.size()), std::vector<double>(target.output.size())};
    ops::linear_forward(target, w, z, 1.0, v.cvx);

    const std::size_t latent_count = pair.latent_layers().size();
    std::size_t latent_seen = 0;
    for (const DCStage& stage : pair.stages) {
        const Layer& layer = net.layer(stage.layer);
        switch (layer.spec.kind) {
        case LayerKind::Convolution:
        case LayerKind::Dense:
            v = dc_linear(layer, stage.split, v);
            break;
        case LayerKind::Affine:
            v = dc_affine(layer, stage.split, v);
            break;
        case LayerKind::Relu:
        case LayerKind::MaxPool: {
            const std::size_t rank_from_end = latent_count - 1 - latent_seen++;
            auto& sel = r.path.selections[stage.layer];
            sel.assign(layer.output.size(), 0);
            const bool maximize = query.forced == nullptr || rank_from_end < query.free_tail;
            if (maximize) {
                r.min_margin = std::min(r.min_margin, selection_margin(layer, v));
                v = layer.spec.kind == LayerKind::Relu ? dc_relu(v, sel) : dc_maxpool(layer, v, sel);
            } else {
                const auto& forced = query.forced->selections.at(stage.layer);
                if (forced.size() != sel.size()) {
                    throw ShapeError("forced path does not cover layer " + std::to_string(stage.layer));
                }
                sel = forced;
                v = replay_piecewise(layer, v, sel);
            }
            break;
        }
        }
        check_finite(v);
    }

    // SVM head: p_c = P_c cvx + Q_c ccv, q_c = Q_c cvx + P_c ccv, score_c = p_c - q_c.
    const std::size_t d = v.cvx.size();
    std::vector<double> p(classes), q(classes), cand(classes);
    double q_sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto pc = std::span<const double>(pair.svm_split.w_plus.storage()).subspan(c * d, d);
        const auto qc = std::span<const double>(pair.svm_split.w_minus.storage()).subspan(c * d, d);
        p[c] = dot(pc, v.cvx) + dot(qc, v.ccv);
        q[c] = dot(qc, v.cvx) + dot(pc, v.ccv);
        q_sum += q[c];
        cand[c] = pair.loss(c, y) + p[c] - q[c];
    }
    r.y_bar = pick_class(cand);
    double others = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (c != r.y_bar) {
            others += q[c];
        }
    }
    r.f_cvx = pair.loss(r.y_bar, y) + p[r.y_bar] + others + q[y];
    r.f_ccv = q_sum + p[y];
    if (!std::isfinite(r.f_cvx) || !std::isfinite(r.f_ccv)) {
        throw NumericError("non-finite value in DC forward pass");
    }
    return r;
}

StreamGradient dc_backward(const DCNetPair& pair, std::size_t y, std::size_t y_bar, const ActivationPath& path,
                           Stream stream) {
    const NetworkState& net = *pair.net;
    const std::size_t classes = net.classes();
    if (y >= classes || y_bar >= classes) {
        throw ShapeError("class index out of range");
    }
    const bool convex = stream == Stream::Convex;
    StreamGradient g;
    g.offset = convex ? pair.loss(y_bar, y) : 0.0;
    if (pair.targets_svm()) {
        g.grad_u.assign(classes, 0.0);
        g.grad_u[convex ? y_bar : y] = 1.0;
        return g;
    }

    // Seeds on the SVM stage's p and q.
    std::vector<double> dp(classes, 0.0), dq(classes, 0.0);
    if (convex) {
        dp[y_bar] += 1.0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (c != y_bar) {
                dq[c] += 1.0;
            }
        }
        dq[y] += 1.0;
    } else {
        for (auto& e : dq) {
            e += 1.0;
        }
        dp[y] += 1.0;
    }
    const std::size_t d = net.feature_dim();
    std::vector<double> gc(d, 0.0), gv(d, 0.0);
    const auto& P = pair.svm_split.w_plus.storage();
    const auto& Q = pair.svm_split.w_minus.storage();
    for (std::size_t c = 0; c < classes; ++c) {
        const auto pc = std::span<const double>(P).subspan(c * d, d);
        const auto qc = std::span<const double>(Q).subspan(c * d, d);
        axpy(dp[c], pc, gc);
        axpy(dq[c], qc, gc);
        axpy(dp[c], qc, gv);
        axpy(dq[c], pc, gv);
    }

    for (auto it = pair.stages.rbegin(); it != pair.stages.rend(); ++it) {
        const Layer& layer = net.layer(it->layer);
        const std::size_t n_in = layer.input.size();
        std::vector<double> gc_in(n_in, 0.0), gv_in(n_in, 0.0);
        switch (layer.spec.kind) {
        case LayerKind::Convolution:
        case LayerKind::Dense: {
            const auto wp = it->split.w_plus.values();
            const auto wm = it->split.w_minus.values();
            ops::linear_backward(layer, wp, gc, gc_in);
            ops::linear_backward(layer, wm, gv, gc_in);
            ops::linear_backward(layer, wm, gc, gv_in);
            ops::linear_backward(layer, wp, gv, gv_in);
            g.offset += ops::bias_contribution(layer, wp, gc) + ops::bias_contribution(layer, wm, gv);
            break;
        }
        case LayerKind::Affine: {
            const std::size_t plane = layer.input.height * layer.input.width;
            for (std::size_t c = 0; c < layer.input.channels; ++c) {
                const double ap = it->split.w_plus[c];
                const double am = it->split.w_minus[c];
                double shifted = 0.0;
                for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
                    gc_in[i] = ap * gc[i] + am * gv[i];
                    gv_in[i] = am * gc[i] + ap * gv[i];
                    shifted += gc[i];
                }
                g.offset += shifted * layer.spec.shift[c];
            }
            break;
        }
        case LayerKind::Relu: {
            const auto& sel = selections_for(path, it->layer, layer.output.size());
            for (std::size_t j = 0; j < n_in; ++j) {
                if (sel[j]) {
                    gc_in[j] = gc[j];
                    gv_in[j] = gv[j];
                } else {
                    gv_in[j] = gv[j] + gc[j];
                }
            }
            break;
        }
        case LayerKind::MaxPool: {
            const auto& sel = selections_for(path, it->layer, layer.output.size());
            const std::size_t window = layer.arity();
            for (std::size_t o = 0; o < sel.size(); ++o) {
                for (std::size_t k = 0; k < window; ++k) {
                    const std::size_t i = ops::pool_input_index(layer, o, k);
                    gv_in[i] += gv[o];
                    if (k == sel[o]) {
                        gc_in[i] += gc[o];
                    } else {
                        gv_in[i] += gc[o];
                    }
                }
            }
            break;
        }
        }
        gc.swap(gc_in);
        gv.swap(gv_in);
    }
    // The free layer's output enters as (u, 0); only the convex slot depends on W^l.
    g.grad_u = std::move(gc);
    return g;
}

double verify_dc(const NetworkState& net, const DCNetPair& pair, const LabeledSample& sample, std::size_t y_bar) {
    const auto fr = forward(net, sample.input);
    const auto scores = class_scores(net, fr.phi.values());
    const double hinge = pair.loss(y_bar, sample.label) + scores[y_bar] - scores[sample.label];
    const auto z = forward_prefix(net, std::min(pair.target_layer, net.layers().size()), sample.input.values());
    DCQuery query;
    query.fixed_class = y_bar;
    const auto f = dc_forward(pair, z, sample.label, net.weights(pair.target_layer).values(), query);
    return std::abs((f.f_cvx - f.f_ccv) - hinge) / (1.0 + std::abs(hinge));
}

} // namespace plcnn
