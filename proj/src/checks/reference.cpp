#include "plcnn/checks/reference.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plcnn::ref {

std::vector<double> linear(const Layer& layer, std::span<const double> w, std::span<const double> in,
                           double bias_input) {
    const std::size_t cols = layer.columns();
    const bool bias = layer.has_bias();
    std::vector<double> out(layer.output.size(), 0.0);
    if (layer.spec.kind == LayerKind::Dense) {
        for (std::size_t r = 0; r < layer.rows(); ++r) {
            double acc = bias ? w[r * cols + cols - 1] * bias_input : 0.0;
            for (std::size_t j = 0; j < in.size(); ++j) {
                acc += w[r * cols + j] * in[j];
            }
            out[r] = acc;
        }
        return out;
    }
    const auto& s = layer.spec;
    const auto& I = layer.input;
    const auto& O = layer.output;
    for (std::size_t f = 0; f < s.filters; ++f) {
        for (std::size_t oy = 0; oy < O.height; ++oy) {
            for (std::size_t ox = 0; ox < O.width; ++ox) {
                double acc = bias ? w[f * cols + cols - 1] * bias_input : 0.0;
                for (std::size_t c = 0; c < I.channels; ++c) {
                    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                            const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.padding);
                            const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(I.height) ||
                                ix >= static_cast<long>(I.width)) {
                                continue;
                            }
                            acc += w[f * cols + (c * s.kernel_h + ky) * s.kernel_w + kx] *
                                   in[(c * I.height + static_cast<std::size_t>(iy)) * I.width +
                                      static_cast<std::size_t>(ix)];
                        }
                    }
                }
                out[(f * O.height + oy) * O.width + ox] = acc;
            }
        }
    }
    return out;
}

namespace {

// Input index of window element k for pooled output o.
std::size_t window_index(const Layer& layer, std::size_t o, std::size_t k) {
    const auto& O = layer.output;
    const std::size_t c = o / (O.height * O.width);
    const std::size_t oy = (o / O.width) % O.height;
    const std::size_t ox = o % O.width;
    const std::size_t iy = oy * layer.spec.stride + k / layer.spec.window_w;
    const std::size_t ix = ox * layer.spec.stride + k % layer.spec.window_w;
    return (c * layer.input.height + iy) * layer.input.width + ix;
}

std::size_t channel_of(const Layer& layer, std::size_t j) { return j / (layer.input.height * layer.input.width); }

} // namespace

std::vector<double> layer_value(const Layer& layer, std::span<const double> in) {
    std::vector<double> out(layer.output.size());
    switch (layer.spec.kind) {
    case LayerKind::Convolution:
    case LayerKind::Dense:
        return linear(layer, layer.weight.values(), in);
    case LayerKind::Relu:
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] = in[j] > 0.0 ? in[j] : 0.0;
        }
        break;
    case LayerKind::MaxPool:
        for (std::size_t o = 0; o < out.size(); ++o) {
            double m = in[window_index(layer, o, 0)];
            for (std::size_t k = 1; k < layer.arity(); ++k) {
                m = std::max(m, in[window_index(layer, o, k)]);
            }
            out[o] = m;
        }
        break;
    case LayerKind::Affine:
        for (std::size_t j = 0; j < out.size(); ++j) {
            const std::size_t c = channel_of(layer, j);
            out[j] = layer.spec.scale[c] * in[j] + layer.spec.shift[c];
        }
        break;
    }
    return out;
}

std::vector<double> prefix(const NetworkState& net, std::size_t end, std::span<const double> x) {
    std::vector<double> v(x.begin(), x.end());
    for (std::size_t k = 0; k < end; ++k) {
        v = layer_value(net.layer(k), v);
    }
    return v;
}

std::vector<double> forward(const NetworkState& net, std::span<const double> x) {
    return prefix(net, net.layers().size(), x);
}

std::vector<double> scores(const NetworkState& net, std::span<const double> phi) {
    const std::size_t d = phi.size();
    std::vector<double> s(net.classes(), 0.0);
    for (std::size_t c = 0; c < s.size(); ++c) {
        for (std::size_t j = 0; j < d; ++j) {
            s[c] += net.svm_weights()[c * d + j] * phi[j];
        }
    }
    return s;
}

double hinge(const NetworkState& net, const LabeledSample& s, const LossTable& loss) {
    const auto sc = scores(net, forward(net, s.input.values()));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sc.size(); ++c) {
        best = std::max(best, loss(c, s.label) + sc[c] - sc[s.label]);
    }
    return best;
}

double objective(const NetworkState& net, std::span<const LabeledSample> data, double lambda, const LossTable& loss) {
    double reg = 0.0;
    for (std::size_t k : net.parametric_indices()) {
        for (double v : net.weights(k).values()) {
            reg += v * v;
        }
    }
    double sum = 0.0;
    for (const auto& s : data) {
        sum += hinge(net, s, loss);
    }
    return 0.5 * lambda * reg + sum / static_cast<double>(data.size());
}

std::vector<std::size_t> latent_layers(const NetworkState& net, std::size_t l) {
    std::vector<std::size_t> out;
    for (std::size_t k = l + 1; k < net.layers().size(); ++k) {
        const auto kind = net.layer(k).spec.kind;
        if (kind == LayerKind::Relu || kind == LayerKind::MaxPool) {
            out.push_back(k);
        }
    }
    return out;
}

Streams frozen_streams(const NetworkState& net, std::size_t l, std::span<const double> w, std::span<const double> z,
                       std::size_t y, std::size_t y_bar, const ActivationPath& h, const LossTable& loss) {
    if (l == net.svm_index()) {
        const std::size_t d = z.size();
        Streams s;
        s.cvx = loss(y_bar, y);
        for (std::size_t j = 0; j < d; ++j) {
            s.cvx += w[y_bar * d + j] * z[j];
            s.ccv += w[y * d + j] * z[j];
        }
        return s;
    }
    std::vector<double> cvx = linear(net.layer(l), w, z);
    std::vector<double> ccv(cvx.size(), 0.0);
    for (std::size_t k = l + 1; k < net.layers().size(); ++k) {
        const Layer& layer = net.layer(k);
        std::vector<double> a(layer.output.size(), 0.0);
        std::vector<double> b(layer.output.size(), 0.0);
        switch (layer.spec.kind) {
        case LayerKind::Convolution:
        case LayerKind::Dense: {
            std::vector<double> wp(layer.weight.size()), wm(layer.weight.size());
            for (std::size_t j = 0; j < wp.size(); ++j) {
                wp[j] = std::max(layer.weight[j], 0.0);
                wm[j] = std::max(-layer.weight[j], 0.0);
            }
            const auto p1 = linear(layer, wp, cvx, 1.0);
            const auto p2 = linear(layer, wm, ccv, 0.0);
            const auto m1 = linear(layer, wm, cvx, 1.0);
            const auto m2 = linear(layer, wp, ccv, 0.0);
            for (std::size_t j = 0; j < a.size(); ++j) {
                a[j] = p1[j] + p2[j];
                b[j] = m1[j] + m2[j];
            }
            break;
        }
        case LayerKind::Relu:
            for (std::size_t j = 0; j < a.size(); ++j) {
                a[j] = h.selections.at(k).at(j) ? cvx[j] : ccv[j];
                b[j] = ccv[j];
            }
            break;
        case LayerKind::MaxPool:
            for (std::size_t o = 0; o < a.size(); ++o) {
                const std::size_t sel = h.selections.at(k).at(o);
                double sum = 0.0;
                for (std::size_t q = 0; q < layer.arity(); ++q) {
                    sum += ccv[window_index(layer, o, q)];
                }
                const std::size_t j = window_index(layer, o, sel);
                a[o] = cvx[j] + (sum - ccv[j]);
                b[o] = sum;
            }
            break;
        case LayerKind::Affine:
            for (std::size_t j = 0; j < a.size(); ++j) {
                const std::size_t c = channel_of(layer, j);
                const double sp = std::max(layer.spec.scale[c], 0.0);
                const double sm = std::max(-layer.spec.scale[c], 0.0);
                a[j] = sp * cvx[j] + sm * ccv[j] + layer.spec.shift[c];
                b[j] = sm * cvx[j] + sp * ccv[j];
            }
            break;
        }
        cvx = std::move(a);
        ccv = std::move(b);
    }
    const std::size_t d = cvx.size();
    const auto& W = net.svm_weights();
    std::vector<double> p(net.classes(), 0.0), q(net.classes(), 0.0);
    for (std::size_t c = 0; c < p.size(); ++c) {
        for (std::size_t j = 0; j < d; ++j) {
            const double P = std::max(W[c * d + j], 0.0);
            const double Q = std::max(-W[c * d + j], 0.0);
            p[c] += P * cvx[j] + Q * ccv[j];
            q[c] += Q * cvx[j] + P * ccv[j];
        }
    }
    Streams s;
    const double qsum = std::accumulate(q.begin(), q.end(), 0.0);
    s.cvx = loss(y_bar, y) + p[y_bar] + (qsum - q[y_bar]) + q[y];
    s.ccv = qsum + p[y];
    return s;
}

std::vector<ActivationPath> enumerate_paths(const NetworkState& net, std::size_t l, const ActivationPath& base,
                                            std::size_t free_tail, std::size_t limit) {
    const auto latent = latent_layers(net, l);
    if (free_tail > latent.size()) {
        throw ConfigError("free tail exceeds the latent layers");
    }
    ActivationPath start;
    start.selections.resize(net.layers().size());
    for (std::size_t k : latent) {
        if (base.selections.size() > k && base.selections[k].size() == net.layer(k).output.size()) {
            start.selections[k] = base.selections[k];
        } else {
            start.selections[k].assign(net.layer(k).output.size(), 0);
        }
    }
    // Mixed-radix digits over the free units, first unit most significant.
    struct Digit {
        std::size_t layer, unit, radix;
    };
    std::vector<Digit> digits;
    double count = 1.0;
    for (std::size_t t = latent.size() - free_tail; t < latent.size(); ++t) {
        const Layer& layer = net.layer(latent[t]);
        for (std::size_t u = 0; u < layer.output.size(); ++u) {
            digits.push_back({latent[t], u, layer.arity()});
            count *= static_cast<double>(layer.arity());
        }
    }
    if (count > static_cast<double>(limit)) {
        throw ConfigError("latent space too large to enumerate");
    }
    for (const auto& d : digits) {
        start.selections[d.layer][d.unit] = 0;
    }
    std::vector<ActivationPath> out;
    out.reserve(static_cast<std::size_t>(count));
    ActivationPath cur = start;
    while (true) {
        out.push_back(cur);
        std::size_t k = digits.size();
        while (k > 0) {
            auto& sel = cur.selections[digits[k - 1].layer][digits[k - 1].unit];
            if (sel + 1u < digits[k - 1].radix) {
                ++sel;
                break;
            }
            sel = 0;
            --k;
        }
        if (k == 0) {
            break;
        }
    }
    return out;
}

namespace {

bool close_to(double a, double best) { return a >= best - 1e-12 * (1.0 + std::abs(best)); }

} // namespace

Enumeration exhaustive_oracle(const NetworkState& net, std::size_t l, std::span<const double> w,
                              std::span<const double> z, std::size_t y, const ActivationPath& base,
                              std::size_t free_tail, const LossTable& loss) {
    const auto paths = enumerate_paths(net, l, base, free_tail);
    Enumeration e;
    e.value = -std::numeric_limits<double>::infinity();
    std::vector<double> values;
    for (std::size_t c = 0; c < net.classes(); ++c) {
        for (const auto& h : paths) {
            const double v = frozen_streams(net, l, w, z, y, c, h, loss).cvx;
            values.push_back(v);
            if (v > e.value) {
                e.value = v;
                e.y_bar = c;
                e.h = h;
            }
        }
    }
    e.maximizers = static_cast<std::size_t>(
        std::count_if(values.begin(), values.end(), [&](double v) { return close_to(v, e.value); }));
    return e;
}

Enumeration exhaustive_impute(const NetworkState& net, std::size_t l, std::span<const double> w,
                              std::span<const double> z, std::size_t y, const LossTable& loss) {
    const auto paths = enumerate_paths(net, l, ActivationPath{}, latent_layers(net, l).size());
    Enumeration e;
    e.y_bar = y;
    e.value = -std::numeric_limits<double>::infinity();
    std::vector<double> values;
    for (const auto& h : paths) {
        const double v = frozen_streams(net, l, w, z, y, y, h, loss).ccv;
        values.push_back(v);
        if (v > e.value) {
            e.value = v;
            e.h = h;
        }
    }
    e.maximizers = static_cast<std::size_t>(
        std::count_if(values.begin(), values.end(), [&](double v) { return close_to(v, e.value); }));
    return e;
}

ExplicitProblem extract_constraints(const NetworkState& net, std::size_t l, std::span<const LabeledSample> data,
                                    const std::vector<ActivationPath>& anchors, std::size_t free_tail,
                                    const LossTable& loss) {
    ExplicitProblem p;
    p.dim = net.weights(l).size();
    const std::size_t end = std::min(l, net.layers().size());
    std::vector<double> e(p.dim, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto z = prefix(net, end, data[i].input.values());
        const std::size_t y = data[i].label;
        const auto value = [&](std::span<const double> w, std::size_t c, const ActivationPath& h) {
            return frozen_streams(net, l, w, z, y, c, h, loss).cvx -
                   frozen_streams(net, l, w, z, y, y, anchors[i], loss).ccv;
        };
        std::vector<Constraint> cons;
        const auto paths = l == net.svm_index() ? std::vector<ActivationPath>{ActivationPath{}}
                                                : enumerate_paths(net, l, anchors[i], free_tail);
        for (std::size_t c = 0; c < net.classes(); ++c) {
            for (const auto& h : paths) {
                Constraint k;
                k.y_bar = c;
                k.b = value(e, c, h);
                k.psi.resize(p.dim);
                for (std::size_t j = 0; j < p.dim; ++j) {
                    e[j] = 1.0;
                    k.psi[j] = value(e, c, h) - k.b;
                    e[j] = 0.0;
                }
                cons.push_back(std::move(k));
            }
        }
        p.samples.push_back(std::move(cons));
    }
    return p;
}

double explicit_primal(const ExplicitProblem& p, std::span<const double> w, std::span<const double> w0, double lambda,
                       double mu) {
    double reg = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        reg += 0.5 * lambda * w[j] * w[j] + 0.5 * mu * (w[j] - w0[j]) * (w[j] - w0[j]);
    }
    double sum = 0.0;
    for (const auto& cons : p.samples) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& k : cons) {
            double v = k.b;
            for (std::size_t j = 0; j < w.size(); ++j) {
                v += k.psi[j] * w[j];
            }
            best = std::max(best, v);
        }
        sum += best;
    }
    return reg + sum / static_cast<double>(p.samples.size());
}

void project_simplex(std::span<double> v) {
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0;
    double theta = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        cum += u[k];
        const double t = (cum - 1.0) / static_cast<double>(k + 1);
        if (u[k] - t > 0.0) {
            theta = t;
        }
    }
    for (auto& x : v) {
        x = std::max(x - theta, 0.0);
    }
}

namespace {

struct DualEval {
    std::vector<double> w;
    double dual = 0.0;
};

// w(alpha) = (mu w0 - 1/N sum alpha_ik psi_ik) / (lambda + mu) and the
// Lagrangian at that w, which is the dual value.
DualEval dual_at(const ExplicitProblem& p, const std::vector<std::vector<double>>& alpha, std::span<const double> w0,
                 double lambda, double mu) {
    const double n = static_cast<double>(p.samples.size());
    DualEval d;
    d.w.assign(p.dim, 0.0);
    double lin = 0.0;
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
        for (std::size_t k = 0; k < alpha[i].size(); ++k) {
            const double a = alpha[i][k];
            if (a == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < p.dim; ++j) {
                d.w[j] -= a * p.samples[i][k].psi[j] / n;
            }
            lin += a * p.samples[i][k].b / n;
        }
    }
    for (std::size_t j = 0; j < p.dim; ++j) {
        d.w[j] = (d.w[j] + mu * w0[j]) / (lambda + mu);
    }
    double reg = 0.0;
    double cross = 0.0;
    for (std::size_t j = 0; j < p.dim; ++j) {
        reg += 0.5 * lambda * d.w[j] * d.w[j] + 0.5 * mu * (d.w[j] - w0[j]) * (d.w[j] - w0[j]);
    }
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
        for (std::size_t k = 0; k < alpha[i].size(); ++k) {
            double v = 0.0;
            for (std::size_t j = 0; j < p.dim; ++j) {
                v += p.samples[i][k].psi[j] * d.w[j];
            }
            cross += alpha[i][k] * v / n;
        }
    }
    d.dual = reg + cross + lin;
    return d;
}

} // namespace

namespace {

// In-place Cholesky of a dense SPD matrix (row-major, lower factor) and solve.
bool cholesky_solve(std::vector<double> a, std::size_t n, std::vector<double>& rhs) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) {
            d -= a[j * n + k] * a[j * n + k];
        }
        if (!(d > 0.0)) {
            return false;
        }
        d = std::sqrt(d);
        a[j * n + j] = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double v = rhs[i];
        for (std::size_t k = 0; k < i; ++k) {
            v -= a[i * n + k] * rhs[k];
        }
        rhs[i] = v / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double v = rhs[i];
        for (std::size_t k = i + 1; k < n; ++k) {
            v -= a[k * n + i] * rhs[k];
        }
        rhs[i] = v / a[i * n + i];
    }
    return true;
}

} // namespace

QpSolution solve_explicit(const ExplicitProblem& p, std::span<const double> w0, double lambda, double mu,
                          std::size_t max_iters) {
    // Epigraph form over x = (w, xi):
    //   min (lambda+mu)/2 |w|^2 - mu w0.w + 1/N sum xi_i
    //   s.t. psi_ik . w - xi_i <= -b_ik
    // solved with a Mehrotra predictor-corrector interior-point method.
    const std::size_t d = p.dim;
    const std::size_t n = p.samples.size();
    const std::size_t nx = d + n;
    const double nn = static_cast<double>(n);
    struct Row {
        std::size_t sample;
        const Constraint* c;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& c : p.samples[i]) {
            rows.push_back({i, &c});
        }
    }
    const std::size_t m = rows.size();
    const double hw = lambda + mu;

    const auto g_dot = [&](std::size_t r, const std::vector<double>& x) {
        double v = -x[d + rows[r].sample];
        for (std::size_t j = 0; j < d; ++j) {
            v += rows[r].c->psi[j] * x[j];
        }
        return v;
    };
    // out += G^T v
    const auto gt_add = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                out[j] += rows[r].c->psi[j] * v[r];
            }
            out[d + rows[r].sample] -= v[r];
        }
    };

    std::vector<double> x(nx, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        x[j] = mu / hw * w0[j];
    }
    std::vector<double> s(m), z(m, 1.0 / nn);
    for (std::size_t i = 0; i < n; ++i) {
        double worst = -std::numeric_limits<double>::infinity();
        for (const auto& c : p.samples[i]) {
            double v = c.b;
            for (std::size_t j = 0; j < d; ++j) {
                v += c.psi[j] * x[j];
            }
            worst = std::max(worst, v);
        }
        x[d + i] = worst + 1.0;
    }
    for (std::size_t r = 0; r < m; ++r) {
        s[r] = -rows[r].c->b - g_dot(r, x);
    }

    QpSolution out;
    for (std::size_t it = 1; it <= max_iters; ++it) {
        out.iterations = it;
        // Residuals: r_d = Hx + c + G^T z, r_p = Gx + s - h.
        std::vector<double> rd(nx, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            rd[j] = hw * x[j] - mu * w0[j];
        }
        for (std::size_t i = 0; i < n; ++i) {
            rd[d + i] = 1.0 / nn;
        }
        gt_add(z, rd);
        std::vector<double> rp(m);
        double gap = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            rp[r] = g_dot(r, x) + s[r] + rows[r].c->b;
            gap += s[r] * z[r];
        }
        double rd_norm = 0.0, rp_norm = 0.0;
        for (double v : rd) {
            rd_norm = std::max(rd_norm, std::abs(v));
        }
        for (double v : rp) {
            rp_norm = std::max(rp_norm, std::abs(v));
        }
        if (gap < 1e-14 && rd_norm < 1e-13 && rp_norm < 1e-12) {
            break;
        }

        // Normal matrix H + G^T diag(z/s) G.
        std::vector<double> M(nx * nx, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            M[j * nx + j] = hw;
        }
        std::vector<double> grow(nx);
        for (std::size_t r = 0; r < m; ++r) {
            const double wgt = z[r] / s[r];
            std::fill(grow.begin(), grow.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                grow[j] = rows[r].c->psi[j];
            }
            grow[d + rows[r].sample] = -1.0;
            for (std::size_t a = 0; a < nx; ++a) {
                if (grow[a] == 0.0) {
                    continue;
                }
                for (std::size_t b = 0; b < nx; ++b) {
                    M[a * nx + b] += wgt * grow[a] * grow[b];
                }
            }
        }
        for (std::size_t a = 0; a < nx; ++a) {
            M[a * nx + a] += 1e-14;
        }

        const auto solve_dir = [&](const std::vector<double>& rc, std::vector<double>& dx, std::vector<double>& ds,
                                   std::vector<double>& dz) {
            // dz = (rc + z rp + z G dx) / s;  (H + G^T Z/S G) dx = -rd - G^T ((rc + z rp) / s)
            std::vector<double> tmp(m);
            for (std::size_t r = 0; r < m; ++r) {
                tmp[r] = (rc[r] + z[r] * rp[r]) / s[r];
            }
            dx.assign(nx, 0.0);
            gt_add(tmp, dx);
            for (std::size_t a = 0; a < nx; ++a) {
                dx[a] = -rd[a] - dx[a];
            }
            if (!cholesky_solve(M, nx, dx)) {
                return false;
            }
            ds.resize(m);
            dz.resize(m);
            for (std::size_t r = 0; r < m; ++r) {
                const double gdx = g_dot(r, dx);
                ds[r] = -rp[r] - gdx;
                dz[r] = (rc[r] - z[r] * ds[r]) / s[r];
            }
            return true;
        };
        const auto max_step = [&](const std::vector<double>& ds, const std::vector<double>& dz) {
            double a = 1.0;
            for (std::size_t r = 0; r < m; ++r) {
                if (ds[r] < 0.0) {
                    a = std::min(a, -s[r] / ds[r]);
                }
                if (dz[r] < 0.0) {
                    a = std::min(a, -z[r] / dz[r]);
                }
            }
            return a;
        };

        std::vector<double> rc(m), dx, ds, dz;
        for (std::size_t r = 0; r < m; ++r) {
            rc[r] = -s[r] * z[r];
        }
        if (!solve_dir(rc, dx, ds, dz)) {
            break;
        }
        const double a_aff = max_step(ds, dz);
        double gap_aff = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            gap_aff += (s[r] + a_aff * ds[r]) * (z[r] + a_aff * dz[r]);
        }
        const double sigma = std::pow(gap_aff / gap, 3.0);
        const double target = sigma * gap / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
            rc[r] = -s[r] * z[r] + target - ds[r] * dz[r];
        }
        if (!solve_dir(rc, dx, ds, dz)) {
            break;
        }
        const double a = std::min(1.0, 0.99 * max_step(ds, dz));
        for (std::size_t k = 0; k < nx; ++k) {
            x[k] += a * dx[k];
        }
        for (std::size_t r = 0; r < m; ++r) {
            s[r] += a * ds[r];
            z[r] += a * dz[r];
        }
    }

    out.w.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
    out.primal = explicit_primal(p, out.w, w0, lambda, mu);
    // Multipliers scaled by N and renormalized give a feasible dual point,
    // hence a certified lower bound.
    std::vector<std::vector<double>> alpha(n);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) {
        alpha[i].resize(p.samples[i].size());
        double sum = 0.0;
        for (auto& a : alpha[i]) {
            a = std::max(0.0, z[r++]);
            sum += a;
        }
        for (auto& a : alpha[i]) {
            a /= sum;
        }
    }
    out.dual = dual_at(p, alpha, w0, lambda, mu).dual;
    return out;
}

BcfwTrace standard_bcfw(const std::vector<std::vector<double>>& phi, const std::vector<std::size_t>& labels,
                        std::size_t classes, const LossTable& loss, double lambda, std::size_t epochs,
                        std::uint64_t seed) {
    const std::size_t n = phi.size();
    const std::size_t d = n ? phi[0].size() : 0;
    const double nn = static_cast<double>(n);
    BcfwTrace trace;
    std::vector<double> w(classes * d, 0.0);
    std::vector<std::vector<double>> wi(n, std::vector<double>(classes * d, 0.0));
    std::vector<double> li(n, 0.0);
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (std::size_t i : order) {
            const std::size_t yi = labels[i];
            // Loss-augmented decoding: argmax_y Delta(y, y_i) + w_y . phi - w_{y_i} . phi
            std::size_t y_hat = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < classes; ++c) {
                double s = loss(c, yi);
                for (std::size_t j = 0; j < d; ++j) {
                    s += w[c * d + j] * phi[i][j];
                }
                if (s > best) {
                    best = s;
                    y_hat = c;
                }
            }
            // w_s = psi_i(y_hat) / (lambda N), psi_i(y) = phi(x, y_i) - phi(x, y).
            std::vector<double> ws(classes * d, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                ws[yi * d + j] += phi[i][j] / (lambda * nn);
                ws[y_hat * d + j] -= phi[i][j] / (lambda * nn);
            }
            const double ls = loss(y_hat, yi) / nn;
            double num = 0.0;
            double den = 0.0;
            for (std::size_t j = 0; j < ws.size(); ++j) {
                const double diff = wi[i][j] - ws[j];
                num += diff * w[j];
                den += diff * diff;
            }
            double gamma = 0.0;
            if (den > 0.0) {
                gamma = std::clamp((lambda * num - li[i] + ls) / (lambda * den), 0.0, 1.0);
            }
            trace.gammas.push_back(gamma);
            for (std::size_t j = 0; j < ws.size(); ++j) {
                const double updated = (1.0 - gamma) * wi[i][j] + gamma * ws[j];
                w[j] += updated - wi[i][j];
                wi[i][j] = updated;
            }
            li[i] = (1.0 - gamma) * li[i] + gamma * ls;
        }
    }
    trace.w = std::move(w);
    return trace;
}

double golden_section_max(const std::function<double(double)>& f, double a, double b, double tol) {
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    const double lo = a;
    const double hi = b;
    double c = b - r * (b - a);
    double d = a + r * (b - a);
    double fc = f(c);
    double fd = f(d);
    while (b - a > tol) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    // The endpoints are candidates too: the maximum may sit on the boundary.
    const double mid = 0.5 * (a + b);
    double arg = mid;
    double val = f(mid);
    for (double e : {lo, hi}) {
        const double fe = f(e);
        if (fe > val) {
            val = fe;
            arg = e;
        }
    }
    return arg;
}

} // namespace plcnn::ref
