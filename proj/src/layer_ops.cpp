#include "plcnn/layer_ops.hpp"

namespace plcnn::ops {

namespace {

struct ConvGeometry {
    std::size_t in_c, in_h, in_w;
    std::size_t out_h, out_w;
    std::size_t kh, kw, stride;
    std::ptrdiff_t pad;
    std::size_t cols;

    explicit ConvGeometry(const Layer& layer)
        : in_c(layer.input.channels), in_h(layer.input.height), in_w(layer.input.width),
          out_h(layer.output.height), out_w(layer.output.width), kh(layer.spec.kernel_h),
          kw(layer.spec.kernel_w), stride(layer.spec.stride),
          pad(static_cast<std::ptrdiff_t>(layer.spec.padding)), cols(layer.columns()) {}

    // Output x-range [lo, hi) for which ix = ox*stride + kx - pad is inside the input.
    void valid_range(std::size_t k, std::size_t out_extent, std::size_t in_extent, std::size_t& lo,
                     std::size_t& hi) const {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
        const auto s = static_cast<std::ptrdiff_t>(stride);
        std::ptrdiff_t first = 0;
        if (off < 0) {
            first = (-off + s - 1) / s;
        }
        std::ptrdiff_t last = static_cast<std::ptrdiff_t>(out_extent);
        // need o*s + off <= in_extent - 1
        const std::ptrdiff_t bound = static_cast<std::ptrdiff_t>(in_extent) - 1 - off;
        if (bound < 0) {
            last = 0;
        } else {
            last = std::min(last, bound / s + 1);
        }
        lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
        hi = static_cast<std::size_t>(std::max<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(lo)));
    }
};

void conv_forward(const Layer& layer, std::span<const double> weight, std::span<const double> in,
                  double bias_input, std::span<double> out) {
    const ConvGeometry g(layer);
    const std::size_t filters = layer.spec.filters;
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t f = 0; f < filters; ++f) {
        const double* wrow = weight.data() + f * g.cols;
        double* o = out.data() + f * plane;
        if (layer.has_bias() && bias_input != 0.0) {
            const double b = wrow[g.cols - 1] * bias_input;
            for (std::size_t i = 0; i < plane; ++i) {
                o[i] += b;
            }
        }
        for (std::size_t c = 0; c < g.in_c; ++c) {
            const double* ich = in.data() + c * g.in_h * g.in_w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t oy_lo, oy_hi;
                g.valid_range(ky, g.out_h, g.in_h, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = wrow[(c * g.kh + ky) * g.kw + kx];
                    if (wv == 0.0) {
                        continue;
                    }
                    std::size_t ox_lo, ox_hi;
                    g.valid_range(kx, g.out_w, g.in_w, ox_lo, ox_hi);
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t iy = oy * g.stride + ky - static_cast<std::size_t>(g.pad);
                        const double* irow = ich + iy * g.in_w;
                        double* orow = o + oy * g.out_w;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            orow[ox] += wv * irow[ox * g.stride + kx - static_cast<std::size_t>(g.pad)];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out,
                   std::span<double> grad_in) {
    const ConvGeometry g(layer);
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t f = 0; f < layer.spec.filters; ++f) {
        const double* wrow = weight.data() + f * g.cols;
        const double* go = grad_out.data() + f * plane;
        for (std::size_t c = 0; c < g.in_c; ++c) {
            double* gch = grad_in.data() + c * g.in_h * g.in_w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t oy_lo, oy_hi;
                g.valid_range(ky, g.out_h, g.in_h, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const double wv = wrow[(c * g.kh + ky) * g.kw + kx];
                    if (wv == 0.0) {
                        continue;
                    }
                    std::size_t ox_lo, ox_hi;
                    g.valid_range(kx, g.out_w, g.in_w, ox_lo, ox_hi);
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t iy = oy * g.stride + ky - static_cast<std::size_t>(g.pad);
                        double* grow = gch + iy * g.in_w;
                        const double* orow = go + oy * g.out_w;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            grow[ox * g.stride + kx - static_cast<std::size_t>(g.pad)] += wv * orow[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv_weight_grad(const Layer& layer, std::span<const double> grad_out, std::span<const double> in,
                      std::span<double> grad_w) {
    const ConvGeometry g(layer);
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t f = 0; f < layer.spec.filters; ++f) {
        double* gw = grad_w.data() + f * g.cols;
        const double* go = grad_out.data() + f * plane;
        if (layer.has_bias()) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                s += go[i];
            }
            gw[g.cols - 1] += s;
        }
        for (std::size_t c = 0; c < g.in_c; ++c) {
            const double* ich = in.data() + c * g.in_h * g.in_w;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                std::size_t oy_lo, oy_hi;
                g.valid_range(ky, g.out_h, g.in_h, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    std::size_t ox_lo, ox_hi;
                    g.valid_range(kx, g.out_w, g.in_w, ox_lo, ox_hi);
                    double s = 0.0;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t iy = oy * g.stride + ky - static_cast<std::size_t>(g.pad);
                        const double* irow = ich + iy * g.in_w;
                        const double* orow = go + oy * g.out_w;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            s += orow[ox] * irow[ox * g.stride + kx - static_cast<std::size_t>(g.pad)];
                        }
                    }
                    gw[(c * g.kh + ky) * g.kw + kx] += s;
                }
            }
        }
    }
}

void dense_forward(const Layer& layer, std::span<const double> weight, std::span<const double> in,
                   double bias_input, std::span<double> out) {
    const std::size_t n_in = layer.fan_in();
    const std::size_t cols = layer.columns();
    for (std::size_t o = 0; o < layer.spec.units; ++o) {
        const double* w = weight.data() + o * cols;
        double s = 0.0;
        for (std::size_t j = 0; j < n_in; ++j) {
            s += w[j] * in[j];
        }
        if (layer.has_bias()) {
            s += w[n_in] * bias_input;
        }
        out[o] += s;
    }
}

void dense_backward(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out,
                    std::span<double> grad_in) {
    const std::size_t n_in = layer.fan_in();
    const std::size_t cols = layer.columns();
    for (std::size_t o = 0; o < layer.spec.units; ++o) {
        const double g = grad_out[o];
        if (g == 0.0) {
            continue;
        }
        const double* w = weight.data() + o * cols;
        for (std::size_t j = 0; j < n_in; ++j) {
            grad_in[j] += g * w[j];
        }
    }
}

void dense_weight_grad(const Layer& layer, std::span<const double> grad_out, std::span<const double> in,
                       std::span<double> grad_w) {
    const std::size_t n_in = layer.fan_in();
    const std::size_t cols = layer.columns();
    for (std::size_t o = 0; o < layer.spec.units; ++o) {
        const double g = grad_out[o];
        if (g == 0.0) {
            continue;
        }
        double* w = grad_w.data() + o * cols;
        for (std::size_t j = 0; j < n_in; ++j) {
            w[j] += g * in[j];
        }
        if (layer.has_bias()) {
            w[n_in] += g;
        }
    }
}

} // namespace

void linear_forward(const Layer& layer, std::span<const double> weight, std::span<const double> in,
                    double bias_input, std::span<double> out) {
    if (layer.spec.kind == LayerKind::Convolution) {
        conv_forward(layer, weight, in, bias_input, out);
    } else {
        dense_forward(layer, weight, in, bias_input, out);
    }
}

void linear_backward(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out,
                     std::span<double> grad_in) {
    if (layer.spec.kind == LayerKind::Convolution) {
        conv_backward(layer, weight, grad_out, grad_in);
    } else {
        dense_backward(layer, weight, grad_out, grad_in);
    }
}

void linear_weight_grad(const Layer& layer, std::span<const double> grad_out, std::span<const double> in,
                        std::span<double> grad_w) {
    if (layer.spec.kind == LayerKind::Convolution) {
        conv_weight_grad(layer, grad_out, in, grad_w);
    } else {
        dense_weight_grad(layer, grad_out, in, grad_w);
    }
}

double bias_contribution(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out) {
    if (!layer.has_bias()) {
        return 0.0;
    }
    const std::size_t cols = layer.columns();
    const std::size_t rows = layer.rows();
    const std::size_t per_row = grad_out.size() / rows;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < per_row; ++i) {
            s += grad_out[r * per_row + i];
        }
        total += s * weight[r * cols + cols - 1];
    }
    return total;
}

void relu_forward(std::span<const double> in, std::span<double> out, std::span<std::uint16_t> selection) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        const bool active = in[i] > 0.0;
        selection[i] = active ? 1 : 0;
        out[i] = active ? in[i] : 0.0;
    }
}

void relu_replay(std::span<const double> in, std::span<double> out, std::span<const std::uint16_t> selection) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = selection[i] ? in[i] : 0.0;
    }
}

std::size_t pool_input_index(const Layer& layer, std::size_t out_index, std::size_t offset) {
    const std::size_t oh = layer.output.height;
    const std::size_t ow = layer.output.width;
    const std::size_t c = out_index / (oh * ow);
    const std::size_t oy = (out_index / ow) % oh;
    const std::size_t ox = out_index % ow;
    const std::size_t ky = offset / layer.spec.window_w;
    const std::size_t kx = offset % layer.spec.window_w;
    const std::size_t iy = oy * layer.spec.stride + ky;
    const std::size_t ix = ox * layer.spec.stride + kx;
    return (c * layer.input.height + iy) * layer.input.width + ix;
}

void max_pool_forward(const Layer& layer, std::span<const double> in, std::span<double> out,
                      std::span<std::uint16_t> selection) {
    const std::size_t window = layer.spec.window_h * layer.spec.window_w;
    for (std::size_t o = 0; o < out.size(); ++o) {
        std::size_t best = 0;
        double best_value = in[pool_input_index(layer, o, 0)];
        for (std::size_t k = 1; k < window; ++k) {
            const double v = in[pool_input_index(layer, o, k)];
            if (v > best_value) {
                best_value = v;
                best = k;
            }
        }
        selection[o] = static_cast<std::uint16_t>(best);
        out[o] = best_value;
    }
}

void max_pool_replay(const Layer& layer, std::span<const double> in, std::span<double> out,
                     std::span<const std::uint16_t> selection) {
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = in[pool_input_index(layer, o, selection[o])];
    }
}

void affine_forward(const Layer& layer, std::span<const double> in, std::span<double> out) {
    const std::size_t plane = layer.input.height * layer.input.width;
    for (std::size_t c = 0; c < layer.input.channels; ++c) {
        const double a = layer.spec.scale[c];
        const double t = layer.spec.shift[c];
        for (std::size_t i = 0; i < plane; ++i) {
            out[c * plane + i] = a * in[c * plane + i] + t;
        }
    }
}

} // namespace plcnn::ops
