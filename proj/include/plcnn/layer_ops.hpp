#pragma once

#include "plcnn/network.hpp"

#include <cstdint>
#include <span>

// Direct (loop-based) kernels shared by the plain network, the DC networks
// and backpropagation. All functions accumulate into their outputs.
namespace plcnn::ops {

// out += W . [in; bias_input] for a Convolution or Dense layer.
void linear_forward(const Layer& layer, std::span<const double> weight, std::span<const double> in,
                    double bias_input, std::span<double> out);

// grad_in += W^T . grad_out (bias column excluded).
void linear_backward(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out,
                     std::span<double> grad_in);

// grad_w += d <grad_out, W . [in; 1]> / dW.
void linear_weight_grad(const Layer& layer, std::span<const double> grad_out, std::span<const double> in,
                        std::span<double> grad_w);

// Sum over outputs of grad_out * bias(row of output), i.e. the constant the
// bias column contributes to <grad_out, W . [in; 1]>.
double bias_contribution(const Layer& layer, std::span<const double> weight, std::span<const double> grad_out);

// Row (filter or unit) that produced output element `index`.
inline std::size_t output_row(const Layer& layer, std::size_t index) {
    return layer.spec.kind == LayerKind::Dense ? index : index / (layer.output.height * layer.output.width);
}

void relu_forward(std::span<const double> in, std::span<double> out, std::span<std::uint16_t> selection);
void relu_replay(std::span<const double> in, std::span<double> out, std::span<const std::uint16_t> selection);

void max_pool_forward(const Layer& layer, std::span<const double> in, std::span<double> out,
                      std::span<std::uint16_t> selection);
void max_pool_replay(const Layer& layer, std::span<const double> in, std::span<double> out,
                     std::span<const std::uint16_t> selection);
// Input element of the window of output `out_index` at window offset `offset`.
std::size_t pool_input_index(const Layer& layer, std::size_t out_index, std::size_t offset);

void affine_forward(const Layer& layer, std::span<const double> in, std::span<double> out);

} // namespace plcnn::ops
