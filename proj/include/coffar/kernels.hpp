#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "coffar/tensor.hpp"

// Layer kernels used by the model. The functions in coffar::kernels are the
// OpenMP-parallel versions; coffar::kernels::reference holds the direct
// serial loops they are tested and benchmarked against.
//
// Parallel kernels split work over output channels (or output rows for the
// dense layer), so every element is accumulated by one thread in a fixed
// order and results do not depend on the thread count.

namespace coffar::kernels {

struct ConvGrads {
  Tensor d_input;    // [C_in, H, W]; empty when not requested
  Tensor d_kernels;  // [C_out, C_in, kh, kw]
  std::vector<double> d_bias;
};

struct DenseGrads {
  std::vector<double> d_input;
  Tensor d_weight;  // [out, in]
  std::vector<double> d_bias;
};

struct PoolResult {
  Tensor output;                   // [C, H/2, W/2]
  std::vector<std::size_t> argmax; // flat input index per output element
};

// Convolution (kernel flipped relative to correlation), zero "same" padding.
// x: [C_in, H, W], k: [C_out, C_in, kh, kw] with odd kh, kw.
Tensor conv_forward(const Tensor& x, const Tensor& k, std::span<const double> bias);
ConvGrads conv_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                        bool need_input_grad);

// y = W x + b, W: [out, in].
std::vector<double> dense_forward(const Tensor& w, std::span<const double> bias,
                                  std::span<const double> x);
DenseGrads dense_backward(const Tensor& w, std::span<const double> x,
                          std::span<const double> dy, bool need_input_grad);

// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped. Ties
// resolve to the first maximum in row-major scan order.
PoolResult maxpool2x2_forward(const Tensor& x);
Tensor maxpool2x2_backward(std::span<const std::size_t> argmax,
                           const std::vector<std::size_t>& in_shape, const Tensor& dy);

namespace reference {

Tensor conv_forward(const Tensor& x, const Tensor& k, std::span<const double> bias);
ConvGrads conv_backward(const Tensor& x, const Tensor& k, const Tensor& dy,
                        bool need_input_grad);
std::vector<double> dense_forward(const Tensor& w, std::span<const double> bias,
                                  std::span<const double> x);
DenseGrads dense_backward(const Tensor& w, std::span<const double> x,
                          std::span<const double> dy, bool need_input_grad);

}  // namespace reference

/// Validates conv operand shapes; throws InvalidShape / InvalidKernel.
void check_conv_operands(const Tensor& x, const Tensor& k, std::size_t n_bias);

}  // namespace coffar::kernels
