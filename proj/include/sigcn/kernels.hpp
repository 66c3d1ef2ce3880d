#pragma once

#include <cstddef>

#include "sigcn/tensor.hpp"

// Forward and backward kernels for the heavier primitives. These work on
// plain tensors; the tape in tape.hpp wires them together.
namespace sigcn::kernels {

// x: [Cin, H, W], w: [Cout, Cin, kh, kw], b: [Cout] -> [Cout, H, W].
// "Same" zero padding of dilation * (k - 1) / 2; kernels must be odd-sized.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t dilation);

struct Conv2dGrads {
  Tensor dx, dw, db;
};
Conv2dGrads conv2d_backward(const Tensor& gout, const Tensor& x,
                            const Tensor& w, std::size_t dilation);

// Bilinear resampling of [C, H, W] to [C, out_h, out_w] with corner pixels
// aligned (source coordinate = dst * (in - 1) / (out - 1)).
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize_backward(const Tensor& gout, const Shape& in_dims);

// Depthwise 1-D convolution along the node (row) axis of X [N, C] with
// kernel theta [k, C]: out(n, c) = sum_j theta(j, c) * X(n + j - k/2, c),
// zero padded.
Tensor node_conv(const Tensor& x, const Tensor& theta);

struct NodeConvGrads {
  Tensor dx, dtheta;
};
NodeConvGrads node_conv_backward(const Tensor& gout, const Tensor& x,
                                 const Tensor& theta);

}  // namespace sigcn::kernels
