// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "seglora/tensor.hpp"

namespace seglora {

/// 2D convolution, stride 1, same padding, square dilation. Input (C,H,W),
/// weight (Cout,C,kh,kw) with odd kernels, bias (Cout) or empty. im2col +
/// GEMM; output (Cout,H,W).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int dilation);

/// Gradient of a conv2d output w.r.t. its weight: dOut (Cout,H,W) against
/// the saved input x. Returns (Cout,C,kh,kw).
Tensor conv2d_grad_weight(const Tensor& x, const Tensor& dout, int kh, int kw, int dilation);

/// Gradient w.r.t. the bias: per-channel sums of dOut.
Tensor conv2d_grad_bias(const Tensor& dout);

/// Gradient w.r.t. the input. Returns (C,H,W).
Tensor conv2d_grad_input(const Tensor& w, const Tensor& dout, int dilation);

/// Column matrix (C*kh*kw, H*W) for the given kernel and dilation.
Tensor im2col(const Tensor& x, int kh, int kw, int dilation);

}  // namespace seglora
