// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "seglora/tensor.hpp"

namespace seglora {

/// One node of a dynamically built computation graph. Values are computed
/// eagerly; gradients flow on demand via backward().
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs
};

/// Cheap value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Accumulates `g` into the node's grad buffer; no-op when the node does not
/// require gradients.
void accumulate_grad(const std::shared_ptr<Node>& n, const Tensor& g);

/// Reverse-mode sweep from a scalar root (seed gradient 1).
void backward(const Var& root);

/// Builds an op node: value plus a closure that pushes gradients to inputs.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop);

// ---- graph ops ----

Var conv2d_op(const Var& x, const Var& w, const Var& b, int dilation);
Var relu_op(const Var& x);
Var maxpool2_op(const Var& x);
Var upsample2_op(const Var& x);
Var concat_ch_op(const std::vector<Var>& xs);
Var softmax_ch_op(const Var& x);
Var channel_op(const Var& x, int c);
Var add_op(const Var& a, const Var& b);
Var scale_op(const Var& x, double s);

/// Scalar-valued weighted sum of scalar terms.
Var weighted_sum_op(const std::vector<Var>& terms, const std::vector<double>& weights);

/// Segmentation overlap loss against a fixed binary mask:
/// -sum_x L(x)*O(x)/(L(x)+O(x)) with 0/0 treated as 0.
Var image_loss_op(const Var& foreground, const Tensor& mask);

}  // namespace seglora
