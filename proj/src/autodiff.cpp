// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#include "seglora/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "seglora/conv.hpp"
#include "seglora/errors.hpp"

namespace seglora {

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void accumulate_grad(const std::shared_ptr<Node>& n, const Tensor& g) {
  if (!n || !n->requires_grad) return;
  if (!n->grad.defined() || n->grad.size() == 0) n->grad = Tensor(n->value.shape());
  n->grad += g;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const Var& v : inputs) {
    if (!v.defined()) continue;
    n->inputs.push_back(v.node());
    n->requires_grad = n->requires_grad || v.requires_grad();
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (!root.defined()) throw UsageError("backward: undefined root");
  if (root.value().size() != 1) throw UsageError("backward: root must be scalar");

  // Iterative postorder DFS; reverse gives a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->inputs.size()) {
      Node* child = n->inputs[i++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor seed(root.value().shape());
  seed.fill(1.0);
  accumulate_grad(root.node(), seed);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop && n->grad.defined() && n->grad.size() > 0) n->backprop(*n);
  }
}

// ---- ops ----

Var conv2d_op(const Var& x, const Var& w, const Var& b, int dilation) {
  Tensor out = conv2d(x.value(), w.value(), b.defined() ? b.value() : Tensor(), dilation);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  const int kh = w.value().dim(2), kw = w.value().dim(3);
  return make_op(std::move(out), {x, w, b}, [xn, wn, bn, kh, kw, dilation](Node& n) {
    // im2col is recomputed here instead of cached; keeps live graphs small.
    if (wn->requires_grad) accumulate_grad(wn, conv2d_grad_weight(xn->value, n.grad, kh, kw, dilation));
    if (bn && bn->requires_grad) accumulate_grad(bn, conv2d_grad_bias(n.grad));
    if (xn->requires_grad) accumulate_grad(xn, conv2d_grad_input(wn->value, n.grad, dilation));
  });
}

Var relu_op(const Var& x) {
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn](Node& n) {
    Tensor dx(xn->value.shape());
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] = xn->value[i] > 0.0 ? n.grad[i] : 0.0;
    accumulate_grad(xn, dx);
  });
}

Var maxpool2_op(const Var& x) {
  const Tensor& in = x.value();
  if (in.rank() != 3) throw UsageError("maxpool2: input must be (C,H,W)");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw UsageError("maxpool2: H and W must be even, got " + shape_str(in.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        std::int64_t best = 0;
        double bv = -1e308;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::int64_t idx =
                (static_cast<std::int64_t>(ch) * h + 2 * y + dy) * w + 2 * xx + dx;
            if (in[idx] > bv) {
              bv = in[idx];
              best = idx;
            }
          }
        }
        const std::int64_t oidx = (static_cast<std::int64_t>(ch) * oh + y) * ow + xx;
        out[oidx] = bv;
        (*argmax)[static_cast<std::size_t>(oidx)] = best;
      }
    }
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, argmax](Node& n) {
    Tensor dx(xn->value.shape());
    for (std::int64_t i = 0; i < n.grad.size(); ++i) dx[(*argmax)[static_cast<std::size_t>(i)]] += n.grad[i];
    accumulate_grad(xn, dx);
  });
}

Var upsample2_op(const Var& x) {
  const Tensor& in = x.value();
  if (in.rank() != 3) throw UsageError("upsample2: input must be (C,H,W)");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = in.at(ch, y / 2, xx / 2);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, c, h, w](Node& n) {
    Tensor dx({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) dx.at(ch, y / 2, xx / 2) += n.grad.at(ch, y, xx);
    accumulate_grad(xn, dx);
  });
}

Var concat_ch_op(const std::vector<Var>& xs) {
  if (xs.empty()) throw UsageError("concat: no inputs");
  const int h = xs[0].value().dim(1), w = xs[0].value().dim(2);
  int c = 0;
  for (const Var& v : xs) {
    if (v.value().rank() != 3 || v.value().dim(1) != h || v.value().dim(2) != w)
      throw UsageError("concat: spatial dims must match");
    c += v.value().dim(0);
  }
  Tensor out({c, h, w});
  std::size_t off = 0;
  for (const Var& v : xs) {
    const std::size_t n = static_cast<std::size_t>(v.value().size());
    std::copy(v.value().data(), v.value().data() + n, out.data() + off);
    off += n;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const Var& v : xs) nodes.push_back(v.node());
  return make_op(std::move(out), xs, [nodes](Node& n) {
    std::size_t off = 0;
    for (const auto& xn : nodes) {
      const std::size_t cnt = static_cast<std::size_t>(xn->value.size());
      if (xn->requires_grad) {
        Tensor dx(xn->value.shape());
        std::copy(n.grad.data() + off, n.grad.data() + off + cnt, dx.data());
        accumulate_grad(xn, dx);
      }
      off += cnt;
    }
  });
}

Var softmax_ch_op(const Var& x) {
  const Tensor& in = x.value();
  if (in.rank() != 3) throw UsageError("softmax: input must be (C,H,W)");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out(in.shape());
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (std::int64_t p = 0; p < plane; ++p) {
    double mx = -1e308;
    for (int ch = 0; ch < c; ++ch) mx = std::max(mx, in[ch * plane + p]);
    double z = 0.0;
    for (int ch = 0; ch < c; ++ch) z += std::exp(in[ch * plane + p] - mx);
    for (int ch = 0; ch < c; ++ch) out[ch * plane + p] = std::exp(in[ch * plane + p] - mx) / z;
  }
  auto xn = x.node();
  auto yv = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [xn, yv, c, plane](Node& n) {
    Tensor dx(xn->value.shape());
    const Tensor& y = *yv;
    for (std::int64_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += n.grad[ch * plane + p] * y[ch * plane + p];
      for (int ch = 0; ch < c; ++ch) dx[ch * plane + p] = y[ch * plane + p] * (n.grad[ch * plane + p] - dot);
    }
    accumulate_grad(xn, dx);
  });
}

Var channel_op(const Var& x, int c) {
  const Tensor& in = x.value();
  if (in.rank() != 3 || c < 0 || c >= in.dim(0)) throw UsageError("channel: index out of range");
  const int h = in.dim(1), w = in.dim(2);
  Tensor out({h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::copy(in.data() + c * plane, in.data() + (c + 1) * plane, out.data());
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, c, plane](Node& n) {
    Tensor dx(xn->value.shape());
    std::copy(n.grad.data(), n.grad.data() + plane, dx.data() + c * plane);
    accumulate_grad(xn, dx);
  });
}

Var add_op(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) throw UsageError("add: shape mismatch");
  Tensor out = a.value();
  out += b.value();
  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn](Node& n) {
    accumulate_grad(an, n.grad);
    accumulate_grad(bn, n.grad);
  });
}

Var scale_op(const Var& x, double s) {
  Tensor out = x.value();
  out *= s;
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, s](Node& n) {
    Tensor g = n.grad;
    g *= s;
    accumulate_grad(xn, g);
  });
}

Var weighted_sum_op(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw UsageError("weighted_sum: term/weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw UsageError("weighted_sum: terms must be scalar");
    s += weights[i] * terms[i].value()[0];
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const Var& t : terms) nodes.push_back(t.node());
  return make_op(Tensor::scalar(s), terms, [nodes, weights](Node& n) {
    for (std::size_t i = 0; i < nodes.size(); ++i) accumulate_grad(nodes[i], Tensor::scalar(weights[i] * n.grad[0]));
  });
}

Var image_loss_op(const Var& foreground, const Tensor& mask) {
  const Tensor& o = foreground.value();
  if (!o.same_shape(mask)) throw UsageError("image_loss: prediction/mask shape mismatch");
  double loss = 0.0;
  for (std::int64_t i = 0; i < o.size(); ++i) {
    const double l = mask[i];
    const double d = l + o[i];
    if (d > 0.0) loss -= l * o[i] / d;
  }
  auto on = foreground.node();
  auto mk = std::make_shared<Tensor>(mask);
  return make_op(Tensor::scalar(loss), {foreground}, [on, mk](Node& n) {
    const Tensor& m = *mk;
    Tensor dx(on->value.shape());
    const double g = n.grad[0];
    for (std::int64_t i = 0; i < dx.size(); ++i) {
      const double d = m[i] + on->value[i];
      dx[i] = d > 0.0 ? -g * m[i] * m[i] / (d * d) : 0.0;
    }
    accumulate_grad(on, dx);
  });
}

}  // namespace seglora
