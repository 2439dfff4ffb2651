// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "seglora/autodiff.hpp"
#include "seglora/tensor.hpp"

namespace seglora {

/// Six low-rank adapter methods over frozen convolution weights. The three
/// base factorizations differ in how the rank-4 update tensor is built; the
/// DoRA variants additionally split the effective weight into a trainable
/// per-output-channel magnitude and a normalized direction.
enum class AdapterMethod { LoRAC, ConvLoRA, CPLoRA, DoRAC, ConvDoRA, CPDoRA };

bool is_dora(AdapterMethod m);
AdapterMethod parse_method(const std::string& name);  // "lorac", "convdora", ...
std::string method_name(AdapterMethod m);
std::vector<AdapterMethod> all_methods();

/// Frozen convolution kernel (c_out, c_in, k_h, k_w) plus optional bias.
struct ConvWeight {
  Tensor data;
  Tensor bias;  // (c_out) or empty

  int out_ch() const { return data.dim(0); }
  int in_ch() const { return data.dim(1); }
  int kh() const { return data.dim(2); }
  int kw() const { return data.dim(3); }
};

struct AdapterConfig {
  AdapterMethod method = AdapterMethod::LoRAC;
  int rank = 2;
  double alpha = -1.0;     // < 0 means the 2*rank default
  double epsilon = 1e-8;   // DoRA norm-division guard
  bool norm_gradient = true;  // DoRA: propagate gradients through the norm

  double resolved_alpha() const { return alpha < 0.0 ? 2.0 * rank : alpha; }
  double scale() const { return resolved_alpha() / rank; }
};

/// A (R, c_in, k_w); B (c_out, k_h, R). The update pairs B's kernel axis
/// with height and A's with width.
struct LoRACFactors {
  Tensor A;
  Tensor B;
};

/// A (R, c_in, k_h, k_w); B (c_out, R).
struct ConvLoRAFactors {
  Tensor A;
  Tensor B;
};

/// Rank-1 mode vectors: a1 (R, c_out), a2 (R, c_in), a3 (R, k_h), a4 (R, k_w).
struct CPFactors {
  Tensor a1, a2, a3, a4;
};

using AdapterFactors = std::variant<LoRACFactors, ConvLoRAFactors, CPFactors>;

struct AdapterState {
  AdapterConfig config;
  AdapterFactors factors;
  Tensor magnitude;      // (c_out), DoRA variants only
  std::string base_ref;  // name of the wrapped convolution, for checkpoints
};

/// Zero-update initialization: the A-side factors are random small-scale,
/// the B-side (a1 for CP) zero, and DoRA magnitudes equal the per-channel
/// Frobenius norms of the base. Deterministic given seed.
AdapterState init_adapter(const ConvWeight& base, const AdapterConfig& config, std::uint64_t seed);

/// Unscaled update tensors (c_out, c_in, k_h, k_w).
Tensor delta_lorac(const LoRACFactors& f);
Tensor delta_convlora(const ConvLoRAFactors& f);
Tensor delta_cp(const CPFactors& f);
Tensor adapter_delta(const AdapterState& state);

struct ComposeStats {
  int degenerate_channels = 0;  // channels where ||V[o]|| < epsilon
};

/// Effective weight. LoRA variants: W0 + (alpha/R) * delta. DoRA variants:
/// V = W0 + (alpha/R) * delta, then m[o] * V[o] / (||V[o]||_F + eps).
Tensor compose_effective_weight(const ConvWeight& base, const AdapterState& state, ComposeStats* stats = nullptr);

/// Bakes the adapter into a plain convolution weight; bias passes through.
ConvWeight merge(const ConvWeight& base, const AdapterState& state);

/// Closed-form trainable parameter count for a square k kernel.
long long param_count(AdapterMethod method, int c_in, int c_out, int k, int rank);

/// Actual number of trainable elements held by the state.
long long adapter_trainable_count(const AdapterState& state);

/// Trainable tensors in canonical order, named "A"/"B" or "a1".."a4",
/// plus "m" for DoRA variants.
std::vector<std::pair<std::string, Tensor*>> adapter_tensors(AdapterState& state);
std::vector<std::pair<std::string, const Tensor*>> adapter_tensors(const AdapterState& state);

/// Graph assembly for training: leaves for every trainable factor plus the
/// composed effective-weight node. Forward value matches
/// compose_effective_weight exactly.
struct AdapterGraph {
  std::vector<std::pair<std::string, Var>> leaves;
  Var weight;
};
AdapterGraph compose_adapter_graph(const ConvWeight& base, const AdapterState& state);

// Graph ops behind compose_adapter_graph, exposed for gradient tests.
Var lorac_delta_op(const Var& a, const Var& b);
Var convlora_delta_op(const Var& a, const Var& b);
Var cp_delta_op(const Var& a1, const Var& a2, const Var& a3, const Var& a4);
Var dora_normalize_op(const Var& v, const Var& m, double epsilon, bool norm_gradient);

}  // namespace seglora
