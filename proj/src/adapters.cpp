// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#include "seglora/adapters.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>

#include "seglora/errors.hpp"
#include "seglora/rng.hpp"

namespace seglora {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

}  // namespace

bool is_dora(AdapterMethod m) {
  return m == AdapterMethod::DoRAC || m == AdapterMethod::ConvDoRA || m == AdapterMethod::CPDoRA;
}

AdapterMethod parse_method(const std::string& name) {
  std::string s;
  for (char c : name)
    if (c != '-' && c != '_') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "lorac") return AdapterMethod::LoRAC;
  if (s == "convlora") return AdapterMethod::ConvLoRA;
  if (s == "cplora") return AdapterMethod::CPLoRA;
  if (s == "dorac") return AdapterMethod::DoRAC;
  if (s == "convdora") return AdapterMethod::ConvDoRA;
  if (s == "cpdora") return AdapterMethod::CPDoRA;
  throw UsageError("unknown adapter method '" + name +
                   "' (expected lorac|convlora|cplora|dorac|convdora|cpdora)");
}

std::string method_name(AdapterMethod m) {
  switch (m) {
    case AdapterMethod::LoRAC: return "lorac";
    case AdapterMethod::ConvLoRA: return "convlora";
    case AdapterMethod::CPLoRA: return "cplora";
    case AdapterMethod::DoRAC: return "dorac";
    case AdapterMethod::ConvDoRA: return "convdora";
    case AdapterMethod::CPDoRA: return "cpdora";
  }
  return "?";
}

std::vector<AdapterMethod> all_methods() {
  return {AdapterMethod::LoRAC,  AdapterMethod::ConvLoRA, AdapterMethod::CPLoRA,
          AdapterMethod::DoRAC,  AdapterMethod::ConvDoRA, AdapterMethod::CPDoRA};
}

Tensor delta_lorac(const LoRACFactors& f) {
  require(f.A.rank() == 3 && f.B.rank() == 3, "delta_lorac: A must be (R,c_in,k_w) and B (c_out,k_h,R)");
  const int R = f.A.dim(0), cin = f.A.dim(1), kw = f.A.dim(2);
  const int cout = f.B.dim(0), kh = f.B.dim(1);
  require(f.B.dim(2) == R, "delta_lorac: rank dims disagree (A has " + std::to_string(R) + ", B has " +
                               std::to_string(f.B.dim(2)) + ")");
  // (c_out*k_h, R) x (R, c_in*k_w), then scatter across the kernel axes.
  Tensor prod({cout * kh, cin * kw});
  ConstMatMap bm(f.B.data(), cout * kh, R);
  ConstMatMap am(f.A.data(), R, cin * kw);
  MatMap pm(prod.data(), cout * kh, cin * kw);
  pm.noalias() = bm * am;
  Tensor d({cout, cin, kh, kw});
  for (int o = 0; o < cout; ++o)
    for (int h = 0; h < kh; ++h)
      for (int i = 0; i < cin; ++i)
        for (int w = 0; w < kw; ++w) d.at(o, i, h, w) = prod.at(o * kh + h, i * kw + w);
  return d;
}

Tensor delta_convlora(const ConvLoRAFactors& f) {
  require(f.A.rank() == 4 && f.B.rank() == 2, "delta_convlora: A must be (R,c_in,k_h,k_w) and B (c_out,R)");
  const int R = f.A.dim(0), cin = f.A.dim(1), kh = f.A.dim(2), kw = f.A.dim(3);
  const int cout = f.B.dim(0);
  require(f.B.dim(1) == R, "delta_convlora: rank dims disagree (A has " + std::to_string(R) + ", B has " +
                               std::to_string(f.B.dim(1)) + ")");
  Tensor d({cout, cin, kh, kw});
  ConstMatMap bm(f.B.data(), cout, R);
  ConstMatMap am(f.A.data(), R, cin * kh * kw);
  MatMap dm(d.data(), cout, cin * kh * kw);
  dm.noalias() = bm * am;
  return d;
}

Tensor delta_cp(const CPFactors& f) {
  require(f.a1.rank() == 2 && f.a2.rank() == 2 && f.a3.rank() == 2 && f.a4.rank() == 2,
          "delta_cp: factors must be rank-2 (R, dim)");
  const int R = f.a1.dim(0);
  require(f.a2.dim(0) == R && f.a3.dim(0) == R && f.a4.dim(0) == R, "delta_cp: rank dims disagree");
  const int cout = f.a1.dim(1), cin = f.a2.dim(1), kh = f.a3.dim(1), kw = f.a4.dim(1);
  Tensor d({cout, cin, kh, kw});
  for (int r = 0; r < R; ++r)
    for (int o = 0; o < cout; ++o) {
      const double p1 = f.a1.at(r, o);
      if (p1 == 0.0) continue;
      for (int i = 0; i < cin; ++i) {
        const double p12 = p1 * f.a2.at(r, i);
        for (int h = 0; h < kh; ++h) {
          const double p123 = p12 * f.a3.at(r, h);
          for (int w = 0; w < kw; ++w) d.at(o, i, h, w) += p123 * f.a4.at(r, w);
        }
      }
    }
  return d;
}

Tensor adapter_delta(const AdapterState& state) {
  if (const auto* f = std::get_if<LoRACFactors>(&state.factors)) return delta_lorac(*f);
  if (const auto* f = std::get_if<ConvLoRAFactors>(&state.factors)) return delta_convlora(*f);
  return delta_cp(std::get<CPFactors>(state.factors));
}

namespace {

Tensor dora_normalize_value(const Tensor& v, const Tensor& m, double eps, ComposeStats* stats) {
  const int cout = v.dim(0);
  const std::int64_t slice = v.size() / cout;
  Tensor out(v.shape());
  for (int o = 0; o < cout; ++o) {
    const double* src = v.data() + o * slice;
    double* dst = out.data() + o * slice;
    double s = 0.0;
    for (std::int64_t j = 0; j < slice; ++j) s += src[j] * src[j];
    const double norm = std::sqrt(s);
    if (norm < eps && stats) stats->degenerate_channels++;
    const double f = m[o] / (norm + eps);
    for (std::int64_t j = 0; j < slice; ++j) dst[j] = src[j] * f;
  }
  return out;
}

void check_factor_dims(const ConvWeight& base, const AdapterState& state) {
  const int cout = base.out_ch(), cin = base.in_ch(), kh = base.kh(), kw = base.kw();
  if (const auto* f = std::get_if<LoRACFactors>(&state.factors)) {
    require(f->A.shape() == std::vector<int>{f->A.dim(0), cin, kw} &&
                f->B.shape() == std::vector<int>{cout, kh, f->A.dim(0)},
            "adapter factors do not match base weight " + shape_str(base.data.shape()));
  } else if (const auto* f = std::get_if<ConvLoRAFactors>(&state.factors)) {
    require(f->A.shape() == std::vector<int>{f->A.dim(0), cin, kh, kw} &&
                f->B.shape() == std::vector<int>{cout, f->A.dim(0)},
            "adapter factors do not match base weight " + shape_str(base.data.shape()));
  } else {
    const auto& cp = std::get<CPFactors>(state.factors);
    require(cp.a1.dim(1) == cout && cp.a2.dim(1) == cin && cp.a3.dim(1) == kh && cp.a4.dim(1) == kw,
            "adapter factors do not match base weight " + shape_str(base.data.shape()));
  }
}

}  // namespace

AdapterState init_adapter(const ConvWeight& base, const AdapterConfig& config, std::uint64_t seed) {
  require(config.rank >= 1, "adapter rank must be >= 1, got " + std::to_string(config.rank));
  require(base.data.rank() == 4, "base weight must be rank-4, got " + shape_str(base.data.shape()));
  const int cout = base.out_ch(), cin = base.in_ch(), kh = base.kh(), kw = base.kw();
  require(cout >= 1 && cin >= 1 && kh >= 1 && kw >= 1, "base weight dims must be >= 1");
  require(base.data.all_finite(), "base weight contains non-finite values");
  const double alpha = config.resolved_alpha();
  require(std::isfinite(alpha) && alpha > 0.0, "adapter alpha must be finite and positive");
  require(config.epsilon > 0.0, "adapter epsilon must be positive");

  Rng rng(seed);
  const int R = config.rank;
  AdapterState st;
  st.config = config;
  switch (config.method) {
    case AdapterMethod::LoRAC:
    case AdapterMethod::DoRAC: {
      LoRACFactors f;
      f.A = Tensor({R, cin, kw});
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kw);
      for (std::int64_t i = 0; i < f.A.size(); ++i) f.A[i] = rng.uniform(-bound, bound);
      f.B = Tensor::zeros({cout, kh, R});
      st.factors = std::move(f);
      break;
    }
    case AdapterMethod::ConvLoRA:
    case AdapterMethod::ConvDoRA: {
      ConvLoRAFactors f;
      f.A = Tensor({R, cin, kh, kw});
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
      for (std::int64_t i = 0; i < f.A.size(); ++i) f.A[i] = rng.uniform(-bound, bound);
      f.B = Tensor::zeros({cout, R});
      st.factors = std::move(f);
      break;
    }
    case AdapterMethod::CPLoRA:
    case AdapterMethod::CPDoRA: {
      CPFactors f;
      f.a1 = Tensor::zeros({R, cout});
      f.a2 = Tensor({R, cin});
      f.a3 = Tensor({R, kh});
      f.a4 = Tensor({R, kw});
      const double b2 = 1.0 / std::sqrt(static_cast<double>(cin));
      const double b3 = 1.0 / std::sqrt(static_cast<double>(kh));
      const double b4 = 1.0 / std::sqrt(static_cast<double>(kw));
      for (std::int64_t i = 0; i < f.a2.size(); ++i) f.a2[i] = rng.uniform(-b2, b2);
      for (std::int64_t i = 0; i < f.a3.size(); ++i) f.a3[i] = rng.uniform(-b3, b3);
      for (std::int64_t i = 0; i < f.a4.size(); ++i) f.a4[i] = rng.uniform(-b4, b4);
      st.factors = std::move(f);
      break;
    }
  }
  if (is_dora(config.method)) {
    st.magnitude = Tensor({cout});
    const std::int64_t slice = base.data.size() / cout;
    for (int o = 0; o < cout; ++o) {
      double s = 0.0;
      const double* p = base.data.data() + o * slice;
      for (std::int64_t j = 0; j < slice; ++j) s += p[j] * p[j];
      st.magnitude[o] = std::sqrt(s);
    }
  }
  return st;
}

Tensor compose_effective_weight(const ConvWeight& base, const AdapterState& state, ComposeStats* stats) {
  check_factor_dims(base, state);
  const double s = state.config.scale();
  Tensor scaled = adapter_delta(state);
  scaled *= s;
  Tensor v = base.data;
  v += scaled;
  if (!is_dora(state.config.method)) return v;
  require(state.magnitude.shape() == std::vector<int>{base.out_ch()},
          "DoRA magnitude must have one entry per output channel");
  return dora_normalize_value(v, state.magnitude, state.config.epsilon, stats);
}

ConvWeight merge(const ConvWeight& base, const AdapterState& state) {
  ConvWeight out;
  out.data = compose_effective_weight(base, state);
  out.bias = base.bias;
  return out;
}

long long param_count(AdapterMethod method, int c_in, int c_out, int k, int rank) {
  const long long cin = c_in, cout = c_out, kk = k, r = rank;
  long long n = 0;
  switch (method) {
    case AdapterMethod::LoRAC:
    case AdapterMethod::DoRAC: n = (cin + cout) * kk * r; break;
    case AdapterMethod::ConvLoRA:
    case AdapterMethod::ConvDoRA: n = (cin * kk * kk + cout) * r; break;
    case AdapterMethod::CPLoRA:
    case AdapterMethod::CPDoRA: n = (cin + cout + 2 * kk) * r; break;
  }
  if (is_dora(method)) n += cout;
  return n;
}

long long adapter_trainable_count(const AdapterState& state) {
  long long n = 0;
  for (const auto& [name, t] : adapter_tensors(state)) n += t->size();
  return n;
}

std::vector<std::pair<std::string, Tensor*>> adapter_tensors(AdapterState& state) {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (auto* f = std::get_if<LoRACFactors>(&state.factors)) {
    out.emplace_back("A", &f->A);
    out.emplace_back("B", &f->B);
  } else if (auto* f = std::get_if<ConvLoRAFactors>(&state.factors)) {
    out.emplace_back("A", &f->A);
    out.emplace_back("B", &f->B);
  } else {
    auto& cp = std::get<CPFactors>(state.factors);
    out.emplace_back("a1", &cp.a1);
    out.emplace_back("a2", &cp.a2);
    out.emplace_back("a3", &cp.a3);
    out.emplace_back("a4", &cp.a4);
  }
  if (is_dora(state.config.method)) out.emplace_back("m", &state.magnitude);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> adapter_tensors(const AdapterState& state) {
  auto mut = adapter_tensors(const_cast<AdapterState&>(state));
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

// ---- graph ops ----

Var lorac_delta_op(const Var& a, const Var& b) {
  LoRACFactors f{a.value(), b.value()};
  Tensor d = delta_lorac(f);
  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(d), {a, b}, [an, bn](Node& n) {
    const Tensor& A = an->value;
    const Tensor& B = bn->value;
    const int R = A.dim(0), cin = A.dim(1), kw = A.dim(2);
    const int cout = B.dim(0), kh = B.dim(1);
    // Gather the kernel-axis scatter back into matrix layout.
    Tensor dprod({cout * kh, cin * kw});
    for (int o = 0; o < cout; ++o)
      for (int h = 0; h < kh; ++h)
        for (int i = 0; i < cin; ++i)
          for (int w = 0; w < kw; ++w) dprod.at(o * kh + h, i * kw + w) = n.grad.at(o, i, h, w);
    ConstMatMap dp(dprod.data(), cout * kh, cin * kw);
    if (bn->requires_grad) {
      Tensor db({cout, kh, R});
      ConstMatMap am(A.data(), R, cin * kw);
      MatMap dbm(db.data(), cout * kh, R);
      dbm.noalias() = dp * am.transpose();
      accumulate_grad(bn, db);
    }
    if (an->requires_grad) {
      Tensor da({R, cin, kw});
      ConstMatMap bm(B.data(), cout * kh, R);
      MatMap dam(da.data(), R, cin * kw);
      dam.noalias() = bm.transpose() * dp;
      accumulate_grad(an, da);
    }
  });
}

Var convlora_delta_op(const Var& a, const Var& b) {
  ConvLoRAFactors f{a.value(), b.value()};
  Tensor d = delta_convlora(f);
  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(d), {a, b}, [an, bn](Node& n) {
    const Tensor& A = an->value;
    const Tensor& B = bn->value;
    const int R = A.dim(0), cin = A.dim(1), kh = A.dim(2), kw = A.dim(3);
    const int cout = B.dim(0);
    ConstMatMap dg(n.grad.data(), cout, cin * kh * kw);
    if (bn->requires_grad) {
      Tensor db({cout, R});
      ConstMatMap am(A.data(), R, cin * kh * kw);
      MatMap dbm(db.data(), cout, R);
      dbm.noalias() = dg * am.transpose();
      accumulate_grad(bn, db);
    }
    if (an->requires_grad) {
      Tensor da({R, cin, kh, kw});
      ConstMatMap bm(B.data(), cout, R);
      MatMap dam(da.data(), R, cin * kh * kw);
      dam.noalias() = bm.transpose() * dg;
      accumulate_grad(an, da);
    }
  });
}

Var cp_delta_op(const Var& a1, const Var& a2, const Var& a3, const Var& a4) {
  CPFactors f{a1.value(), a2.value(), a3.value(), a4.value()};
  Tensor d = delta_cp(f);
  auto n1 = a1.node();
  auto n2 = a2.node();
  auto n3 = a3.node();
  auto n4 = a4.node();
  return make_op(std::move(d), {a1, a2, a3, a4}, [n1, n2, n3, n4](Node& n) {
    const Tensor& v1 = n1->value;
    const Tensor& v2 = n2->value;
    const Tensor& v3 = n3->value;
    const Tensor& v4 = n4->value;
    const int R = v1.dim(0), cout = v1.dim(1), cin = v2.dim(1), kh = v3.dim(1), kw = v4.dim(1);
    Tensor d1(v1.shape()), d2(v2.shape()), d3(v3.shape()), d4(v4.shape());
    for (int r = 0; r < R; ++r)
      for (int o = 0; o < cout; ++o) {
        const double p1 = v1.at(r, o);
        for (int i = 0; i < cin; ++i) {
          const double p2 = v2.at(r, i);
          for (int h = 0; h < kh; ++h) {
            const double p3 = v3.at(r, h);
            for (int w = 0; w < kw; ++w) {
              const double p4 = v4.at(r, w);
              const double g = n.grad.at(o, i, h, w);
              d1.at(r, o) += g * p2 * p3 * p4;
              d2.at(r, i) += g * p1 * p3 * p4;
              d3.at(r, h) += g * p1 * p2 * p4;
              d4.at(r, w) += g * p1 * p2 * p3;
            }
          }
        }
      }
    accumulate_grad(n1, d1);
    accumulate_grad(n2, d2);
    accumulate_grad(n3, d3);
    accumulate_grad(n4, d4);
  });
}

Var dora_normalize_op(const Var& v, const Var& m, double epsilon, bool norm_gradient) {
  Tensor out = dora_normalize_value(v.value(), m.value(), epsilon, nullptr);
  auto vn = v.node();
  auto mn = m.node();
  return make_op(std::move(out), {v, m}, [vn, mn, epsilon, norm_gradient](Node& n) {
    const Tensor& V = vn->value;
    const Tensor& M = mn->value;
    const int cout = V.dim(0);
    const std::int64_t slice = V.size() / cout;
    Tensor dv(V.shape());
    Tensor dm(M.shape());
    for (int o = 0; o < cout; ++o) {
      const double* vp = V.data() + o * slice;
      const double* gp = n.grad.data() + o * slice;
      double s = 0.0, dot = 0.0;
      for (std::int64_t j = 0; j < slice; ++j) {
        s += vp[j] * vp[j];
        dot += gp[j] * vp[j];
      }
      const double norm = std::sqrt(s);
      const double denom = norm + epsilon;
      dm[o] = dot / denom;
      double* dvp = dv.data() + o * slice;
      const double lead = M[o] / denom;
      const double corr = (norm_gradient && norm > 0.0) ? M[o] * dot / (denom * denom * norm) : 0.0;
      for (std::int64_t j = 0; j < slice; ++j) dvp[j] = lead * gp[j] - corr * vp[j];
    }
    accumulate_grad(vn, dv);
    accumulate_grad(mn, dm);
  });
}

AdapterGraph compose_adapter_graph(const ConvWeight& base, const AdapterState& state) {
  check_factor_dims(base, state);
  AdapterGraph g;
  Var delta;
  if (const auto* f = std::get_if<LoRACFactors>(&state.factors)) {
    Var a = Var::leaf(f->A, true);
    Var b = Var::leaf(f->B, true);
    g.leaves.emplace_back("A", a);
    g.leaves.emplace_back("B", b);
    delta = lorac_delta_op(a, b);
  } else if (const auto* f = std::get_if<ConvLoRAFactors>(&state.factors)) {
    Var a = Var::leaf(f->A, true);
    Var b = Var::leaf(f->B, true);
    g.leaves.emplace_back("A", a);
    g.leaves.emplace_back("B", b);
    delta = convlora_delta_op(a, b);
  } else {
    const auto& cp = std::get<CPFactors>(state.factors);
    Var a1 = Var::leaf(cp.a1, true);
    Var a2 = Var::leaf(cp.a2, true);
    Var a3 = Var::leaf(cp.a3, true);
    Var a4 = Var::leaf(cp.a4, true);
    g.leaves.emplace_back("a1", a1);
    g.leaves.emplace_back("a2", a2);
    g.leaves.emplace_back("a3", a3);
    g.leaves.emplace_back("a4", a4);
    delta = cp_delta_op(a1, a2, a3, a4);
  }
  Var w0 = Var::leaf(base.data, false);
  Var v = add_op(w0, scale_op(delta, state.config.scale()));
  if (is_dora(state.config.method)) {
    Var m = Var::leaf(state.magnitude, true);
    g.leaves.emplace_back("m", m);
    g.weight = dora_normalize_op(v, m, state.config.epsilon, state.config.norm_gradient);
  } else {
    g.weight = v;
  }
  return g;
}

}  // namespace seglora
