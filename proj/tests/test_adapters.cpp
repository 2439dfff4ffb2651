// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "seglora/adapters.hpp"
#include "seglora/conv.hpp"
#include "seglora/errors.hpp"
#include "test_util.hpp"

using namespace seglora;
using namespace seglora::testutil;

namespace {

ConvWeight random_base(int cout, int cin, int kh, int kw, Rng& rng) {
  ConvWeight w;
  w.data = random_tensor({cout, cin, kh, kw}, rng, -0.5, 0.5);
  w.bias = random_tensor({cout}, rng, -0.1, 0.1);
  return w;
}

// Scalar probe loss sum(W .* G) for gradient checks against a fixed G.
Var dot_probe(const Var& w, const Tensor& g) {
  double s = 0.0;
  for (std::int64_t i = 0; i < g.size(); ++i) s += w.value()[i] * g[i];
  auto wn = w.node();
  auto gp = std::make_shared<Tensor>(g);
  return make_op(Tensor::scalar(s), {w}, [wn, gp](Node& n) {
    Tensor d = *gp;
    d *= n.grad[0];
    accumulate_grad(wn, d);
  });
}

double compose_probe_loss(const ConvWeight& base, const AdapterState& state, const Tensor& g) {
  ComposeStats st;
  Tensor w = compose_effective_weight(base, state, &st);
  double s = 0.0;
  for (std::int64_t i = 0; i < g.size(); ++i) s += w[i] * g[i];
  return s;
}

}  // namespace

TEST_CASE("lorac delta: constant factors contract to a constant") {
  // R=1, B = 1 everywhere, A = 2 everywhere -> delta = 2 everywhere.
  LoRACFactors f;
  f.A = Tensor::full({1, 3, 3}, 2.0);
  f.B = Tensor::full({4, 3, 1}, 1.0);
  Tensor d = delta_lorac(f);
  CHECK(d.shape() == std::vector<int>{4, 3, 3, 3});
  for (std::int64_t i = 0; i < d.size(); ++i) CHECK(d[i] == 2.0);
}

TEST_CASE("lorac delta: zero B gives zero update") {
  Rng rng(7);
  LoRACFactors f;
  f.A = random_tensor({2, 3, 3}, rng);
  f.B = Tensor::zeros({4, 3, 2});
  Tensor d = delta_lorac(f);
  CHECK(d.max_abs() == 0.0);
}

TEST_CASE("lorac delta matches the nested-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int R = rng.uniform_int(1, 3), cin = rng.uniform_int(1, 4), cout = rng.uniform_int(1, 4);
    const int kh = rng.uniform_int(1, 4), kw = rng.uniform_int(1, 4);
    LoRACFactors f;
    f.A = trial % 2 ? random_tensor({R, cin, kw}, rng) : random_int_tensor({R, cin, kw}, rng);
    f.B = trial % 2 ? random_tensor({cout, kh, R}, rng) : random_int_tensor({cout, kh, R}, rng);
    CHECK(max_abs_diff(delta_lorac(f), oracle_delta_lorac(f.A, f.B)) < 1e-12);
  }
}

TEST_CASE("convlora delta: one-hot B selects a kernel slice") {
  Rng rng(3);
  Tensor k = random_tensor({1, 3, 3, 3}, rng);
  ConvLoRAFactors f;
  f.A = Tensor::zeros({2, 3, 3, 3});
  for (std::int64_t i = 0; i < k.size(); ++i) f.A[i] = k[i];  // A[0] = k, A[1] = 0
  f.B = Tensor::zeros({4, 2});
  for (int o = 0; o < 4; ++o) f.B.at(o, 0) = 1.0;
  Tensor d = delta_convlora(f);
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 3; ++i)
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) CHECK(d.at(o, i, h, w) == k.at(0, i, h, w));
}

TEST_CASE("convlora delta: zero B gives zero update") {
  Rng rng(5);
  ConvLoRAFactors f;
  f.A = random_tensor({2, 3, 3, 3}, rng);
  f.B = Tensor::zeros({4, 2});
  CHECK(delta_convlora(f).max_abs() == 0.0);
}

TEST_CASE("convlora delta matches the nested-loop oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 25; ++trial) {
    const int R = rng.uniform_int(1, 3), cin = rng.uniform_int(1, 4), cout = rng.uniform_int(1, 4);
    const int kh = rng.uniform_int(1, 4), kw = rng.uniform_int(1, 4);
    ConvLoRAFactors f;
    f.A = random_tensor({R, cin, kh, kw}, rng);
    f.B = random_tensor({cout, R}, rng);
    CHECK(max_abs_diff(delta_convlora(f), oracle_delta_convlora(f.A, f.B)) < 1e-12);
  }
}

TEST_CASE("cp delta: rank-1 outer product of unit-like vectors") {
  CPFactors f;
  f.a1 = Tensor::from({1, 2}, {1.0, 2.0});
  f.a2 = Tensor::from({1, 2}, {1.0, 0.0});
  f.a3 = Tensor::from({1, 1}, {1.0});
  f.a4 = Tensor::from({1, 1}, {1.0});
  Tensor d = delta_cp(f);
  CHECK(d.at(0, 0, 0, 0) == 1.0);
  CHECK(d.at(1, 0, 0, 0) == 2.0);
  CHECK(d.at(0, 1, 0, 0) == 0.0);
  CHECK(d.at(1, 1, 0, 0) == 0.0);
}

TEST_CASE("cp delta: any zero factor gives zero update") {
  Rng rng(17);
  CPFactors f;
  f.a1 = Tensor::zeros({2, 3});
  f.a2 = random_tensor({2, 3}, rng);
  f.a3 = random_tensor({2, 3}, rng);
  f.a4 = random_tensor({2, 3}, rng);
  CHECK(delta_cp(f).max_abs() == 0.0);
}

TEST_CASE("cp delta matches the quadruple-loop oracle") {
  Rng rng(19);
  // Includes the 3x2x2x2 rank-3 case.
  {
    CPFactors f;
    f.a1 = random_tensor({3, 3}, rng);
    f.a2 = random_tensor({3, 2}, rng);
    f.a3 = random_tensor({3, 2}, rng);
    f.a4 = random_tensor({3, 2}, rng);
    CHECK(max_abs_diff(delta_cp(f), oracle_delta_cp(f.a1, f.a2, f.a3, f.a4)) < 1e-12);
  }
  for (int trial = 0; trial < 25; ++trial) {
    const int R = rng.uniform_int(1, 3);
    CPFactors f;
    f.a1 = random_tensor({R, rng.uniform_int(1, 4)}, rng);
    f.a2 = random_tensor({R, rng.uniform_int(1, 4)}, rng);
    f.a3 = random_tensor({R, rng.uniform_int(1, 4)}, rng);
    f.a4 = random_tensor({R, rng.uniform_int(1, 4)}, rng);
    CHECK(max_abs_diff(delta_cp(f), oracle_delta_cp(f.a1, f.a2, f.a3, f.a4)) < 1e-12);
  }
}

TEST_CASE("delta ops reject mismatched rank dimensions") {
  Rng rng(23);
  LoRACFactors lf;
  lf.A = random_tensor({2, 3, 3}, rng);
  lf.B = random_tensor({4, 3, 3}, rng);  // rank dim 3 != 2
  CHECK_THROWS_AS(delta_lorac(lf), UsageError);

  ConvLoRAFactors cf;
  cf.A = random_tensor({2, 3, 3, 3}, rng);
  cf.B = random_tensor({4, 1}, rng);
  CHECK_THROWS_AS(delta_convlora(cf), UsageError);

  CPFactors pf;
  pf.a1 = random_tensor({2, 4}, rng);
  pf.a2 = random_tensor({3, 3}, rng);
  pf.a3 = random_tensor({2, 3}, rng);
  pf.a4 = random_tensor({2, 3}, rng);
  CHECK_THROWS_AS(delta_cp(pf), UsageError);
}

TEST_CASE("init: zero update and exact identity for every method") {
  Rng rng(29);
  ConvWeight base = random_base(4, 3, 3, 3, rng);
  for (AdapterMethod m : all_methods()) {
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 2;
    AdapterState st = init_adapter(base, cfg, 42);
    Tensor d = adapter_delta(st);
    CHECK(d.max_abs() == 0.0);
    Tensor eff = compose_effective_weight(base, st);
    if (is_dora(m)) {
      // Identity up to the epsilon in the norm division.
      for (std::int64_t i = 0; i < eff.size(); ++i)
        CHECK(std::fabs(eff[i] - base.data[i]) <= 1e-6 * (std::fabs(base.data[i]) + 1e-12));
    } else {
      CHECK(bit_identical(eff, base.data));
    }
  }
}

TEST_CASE("init: DoRA magnitude is the per-channel Frobenius norm") {
  Rng rng(31);
  ConvWeight base = random_base(4, 3, 3, 3, rng);
  for (int i = 0; i < 27; ++i) base.data[i] = 1.0;  // W0[0] = all ones
  AdapterConfig cfg;
  cfg.method = AdapterMethod::DoRAC;
  cfg.rank = 2;
  AdapterState st = init_adapter(base, cfg, 1);
  CHECK(st.magnitude.dim(0) == 4);
  CHECK(st.magnitude[0] == doctest::Approx(std::sqrt(27.0)).epsilon(1e-12));
  CHECK(st.magnitude[0] == doctest::Approx(5.19615242270663).epsilon(1e-10));
}

TEST_CASE("init: deterministic given seed") {
  Rng rng(37);
  ConvWeight base = random_base(5, 2, 3, 3, rng);
  for (AdapterMethod m : all_methods()) {
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 3;
    AdapterState a = init_adapter(base, cfg, 99);
    AdapterState b = init_adapter(base, cfg, 99);
    auto ta = adapter_tensors(a);
    auto tb = adapter_tensors(b);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(bit_identical(*ta[i].second, *tb[i].second));
    AdapterState c = init_adapter(base, cfg, 100);
    bool all_same = true;
    auto tc = adapter_tensors(c);
    for (std::size_t i = 0; i < ta.size(); ++i) all_same = all_same && bit_identical(*ta[i].second, *tc[i].second);
    CHECK_FALSE(all_same);
  }
}

TEST_CASE("init: rejects bad rank and non-finite base") {
  Rng rng(41);
  ConvWeight base = random_base(2, 2, 3, 3, rng);
  AdapterConfig cfg;
  cfg.rank = 0;
  CHECK_THROWS_AS(init_adapter(base, cfg, 1), UsageError);
  cfg.rank = -4;
  CHECK_THROWS_AS(init_adapter(base, cfg, 1), UsageError);
  cfg.rank = 1;
  base.data[3] = std::nan("");
  CHECK_THROWS_AS(init_adapter(base, cfg, 1), UsageError);
}

TEST_CASE("compose: alpha = 2R scales the update by exactly 2") {
  Rng rng(43);
  ConvWeight base = random_base(3, 2, 3, 3, rng);
  AdapterConfig cfg;
  cfg.method = AdapterMethod::LoRAC;
  cfg.rank = 4;
  AdapterState st = init_adapter(base, cfg, 7);
  auto& f = std::get<LoRACFactors>(st.factors);
  fill_uniform(f.B, rng, -0.3, 0.3);
  Tensor d = delta_lorac(f);
  Tensor eff = compose_effective_weight(base, st);
  Tensor expect = base.data;
  d *= 2.0;
  expect += d;
  CHECK(max_abs_diff(eff, expect) < 1e-14);
}

TEST_CASE("compose: DoRA effective slice norm equals the magnitude") {
  Rng rng(47);
  ConvWeight base = random_base(4, 3, 3, 3, rng);
  AdapterConfig cfg;
  cfg.method = AdapterMethod::CPDoRA;
  cfg.rank = 2;
  AdapterState st = init_adapter(base, cfg, 3);
  auto& f = std::get<CPFactors>(st.factors);
  fill_uniform(f.a1, rng, -0.5, 0.5);
  for (int o = 0; o < 4; ++o) st.magnitude[o] = rng.uniform(0.5, 2.0);
  Tensor eff = compose_effective_weight(base, st);
  for (int o = 0; o < 4; ++o) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) s += eff.at(o, i, h, w) * eff.at(o, i, h, w);
    CHECK(std::sqrt(s) == doctest::Approx(st.magnitude[o]).epsilon(1e-6));
  }
}

TEST_CASE("compose: DoRA direction slices have near-unit norm") {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    ConvWeight base = random_base(3, 2, 3, 3, rng);
    AdapterConfig cfg;
    cfg.method = AdapterMethod::ConvDoRA;
    cfg.rank = 2;
    AdapterState st = init_adapter(base, cfg, trial);
    auto& f = std::get<ConvLoRAFactors>(st.factors);
    fill_uniform(f.B, rng, -0.2, 0.2);
    st.magnitude.fill(1.0);  // effective weight becomes the bare direction
    Tensor dir = compose_effective_weight(base, st);
    for (int o = 0; o < 3; ++o) {
      double s = 0.0;
      for (int j = 0; j < 18; ++j) s += dir[o * 18 + j] * dir[o * 18 + j];
      const double norm = std::sqrt(s);
      CHECK(norm <= 1.0 + 1e-12);
      CHECK(norm >= 1.0 - 1e-4);
    }
  }
}

TEST_CASE("merge: zero-delta adapters reproduce the base bit pattern") {
  Rng rng(59);
  ConvWeight base = random_base(4, 3, 3, 3, rng);
  for (AdapterMethod m : {AdapterMethod::LoRAC, AdapterMethod::ConvLoRA, AdapterMethod::CPLoRA}) {
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 2;
    AdapterState st = init_adapter(base, cfg, 5);
    ConvWeight merged = merge(base, st);
    CHECK(bit_identical(merged.data, base.data));
    CHECK(bit_identical(merged.bias, base.bias));
    // Re-attach a fresh zero adapter and merge again: idempotent.
    AdapterState st2 = init_adapter(merged, cfg, 6);
    ConvWeight merged2 = merge(merged, st2);
    CHECK(bit_identical(merged2.data, base.data));
  }
}

TEST_CASE("merge: forward pass matches runtime composition") {
  Rng rng(61);
  for (AdapterMethod m : all_methods()) {
    ConvWeight base = random_base(4, 3, 3, 3, rng);
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 2;
    AdapterState st = init_adapter(base, cfg, 17);
    for (auto& [name, t] : adapter_tensors(st)) fill_uniform(*t, rng, -0.4, 0.4);
    if (is_dora(m))
      for (std::int64_t i = 0; i < st.magnitude.size(); ++i) st.magnitude[i] = rng.uniform(0.5, 1.5);

    ConvWeight merged = merge(base, st);
    Tensor composed = compose_effective_weight(base, st);
    for (int probe = 0; probe < 5; ++probe) {
      Tensor x = random_tensor({3, 8, 8}, rng);
      Tensor ya = conv2d(x, merged.data, merged.bias, 1);
      Tensor yb = conv2d(x, composed, base.bias, 1);
      const double scale = std::max(ya.max_abs(), 1e-12);
      CHECK(max_abs_diff(ya, yb) / scale < 1e-5);
    }
  }
}

TEST_CASE("param_count closed forms") {
  CHECK(param_count(AdapterMethod::LoRAC, 64, 128, 3, 8) == 4608);
  CHECK(param_count(AdapterMethod::ConvLoRA, 64, 128, 3, 2) == 1408);
  CHECK(param_count(AdapterMethod::CPDoRA, 64, 128, 3, 8) == 1712);
  CHECK(param_count(AdapterMethod::CPLoRA, 64, 128, 3, 8) == 1584);
  CHECK(param_count(AdapterMethod::DoRAC, 64, 128, 3, 8) == 4608 + 128);
  CHECK(param_count(AdapterMethod::ConvDoRA, 64, 128, 3, 2) == 1408 + 128);
}

TEST_CASE("param_count matches actual trainable element counts") {
  Rng rng(67);
  for (AdapterMethod m : all_methods()) {
    for (int rank : {1, 2, 8}) {
      for (auto [cin, cout, k] : {std::tuple{3, 4, 3}, std::tuple{1, 2, 1}, std::tuple{6, 5, 3}}) {
        ConvWeight base = random_base(cout, cin, k, k, rng);
        AdapterConfig cfg;
        cfg.method = m;
        cfg.rank = rank;
        AdapterState st = init_adapter(base, cfg, 1);
        CHECK(adapter_trainable_count(st) == param_count(m, cin, cout, k, rank));
      }
    }
  }
}

TEST_CASE("gradients through composition match finite differences") {
  Rng rng(71);
  for (AdapterMethod m : all_methods()) {
    ConvWeight base;
    base.data = random_tensor({2, 2, 3, 3}, rng, -0.6, 0.6);
    base.bias = Tensor::zeros({2});
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 2;
    AdapterState st = init_adapter(base, cfg, 23);
    for (auto& [name, t] : adapter_tensors(st)) fill_uniform(*t, rng, -0.3, 0.3);
    if (is_dora(m))
      for (std::int64_t i = 0; i < st.magnitude.size(); ++i) st.magnitude[i] = rng.uniform(0.6, 1.4);
    Tensor probe = random_tensor({2, 2, 3, 3}, rng);

    AdapterGraph g = compose_adapter_graph(base, st);
    Var loss = dot_probe(g.weight, probe);
    backward(loss);

    const double step = 1e-5;
    auto tensors = adapter_tensors(st);
    REQUIRE(g.leaves.size() == tensors.size());
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
      Tensor* t = tensors[ti].second;
      const Tensor& analytic = g.leaves[ti].second.grad();
      REQUIRE(analytic.size() == t->size());
      for (std::int64_t i = 0; i < t->size(); ++i) {
        const double saved = (*t)[i];
        (*t)[i] = saved + step;
        const double up = compose_probe_loss(base, st, probe);
        (*t)[i] = saved - step;
        const double down = compose_probe_loss(base, st, probe);
        (*t)[i] = saved;
        const double fd = (up - down) / (2 * step);
        const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-8});
        CHECK(std::fabs(fd - analytic[i]) / denom < 1e-3);
      }
    }
  }
}

TEST_CASE("DoRA detached-norm gradient drops the direction term") {
  Rng rng(73);
  ConvWeight base;
  base.data = random_tensor({2, 2, 3, 3}, rng, -0.6, 0.6);
  base.bias = Tensor::zeros({2});
  AdapterConfig cfg;
  cfg.method = AdapterMethod::DoRAC;
  cfg.rank = 2;
  cfg.norm_gradient = false;
  AdapterState st = init_adapter(base, cfg, 29);
  auto& f = std::get<LoRACFactors>(st.factors);
  fill_uniform(f.B, rng, -0.3, 0.3);
  Tensor probe = random_tensor({2, 2, 3, 3}, rng);

  AdapterGraph g = compose_adapter_graph(base, st);
  backward(dot_probe(g.weight, probe));

  cfg.norm_gradient = true;
  st.config = cfg;
  AdapterGraph g2 = compose_adapter_graph(base, st);
  backward(dot_probe(g2.weight, probe));

  // The two formulations must disagree somewhere on the factor gradients.
  double diff = 0.0;
  for (std::size_t i = 0; i < g.leaves.size(); ++i)
    diff = std::max(diff, max_abs_diff(g.leaves[i].second.grad(), g2.leaves[i].second.grad()));
  CHECK(diff > 1e-9);
}

TEST_CASE("adapter graph forward equals pure composition") {
  Rng rng(79);
  for (AdapterMethod m : all_methods()) {
    ConvWeight base = random_base(3, 4, 3, 3, rng);
    AdapterConfig cfg;
    cfg.method = m;
    cfg.rank = 3;
    AdapterState st = init_adapter(base, cfg, 31);
    for (auto& [name, t] : adapter_tensors(st)) fill_uniform(*t, rng, -0.4, 0.4);
    AdapterGraph g = compose_adapter_graph(base, st);
    CHECK(max_abs_diff(g.weight.value(), compose_effective_weight(base, st)) == 0.0);
  }
}
