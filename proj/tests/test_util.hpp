// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "seglora/rng.hpp"
#include "seglora/tensor.hpp"

namespace seglora::testutil {

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

inline Tensor random_int_tensor(std::vector<int> shape, Rng& rng, int lo = -3, int hi = 3) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(rng.uniform_int(lo, hi));
  return t;
}

// Brute-force references for the three update contractions. Index-by-index
// nested loops, deliberately independent of the library's GEMM path.

// delta[o,i,h,w] = sum_r B[o,h,r] * A[r,i,w]
inline Tensor oracle_delta_lorac(const Tensor& A, const Tensor& B) {
  const int R = A.dim(0), cin = A.dim(1), kw = A.dim(2);
  const int cout = B.dim(0), kh = B.dim(1);
  Tensor d({cout, cin, kh, kw});
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int h = 0; h < kh; ++h)
        for (int w = 0; w < kw; ++w) {
          double s = 0.0;
          for (int r = 0; r < R; ++r) s += B.at(o, h, r) * A.at(r, i, w);
          d.at(o, i, h, w) = s;
        }
  return d;
}

// delta[o,i,h,w] = sum_r B[o,r] * A[r,i,h,w]
inline Tensor oracle_delta_convlora(const Tensor& A, const Tensor& B) {
  const int R = A.dim(0), cin = A.dim(1), kh = A.dim(2), kw = A.dim(3);
  const int cout = B.dim(0);
  Tensor d({cout, cin, kh, kw});
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int h = 0; h < kh; ++h)
        for (int w = 0; w < kw; ++w) {
          double s = 0.0;
          for (int r = 0; r < R; ++r) s += B.at(o, r) * A.at(r, i, h, w);
          d.at(o, i, h, w) = s;
        }
  return d;
}

// delta[o,i,h,w] = sum_r a1[r,o] * a2[r,i] * a3[r,h] * a4[r,w]
inline Tensor oracle_delta_cp(const Tensor& a1, const Tensor& a2, const Tensor& a3, const Tensor& a4) {
  const int R = a1.dim(0), cout = a1.dim(1), cin = a2.dim(1), kh = a3.dim(1), kw = a4.dim(1);
  Tensor d({cout, cin, kh, kw});
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i)
      for (int h = 0; h < kh; ++h)
        for (int w = 0; w < kw; ++w) {
          double s = 0.0;
          for (int r = 0; r < R; ++r) s += a1.at(r, o) * a2.at(r, i) * a3.at(r, h) * a4.at(r, w);
          d.at(o, i, h, w) = s;
        }
  return d;
}

}  // namespace seglora::testutil
