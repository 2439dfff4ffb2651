// Copyright (c) 2026 The seglora authors
// SPDX-License-Identifier: Apache-2.0

#include "seglora/conv.hpp"

#include <Eigen/Dense>

#include "seglora/errors.hpp"

namespace seglora {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_conv_args(const Tensor& x, int kh, int kw, int dilation) {
  if (x.rank() != 3) throw UsageError("conv2d: input must be (C,H,W), got " + shape_str(x.shape()));
  if (kh % 2 == 0 || kw % 2 == 0) throw UsageError("conv2d: kernel dims must be odd");
  if (dilation < 1) throw UsageError("conv2d: dilation must be >= 1");
}

}  // namespace

Tensor im2col(const Tensor& x, int kh, int kw, int dilation) {
  check_conv_args(x, kh, kw, dilation);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  Tensor col({c * kh * kw, h * w});
  double* out = col.data();
  const double* in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = in + static_cast<std::size_t>(ch) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        double* row = out + (static_cast<std::size_t>(ch) * kh * kw + static_cast<std::size_t>(u) * kw + v) *
                                static_cast<std::size_t>(h) * w;
        const int dy = u * dilation - pad_h;
        const int dx = v * dilation - pad_w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          double* dst = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            for (int xx = 0; xx < w; ++xx) dst[xx] = 0.0;
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + dx;
            dst[xx] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
  return col;
}

namespace {

// Scatter-add of a column matrix back to (C,H,W), the adjoint of im2col.
void col2im_accum(const Tensor& col, int c, int h, int w, int kh, int kw, int dilation, Tensor& dx) {
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const double* in = col.data();
  double* out = dx.data();
  for (int ch = 0; ch < c; ++ch) {
    double* plane = out + static_cast<std::size_t>(ch) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const double* row = in + (static_cast<std::size_t>(ch) * kh * kw + static_cast<std::size_t>(u) * kw + v) *
                                     static_cast<std::size_t>(h) * w;
        const int dy = u * dilation - pad_h;
        const int dx_off = v * dilation - pad_w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<std::size_t>(y) * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + dx_off;
            if (sx >= 0 && sx < w) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int dilation) {
  if (w.rank() != 4) throw UsageError("conv2d: weight must be (Cout,Cin,kh,kw), got " + shape_str(w.shape()));
  const int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check_conv_args(x, kh, kw, dilation);
  if (x.dim(0) != cin)
    throw UsageError("conv2d: input channels " + std::to_string(x.dim(0)) + " != weight channels " +
                     std::to_string(cin));
  if (b.defined() && b.shape() != std::vector<int>{cout}) throw UsageError("conv2d: bias shape mismatch");
  const int h = x.dim(1), wd = x.dim(2);

  Tensor col = im2col(x, kh, kw, dilation);
  Tensor out({cout, h, wd});
  ConstMatMap wm(w.data(), cout, cin * kh * kw);
  ConstMatMap cm(col.data(), cin * kh * kw, h * wd);
  MatMap om(out.data(), cout, h * wd);
  om.noalias() = wm * cm;
  if (b.defined()) {
    for (int o = 0; o < cout; ++o) om.row(o).array() += b[o];
  }
  return out;
}

Tensor conv2d_grad_weight(const Tensor& x, const Tensor& dout, int kh, int kw, int dilation) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = dout.dim(0);
  Tensor col = im2col(x, kh, kw, dilation);
  Tensor dw({cout, cin, kh, kw});
  ConstMatMap gm(dout.data(), cout, h * w);
  ConstMatMap cm(col.data(), cin * kh * kw, h * w);
  MatMap dwm(dw.data(), cout, cin * kh * kw);
  dwm.noalias() = gm * cm.transpose();
  return dw;
}

Tensor conv2d_grad_bias(const Tensor& dout) {
  const int cout = dout.dim(0), h = dout.dim(1), w = dout.dim(2);
  Tensor db({cout});
  const double* g = dout.data();
  for (int o = 0; o < cout; ++o) {
    double s = 0.0;
    const double* p = g + static_cast<std::size_t>(o) * h * w;
    for (int i = 0; i < h * w; ++i) s += p[i];
    db[o] = s;
  }
  return db;
}

Tensor conv2d_grad_input(const Tensor& w, const Tensor& dout, int dilation) {
  const int cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int h = dout.dim(1), wd = dout.dim(2);
  Tensor dcol({cin * kh * kw, h * wd});
  ConstMatMap wm(w.data(), cout, cin * kh * kw);
  ConstMatMap gm(dout.data(), cout, h * wd);
  MatMap dcm(dcol.data(), cin * kh * kw, h * wd);
  dcm.noalias() = wm.transpose() * gm;
  Tensor dx({cin, h, wd});
  col2im_accum(dcol, cin, h, wd, kh, kw, dilation, dx);
  return dx;
}

}  // namespace seglora
