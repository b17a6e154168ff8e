#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <vector>

#include "sfxgan/tensor.hpp"

namespace sfxgan::kernels {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using ConstMapRowMat = Eigen::Map<const RowMat>;

inline std::vector<float>& im2col_scratch() {
  thread_local std::vector<float> buf;
  return buf;
}

/// Lays out the receptive-field columns of one batch item as a
/// (Cin*kh*kw) x (H*W) row-major matrix, zero-filled outside the input
/// ("same" padding: pad = dilation*(k-1)/2, stride 1).
inline void im2col(const float* x, int Ci, int H, int W, int kh, int kw, int dilation,
                   float* col) {
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const int64_t HW = int64_t(H) * W;
  for (int ci = 0; ci < Ci; ++ci) {
    const float* chan = x + int64_t(ci) * HW;
    for (int ki = 0; ki < kh; ++ki) {
      const int dy = ki * dilation - pad_h;
      for (int kj = 0; kj < kw; ++kj) {
        const int dx = kj * dilation - pad_w;
        float* row = col + ((int64_t(ci) * kh + ki) * kw + kj) * HW;
        for (int y = 0; y < H; ++y) {
          float* dst = row + int64_t(y) * W;
          const int sy = y + dy;
          if (sy < 0 || sy >= H) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(W));
            continue;
          }
          const float* srow = chan + int64_t(sy) * W;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(W, W - dx);
          if (x0 > 0) std::memset(dst, 0, sizeof(float) * static_cast<size_t>(x0));
          if (x1 > x0)
            std::memcpy(dst + x0, srow + x0 + dx, sizeof(float) * static_cast<size_t>(x1 - x0));
          if (x1 < W)
            std::memset(dst + x1, 0, sizeof(float) * static_cast<size_t>(W - x1));
        }
      }
    }
  }
}

/// y = conv2d(x, w) + b, stride 1, "same" zero padding, square dilation.
/// x: (N, Ci, H, W), w: (Co, Ci, kh, kw), b: (Co) or nullptr, y: (N, Co, H, W).
inline Tensor conv2d(const Tensor& x, const Tensor& w, const float* bias, int dilation) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Ci)
    throw ValidationError("conv2d: input channels " + std::to_string(Ci) +
                          " do not match weight " + shape_str(w.shape));
  const int64_t HW = int64_t(H) * W;
  const int64_t K = int64_t(Ci) * kh * kw;
  Tensor y({N, Co, H, W});
  auto& col = im2col_scratch();
  col.resize(static_cast<size_t>(K * HW));
  ConstMapRowMat wm(w.ptr(), Co, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + int64_t(n) * Ci * HW, Ci, H, W, kh, kw, dilation, col.data());
    ConstMapRowMat cm(col.data(), K, HW);
    MapRowMat ym(y.ptr() + int64_t(n) * Co * HW, Co, HW);
    ym.noalias() = wm * cm;
    if (bias) {
      for (int co = 0; co < Co; ++co) ym.row(co).array() += bias[co];
    }
  }
  return y;
}

/// dW for conv2d: dw[co, ci, i, j] = sum_n,y,x x_pad[n, ci, ...] * g[n, co, y, x].
inline Tensor conv2d_weight_grad(const Tensor& x, const Tensor& g, int kh, int kw,
                                 int dilation) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = g.dim(1);
  const int64_t HW = int64_t(H) * W;
  const int64_t K = int64_t(Ci) * kh * kw;
  Tensor dw({Co, Ci, kh, kw});
  auto& col = im2col_scratch();
  col.resize(static_cast<size_t>(K * HW));
  MapRowMat dwm(dw.ptr(), Co, K);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + int64_t(n) * Ci * HW, Ci, H, W, kh, kw, dilation, col.data());
    ConstMapRowMat cm(col.data(), K, HW);
    ConstMapRowMat gm(g.ptr() + int64_t(n) * Co * HW, Co, HW);
    if (n == 0)
      dwm.noalias() = gm * cm.transpose();
    else
      dwm.noalias() += gm * cm.transpose();
  }
  return dw;
}

/// Spatially flips the kernel and swaps in/out channels. Applying conv2d with
/// the result computes the adjoint (input gradient) of the original conv.
inline Tensor flip_swap(const Tensor& w) {
  const int Co = w.dim(0), Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor out({Ci, Co, kh, kw});
  for (int co = 0; co < Co; ++co)
    for (int ci = 0; ci < Ci; ++ci)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j)
          out.at4(ci, co, i, j) = w.at4(co, ci, kh - 1 - i, kw - 1 - j);
  return out;
}

struct LinearWeights {
  std::vector<int> idx0, idx1;
  std::vector<float> w0, w1;
};

/// Half-pixel-center bilinear sampling weights for resizing n_src -> n_dst.
inline LinearWeights bilinear_axis(int n_src, int n_dst) {
  LinearWeights lw;
  lw.idx0.resize(static_cast<size_t>(n_dst));
  lw.idx1.resize(static_cast<size_t>(n_dst));
  lw.w0.resize(static_cast<size_t>(n_dst));
  lw.w1.resize(static_cast<size_t>(n_dst));
  const double scale = static_cast<double>(n_src) / static_cast<double>(n_dst);
  for (int i = 0; i < n_dst; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_src - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, n_src - 1);
    const double f = src - i0;
    lw.idx0[static_cast<size_t>(i)] = i0;
    lw.idx1[static_cast<size_t>(i)] = i1;
    lw.w0[static_cast<size_t>(i)] = static_cast<float>(1.0 - f);
    lw.w1[static_cast<size_t>(i)] = static_cast<float>(f);
  }
  return lw;
}

/// Bilinear resize of the two trailing spatial axes. Works for any leading
/// (flattened) channel count.
inline Tensor bilinear_resize(const Tensor& x, int H2, int W2) {
  const int nd = x.ndim();
  const int H = x.dim(nd - 2), W = x.dim(nd - 1);
  int64_t planes = 1;
  for (int i = 0; i < nd - 2; ++i) planes *= x.dim(i);
  std::vector<int> out_shape = x.shape;
  out_shape[static_cast<size_t>(nd - 2)] = H2;
  out_shape[static_cast<size_t>(nd - 1)] = W2;
  Tensor y(out_shape);
  if (H == H2 && W == W2) {
    y.data = x.data;
    return y;
  }
  const LinearWeights ly = bilinear_axis(H, H2);
  const LinearWeights lx = bilinear_axis(W, W2);
  std::vector<float> row(static_cast<size_t>(W));
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = x.ptr() + p * H * W;
    float* dst = y.ptr() + p * int64_t(H2) * W2;
    for (int i = 0; i < H2; ++i) {
      const float* r0 = src + int64_t(ly.idx0[i]) * W;
      const float* r1 = src + int64_t(ly.idx1[i]) * W;
      const float wy0 = ly.w0[i], wy1 = ly.w1[i];
      for (int xw = 0; xw < W; ++xw) row[static_cast<size_t>(xw)] = wy0 * r0[xw] + wy1 * r1[xw];
      float* orow = dst + int64_t(i) * W2;
      for (int j = 0; j < W2; ++j)
        orow[j] = lx.w0[j] * row[static_cast<size_t>(lx.idx0[j])] +
                  lx.w1[j] * row[static_cast<size_t>(lx.idx1[j])];
    }
  }
  return y;
}

/// Adjoint of bilinear_resize: scatters gradients back to the (H, W) grid.
inline Tensor bilinear_adjoint(const Tensor& g, int H, int W) {
  const int nd = g.ndim();
  const int H2 = g.dim(nd - 2), W2 = g.dim(nd - 1);
  int64_t planes = 1;
  for (int i = 0; i < nd - 2; ++i) planes *= g.dim(i);
  std::vector<int> out_shape = g.shape;
  out_shape[static_cast<size_t>(nd - 2)] = H;
  out_shape[static_cast<size_t>(nd - 1)] = W;
  Tensor y(out_shape);
  if (H == H2 && W == W2) {
    y.data = g.data;
    return y;
  }
  const LinearWeights ly = bilinear_axis(H, H2);
  const LinearWeights lx = bilinear_axis(W, W2);
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = g.ptr() + p * int64_t(H2) * W2;
    float* dst = y.ptr() + p * int64_t(H) * W;
    for (int i = 0; i < H2; ++i) {
      float* d0 = dst + int64_t(ly.idx0[i]) * W;
      float* d1 = dst + int64_t(ly.idx1[i]) * W;
      const float wy0 = ly.w0[i], wy1 = ly.w1[i];
      const float* grow = src + int64_t(i) * W2;
      for (int j = 0; j < W2; ++j) {
        const float v = grow[j];
        const int x0 = lx.idx0[j], x1 = lx.idx1[j];
        d0[x0] += wy0 * lx.w0[j] * v;
        d0[x1] += wy0 * lx.w1[j] * v;
        d1[x0] += wy1 * lx.w0[j] * v;
        d1[x1] += wy1 * lx.w1[j] * v;
      }
    }
  }
  return y;
}

/// Center crop of the trailing spatial axes to (H2, W2).
inline Tensor center_crop(const Tensor& x, int H2, int W2) {
  const int nd = x.ndim();
  const int H = x.dim(nd - 2), W = x.dim(nd - 1);
  if (H2 > H || W2 > W) throw ValidationError("center_crop: target larger than input");
  const int oy = (H - H2) / 2, ox = (W - W2) / 2;
  int64_t planes = 1;
  for (int i = 0; i < nd - 2; ++i) planes *= x.dim(i);
  std::vector<int> out_shape = x.shape;
  out_shape[static_cast<size_t>(nd - 2)] = H2;
  out_shape[static_cast<size_t>(nd - 1)] = W2;
  Tensor y(out_shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < H2; ++i)
      std::memcpy(y.ptr() + (p * H2 + i) * W2,
                  x.ptr() + (p * H + (i + oy)) * W + ox,
                  sizeof(float) * static_cast<size_t>(W2));
  return y;
}

/// Adjoint of center_crop: embeds into a zero (H, W) canvas at the center.
inline Tensor center_pad(const Tensor& g, int H, int W) {
  const int nd = g.ndim();
  const int H2 = g.dim(nd - 2), W2 = g.dim(nd - 1);
  const int oy = (H - H2) / 2, ox = (W - W2) / 2;
  int64_t planes = 1;
  for (int i = 0; i < nd - 2; ++i) planes *= g.dim(i);
  std::vector<int> out_shape = g.shape;
  out_shape[static_cast<size_t>(nd - 2)] = H;
  out_shape[static_cast<size_t>(nd - 1)] = W;
  Tensor y(out_shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < H2; ++i)
      std::memcpy(y.ptr() + (p * H + (i + oy)) * W + ox,
                  g.ptr() + (p * H2 + i) * W2,
                  sizeof(float) * static_cast<size_t>(W2));
  return y;
}

}  // namespace sfxgan::kernels
