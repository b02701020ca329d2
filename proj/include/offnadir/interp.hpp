#pragma once

#include <cmath>
#include <vector>

#include "offnadir/tensor.hpp"

namespace offnadir {

// One output position of a 1-D bilinear resample: out = (1-w)*in[i0] + w*in[i1].
struct AxisTap {
  int i0;
  int i1;
  double w;
};

// Half-pixel-centre sampling (align_corners = false), edges clamped.
inline std::vector<AxisTap> bilinear_axis(int in_len, int out_len) {
  std::vector<AxisTap> taps(static_cast<size_t>(out_len));
  double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
  for (int o = 0; o < out_len; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    int i0 = static_cast<int>(std::floor(src));
    double w = src - i0;
    int c0 = i0 < 0 ? 0 : (i0 >= in_len ? in_len - 1 : i0);
    int i1 = i0 + 1;
    int c1 = i1 < 0 ? 0 : (i1 >= in_len ? in_len - 1 : i1);
    taps[static_cast<size_t>(o)] = {c0, c1, w};
  }
  return taps;
}

// Non-differentiable resize of a [C,H,W] or [H,W] tensor to (oh, ow).
template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& in, int oh, int ow) {
  int rank = in.rank();
  if (rank != 2 && rank != 3) throw std::invalid_argument("resize_bilinear: rank 2 or 3");
  int C = rank == 3 ? in.dim(0) : 1;
  int H = in.dim(rank - 2), W = in.dim(rank - 1);
  auto ty = bilinear_axis(H, oh);
  auto tx = bilinear_axis(W, ow);
  TensorT<T> out(rank == 3 ? std::vector<int>{C, oh, ow} : std::vector<int>{oh, ow});
  const T* src = in.data();
  T* dst = out.data();
  for (int c = 0; c < C; ++c) {
    const T* sc = src + static_cast<size_t>(c) * H * W;
    T* dc = dst + static_cast<size_t>(c) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const AxisTap& a = ty[static_cast<size_t>(y)];
      for (int x = 0; x < ow; ++x) {
        const AxisTap& b = tx[static_cast<size_t>(x)];
        double top = (1.0 - b.w) * sc[a.i0 * W + b.i0] + b.w * sc[a.i0 * W + b.i1];
        double bot = (1.0 - b.w) * sc[a.i1 * W + b.i0] + b.w * sc[a.i1 * W + b.i1];
        dc[y * ow + x] = static_cast<T>((1.0 - a.w) * top + a.w * bot);
      }
    }
  }
  return out;
}

// Box resample to a smaller grid: each output cell averages the (fractional)
// source box it covers. Used for ground-sample-distance simulation.
template <typename T>
TensorT<T> box_downsample(const TensorT<T>& in, int oh, int ow) {
  int rank = in.rank();
  if (rank != 2 && rank != 3) throw std::invalid_argument("box_downsample: rank 2 or 3");
  int C = rank == 3 ? in.dim(0) : 1;
  int H = in.dim(rank - 2), W = in.dim(rank - 1);
  double sy = static_cast<double>(H) / oh, sx = static_cast<double>(W) / ow;
  TensorT<T> out(rank == 3 ? std::vector<int>{C, oh, ow} : std::vector<int>{oh, ow});
  const T* src = in.data();
  T* dst = out.data();
  for (int c = 0; c < C; ++c) {
    const T* sc = src + static_cast<size_t>(c) * H * W;
    T* dc = dst + static_cast<size_t>(c) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      double y0 = y * sy, y1 = (y + 1) * sy;
      int iy0 = static_cast<int>(std::floor(y0)), iy1 = static_cast<int>(std::ceil(y1));
      if (iy1 > H) iy1 = H;
      for (int x = 0; x < ow; ++x) {
        double x0 = x * sx, x1 = (x + 1) * sx;
        int ix0 = static_cast<int>(std::floor(x0)), ix1 = static_cast<int>(std::ceil(x1));
        if (ix1 > W) ix1 = W;
        double acc = 0.0, area = 0.0;
        for (int iy = iy0; iy < iy1; ++iy) {
          double hy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (int ix = ix0; ix < ix1; ++ix) {
            double hx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += hy * hx * sc[iy * W + ix];
            area += hy * hx;
          }
        }
        dc[y * ow + x] = static_cast<T>(acc / area);
      }
    }
  }
  return out;
}

}  // namespace offnadir
