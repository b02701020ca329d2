#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <optional>

#include "offnadir/gemm.hpp"
#include "offnadir/interp.hpp"
#include "offnadir/rng.hpp"
#include "offnadir/tape.hpp"
#include "offnadir/threading.hpp"

namespace offnadir {

namespace opsdetail {

// In-bounds output range for one kernel tap: iw = ow*stride - pad + j sits in
// [0, W) exactly for ow in [lo, hi).
inline void tap_range(int extent, int stride, int pad, int j, int count, int& lo, int& hi) {
  lo = pad > j ? (pad - j + stride - 1) / stride : 0;
  int last = extent - 1 + pad - j;
  hi = last >= 0 ? last / stride + 1 : 0;
  if (lo > count) lo = count;
  if (hi > count) hi = count;
  if (hi < lo) hi = lo;
}

// cols layout: [C*kh*kw, Ho*Wo], row r = (c*kh + i)*kw + j
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* cols) {
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      int oh_lo, oh_hi;
      tap_range(H, stride, pad, i, Ho, oh_lo, oh_hi);
      for (int j = 0; j < kw; ++j) {
        int ow_lo, ow_hi;
        tap_range(W, stride, pad, j, Wo, ow_lo, ow_hi);
        T* row = cols + (static_cast<size_t>(c) * kh * kw + i * kw + j) *
                            (static_cast<size_t>(Ho) * Wo);
        std::memset(row, 0, sizeof(T) * static_cast<size_t>(oh_lo) * Wo);
        std::memset(row + static_cast<size_t>(oh_hi) * Wo, 0,
                    sizeof(T) * static_cast<size_t>(Ho - oh_hi) * Wo);
        for (int oh = oh_lo; oh < oh_hi; ++oh) {
          int ih = oh * stride - pad + i;
          T* dst = row + static_cast<size_t>(oh) * Wo;
          const T* src = xc + static_cast<size_t>(ih) * W - pad + j;
          if (ow_lo) std::memset(dst, 0, sizeof(T) * static_cast<size_t>(ow_lo));
          if (ow_hi < Wo)
            std::memset(dst + ow_hi, 0, sizeof(T) * static_cast<size_t>(Wo - ow_hi));
          if (stride == 1) {
            std::memcpy(dst + ow_lo, src + ow_lo, sizeof(T) * static_cast<size_t>(ow_hi - ow_lo));
          } else {
            for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c) {
    T* xc = x + static_cast<size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      int oh_lo, oh_hi;
      tap_range(H, stride, pad, i, Ho, oh_lo, oh_hi);
      for (int j = 0; j < kw; ++j) {
        int ow_lo, ow_hi;
        tap_range(W, stride, pad, j, Wo, ow_lo, ow_hi);
        const T* row = cols + (static_cast<size_t>(c) * kh * kw + i * kw + j) *
                                  (static_cast<size_t>(Ho) * Wo);
        for (int oh = oh_lo; oh < oh_hi; ++oh) {
          int ih = oh * stride - pad + i;
          const T* src = row + static_cast<size_t>(oh) * Wo;
          T* dst = xc + static_cast<size_t>(ih) * W - pad + j;
          if (stride == 1) {
            for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += src[ow];
          } else {
            for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace opsdetail

// y = w (*) x + b. x [N,C,H,W], w [K,C,kh,kw], b [K] (pass invalid Var for no
// bias). Output size must divide exactly: (H + 2*pad - kh) % stride == 0.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  const TensorT<T>& wv = w.val();
  if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument("conv2d: rank-4 inputs");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int K = wv.dim(0), Cw = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (C != Cw) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
    throw std::invalid_argument("conv2d: output size is not an integer for " +
                                shape_str(xv.shape()) + " kernel " + shape_str(wv.shape()) +
                                " stride " + std::to_string(stride) + " pad " +
                                std::to_string(pad));
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  bool has_b = b.valid();
  if (has_b && (b.val().rank() != 1 || b.val().dim(0) != K))
    throw std::invalid_argument("conv2d: bias shape");

  int ckk = C * kh * kw;
  size_t plane = static_cast<size_t>(Ho) * Wo;
  TensorT<T> y({N, K, Ho, Wo});
  const T* bp = has_b ? b.val().data() : nullptr;
  {
    const T* xp = xv.data();
    const T* wp = wv.data();
    T* yp = y.data();
    parallel_for(N, [&](int64_t n) {
      auto& cols = opsdetail::scratch<T>();
      cols.resize(static_cast<size_t>(ckk) * plane);
      opsdetail::im2col(xp + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride,
                        pad, Ho, Wo, cols.data());
      T* yn = yp + static_cast<size_t>(n) * K * plane;
      gemm(false, false, K, static_cast<int>(plane), ckk, T(1), wp, ckk, cols.data(),
           static_cast<int>(plane), T(0), yn, static_cast<int>(plane));
      if (bp)
        for (int k = 0; k < K; ++k) {
          T bk = bp[k];
          T* dst = yn + static_cast<size_t>(k) * plane;
          for (size_t i = 0; i < plane; ++i) dst[i] += bk;
        }
    });
  }

  int xid = x.id, wid = w.id, bid = has_b ? b.id : -1;
  return tp.record(std::move(y), has_b ? std::vector<int>{xid, wid, bid} : std::vector<int>{xid, wid},
                   [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    const TensorT<T>& xval = t.node(xid).value;
    const TensorT<T>& wval = t.node(wid).value;
    const T* gp = g.data();
    if (bid >= 0 && t.requires_grad(bid)) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          const T* src = gp + (static_cast<size_t>(n) * K + k) * plane;
          double acc = 0.0;
          for (size_t i = 0; i < plane; ++i) acc += src[i];
          db[static_cast<size_t>(k)] += static_cast<T>(acc);
        }
    }
    if (t.requires_grad(wid)) {
      TensorT<T>& dw = t.grad_buffer(wid);
      auto& cols = opsdetail::scratch<T>();
      cols.resize(static_cast<size_t>(ckk) * plane);
      for (int n = 0; n < N; ++n) {  // fixed order accumulation
        opsdetail::im2col(xval.data() + static_cast<size_t>(n) * C * H * W, C, H, W, kh,
                          kw, stride, pad, Ho, Wo, cols.data());
        gemm(false, true, K, ckk, static_cast<int>(plane), T(1),
             gp + static_cast<size_t>(n) * K * plane, static_cast<int>(plane), cols.data(),
             static_cast<int>(plane), T(1), dw.data(), ckk);
      }
    }
    if (t.requires_grad(xid)) {
      TensorT<T>& dx = t.grad_buffer(xid);
      T* dxp = dx.data();
      parallel_for(N, [&](int64_t n) {
        auto& cols = opsdetail::scratch<T>();
        cols.resize(static_cast<size_t>(ckk) * plane);
        gemm(true, false, ckk, static_cast<int>(plane), K, T(1), wval.data(), ckk,
             gp + static_cast<size_t>(n) * K * plane, static_cast<int>(plane), T(0),
             cols.data(), static_cast<int>(plane));
        opsdetail::col2im_add(cols.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                              dxp + static_cast<size_t>(n) * C * H * W);
      });
    }
  });
}

// y[n,o] = sum_i x[n,i] w[o,i] + b[o]. x [N,Din], w [Dout,Din], b [Dout].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  const TensorT<T>& wv = w.val();
  if (xv.rank() != 2 || wv.rank() != 2) throw std::invalid_argument("linear: rank-2 inputs");
  int N = xv.dim(0), Din = xv.dim(1), Dout = wv.dim(0);
  if (wv.dim(1) != Din) throw std::invalid_argument("linear: dim mismatch");
  bool has_b = b.valid();
  if (has_b && (b.val().rank() != 1 || b.val().dim(0) != Dout))
    throw std::invalid_argument("linear: bias shape");
  TensorT<T> y({N, Dout});
  gemm(false, true, N, Dout, Din, T(1), xv.data(), Din, wv.data(), Din, T(0), y.data(), Dout);
  if (has_b) {
    const T* bp = b.val().data();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Dout; ++o) y.at2(n, o) += bp[o];
  }
  int xid = x.id, wid = w.id, bid = has_b ? b.id : -1;
  return tp.record(std::move(y), has_b ? std::vector<int>{xid, wid, bid} : std::vector<int>{xid, wid},
                   [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    const TensorT<T>& xval = t.node(xid).value;
    const TensorT<T>& wval = t.node(wid).value;
    if (bid >= 0 && t.requires_grad(bid)) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) db[static_cast<size_t>(o)] += g.at2(n, o);
    }
    if (t.requires_grad(wid)) {
      TensorT<T>& dw = t.grad_buffer(wid);
      gemm(true, false, Dout, Din, N, T(1), g.data(), Dout, xval.data(), Din, T(1),
           dw.data(), Din);
    }
    if (t.requires_grad(xid)) {
      TensorT<T>& dx = t.grad_buffer(xid);
      gemm(false, false, N, Din, Dout, T(1), g.data(), Dout, wval.data(), Din, T(1),
           dx.data(), Din);
    }
  });
}

// 2x (or factor-x) bilinear upsampling, half-pixel centres, clamped edges.
template <typename T>
Var<T> bilinear_upsample(Var<T> x, int factor) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  if (xv.rank() != 4) throw std::invalid_argument("bilinear_upsample: rank-4 input");
  if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor >= 1");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int Ho = H * factor, Wo = W * factor;
  auto ty = bilinear_axis(H, Ho);
  auto tx = bilinear_axis(W, Wo);
  TensorT<T> y({N, C, Ho, Wo});
  const T* xp = xv.data();
  T* yp = y.data();
  size_t planes = static_cast<size_t>(N) * C;
  parallel_for(static_cast<int64_t>(planes), [&](int64_t p) {
    const T* src = xp + static_cast<size_t>(p) * H * W;
    T* dst = yp + static_cast<size_t>(p) * Ho * Wo;
    for (int yo = 0; yo < Ho; ++yo) {
      const AxisTap& a = ty[static_cast<size_t>(yo)];
      for (int xo = 0; xo < Wo; ++xo) {
        const AxisTap& bx = tx[static_cast<size_t>(xo)];
        double top = (1.0 - bx.w) * src[a.i0 * W + bx.i0] + bx.w * src[a.i0 * W + bx.i1];
        double bot = (1.0 - bx.w) * src[a.i1 * W + bx.i0] + bx.w * src[a.i1 * W + bx.i1];
        dst[yo * Wo + xo] = static_cast<T>((1.0 - a.w) * top + a.w * bot);
      }
    }
  });
  int xid = x.id;
  return tp.record(std::move(y), {xid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(xid)) return;
    const TensorT<T>& g = t.node(self).grad;
    TensorT<T>& dx = t.grad_buffer(xid);
    const T* gp = g.data();
    T* dxp = dx.data();
    parallel_for(static_cast<int64_t>(planes), [&](int64_t p) {
      const T* gsrc = gp + static_cast<size_t>(p) * Ho * Wo;
      T* dst = dxp + static_cast<size_t>(p) * H * W;
      for (int yo = 0; yo < Ho; ++yo) {
        const AxisTap& a = ty[static_cast<size_t>(yo)];
        for (int xo = 0; xo < Wo; ++xo) {
          const AxisTap& bx = tx[static_cast<size_t>(xo)];
          T gv = gsrc[yo * Wo + xo];
          dst[a.i0 * W + bx.i0] += static_cast<T>((1.0 - a.w) * (1.0 - bx.w) * gv);
          dst[a.i0 * W + bx.i1] += static_cast<T>((1.0 - a.w) * bx.w * gv);
          dst[a.i1 * W + bx.i0] += static_cast<T>(a.w * (1.0 - bx.w) * gv);
          dst[a.i1 * W + bx.i1] += static_cast<T>(a.w * bx.w * gv);
        }
      }
    });
  });
}

// Batch normalization over N,H,W per channel. Batch variance is the biased
// (population) estimate. In training mode the running buffers are updated in
// place: run = (1-momentum)*run + momentum*batch.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, TensorT<T>* run_mean,
                  TensorT<T>* run_var, bool training, T momentum = T(0.1),
                  T eps = T(1e-5)) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  if (xv.rank() != 4) throw std::invalid_argument("batch_norm: rank-4 input");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  check_shape(gamma.val(), {C}, "batch_norm gamma");
  check_shape(beta.val(), {C}, "batch_norm beta");
  check_shape(*run_mean, {C}, "batch_norm running mean");
  check_shape(*run_var, {C}, "batch_norm running var");
  int64_t m = static_cast<int64_t>(N) * H * W;
  if (training && m < 2)
    throw std::invalid_argument("batch_norm: fewer than 2 samples per channel in training mode");

  auto mean = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  size_t plane = static_cast<size_t>(H) * W;
  const T* xp = xv.data();
  if (training) {
    parallel_for(C, [&](int64_t c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* src = xp + (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          double v = src[i];
          s += v;
          s2 += v * v;
        }
      }
      double mu = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;
      (*mean)[c] = mu;
      (*invstd)[c] = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*run_mean)[c] = static_cast<T>((1.0 - momentum) * (*run_mean)[c] + momentum * mu);
      (*run_var)[c] = static_cast<T>((1.0 - momentum) * (*run_var)[c] + momentum * var);
    });
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = (*run_mean)[c];
      (*invstd)[c] = 1.0 / std::sqrt(static_cast<double>((*run_var)[c]) + static_cast<double>(eps));
    }
  }

  TensorT<T> y(xv.shape());
  const T* gp = gamma.val().data();
  const T* bp = beta.val().data();
  T* yp = y.data();
  parallel_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
    int c = static_cast<int>(nc % C);
    double mu = (*mean)[c], is = (*invstd)[c];
    double ga = gp[c], be = bp[c];
    const T* src = xp + static_cast<size_t>(nc) * plane;
    T* dst = yp + static_cast<size_t>(nc) * plane;
    for (size_t i = 0; i < plane; ++i)
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mu) * is * ga + be);
  });

  int xid = x.id, gid = gamma.id, bid = beta.id;
  return tp.record(std::move(y), {xid, gid, bid}, [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    const TensorT<T>& xval = t.node(xid).value;
    const TensorT<T>& gval = t.node(gid).value;
    const T* gpp = g.data();
    const T* xpp = xval.data();
    bool need_x = t.requires_grad(xid);
    bool need_g = t.requires_grad(gid);
    bool need_b = t.requires_grad(bid);
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (int c = 0; c < C; ++c) {
      double mu = (*mean)[c], is = (*invstd)[c];
      double sg = 0.0, sgx = 0.0;
      for (int n = 0; n < N; ++n) {
        size_t off = (static_cast<size_t>(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          double gv = gpp[off + i];
          sg += gv;
          sgx += gv * (static_cast<double>(xpp[off + i]) - mu) * is;
        }
      }
      sum_g[c] = sg;
      sum_gx[c] = sgx;
    }
    if (need_g) {
      TensorT<T>& dg = t.grad_buffer(gid);
      for (int c = 0; c < C; ++c) dg[static_cast<size_t>(c)] += static_cast<T>(sum_gx[c]);
    }
    if (need_b) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (int c = 0; c < C; ++c) db[static_cast<size_t>(c)] += static_cast<T>(sum_g[c]);
    }
    if (need_x) {
      TensorT<T>& dx = t.grad_buffer(xid);
      T* dxp = dx.data();
      double md = static_cast<double>(m);
      parallel_for(static_cast<int64_t>(N) * C, [&](int64_t nc) {
        int c = static_cast<int>(nc % C);
        double mu = (*mean)[c], is = (*invstd)[c];
        double ga = gval[static_cast<size_t>(c)];
        size_t off = static_cast<size_t>(nc) * plane;
        if (training) {
          double k1 = sum_g[c] / md, k2 = sum_gx[c] / md;
          for (size_t i = 0; i < plane; ++i) {
            double xh = (static_cast<double>(xpp[off + i]) - mu) * is;
            dxp[off + i] += static_cast<T>(ga * is * (static_cast<double>(gpp[off + i]) - k1 - xh * k2));
          }
        } else {
          for (size_t i = 0; i < plane; ++i)
            dxp[off + i] += static_cast<T>(ga * is * static_cast<double>(gpp[off + i]));
        }
      });
    }
  });
}

// Inverted dropout: element i is zeroed when stream.uniform_at(i) < rate,
// survivors scaled by 1/(1-rate). Identity when inactive.
template <typename T>
Var<T> dropout(Var<T> x, double rate, RngStream stream, bool active) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate in [0,1)");
  int xid = x.id;
  if (!active || rate == 0.0) {
    TensorT<T> y = xv;
    return tp.record(std::move(y), {xid}, [=](Tape<T>& t, int self) {
      if (!t.requires_grad(xid)) return;
      const TensorT<T>& g = t.node(self).grad;
      TensorT<T>& dx = t.grad_buffer(xid);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    });
  }
  auto mask = std::make_shared<std::vector<uint8_t>>(xv.size());
  T scale = static_cast<T>(1.0 / (1.0 - rate));
  TensorT<T> y(xv.shape());
  for (size_t i = 0; i < xv.size(); ++i) {
    bool keep = stream.uniform_at(i) >= rate;
    (*mask)[i] = keep;
    y[i] = keep ? xv[i] * scale : T(0);
  }
  return tp.record(std::move(y), {xid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(xid)) return;
    const TensorT<T>& g = t.node(self).grad;
    TensorT<T>& dx = t.grad_buffer(xid);
    for (size_t i = 0; i < dx.size(); ++i)
      if ((*mask)[i]) dx[i] += g[i] * scale;
  });
}

namespace opsdetail {

template <typename T, typename F, typename DF>
Var<T> unary_elementwise(Var<T> x, F f, DF df) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  TensorT<T> y(xv.shape());
  for (size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  int xid = x.id;
  return tp.record(std::move(y), {xid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(xid)) return;
    const TensorT<T>& g = t.node(self).grad;
    const TensorT<T>& xval = t.node(xid).value;
    const TensorT<T>& yval = t.node(self).value;
    TensorT<T>& dx = t.grad_buffer(xid);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * df(xval[i], yval[i]);
  });
}

}  // namespace opsdetail

template <typename T>
Var<T> relu(Var<T> x) {
  return opsdetail::unary_elementwise(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return opsdetail::unary_elementwise(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return opsdetail::unary_elementwise(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  return opsdetail::unary_elementwise(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const TensorT<T>& av = a.val();
  const TensorT<T>& bv = b.val();
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  TensorT<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  int aid = a.id, bid = b.id;
  return tp.record(std::move(y), {aid, bid}, [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    if (t.requires_grad(aid)) {
      TensorT<T>& da = t.grad_buffer(aid);
      for (size_t i = 0; i < da.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (size_t i = 0; i < db.size(); ++i) db[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const TensorT<T>& av = a.val();
  const TensorT<T>& bv = b.val();
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  TensorT<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  int aid = a.id, bid = b.id;
  return tp.record(std::move(y), {aid, bid}, [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    const TensorT<T>& aval = t.node(aid).value;
    const TensorT<T>& bval = t.node(bid).value;
    if (t.requires_grad(aid)) {
      TensorT<T>& da = t.grad_buffer(aid);
      for (size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bval[i];
    }
    if (t.requires_grad(bid)) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (size_t i = 0; i < db.size(); ++i) db[i] += g[i] * aval[i];
    }
  });
}

// Concatenate along the channel axis: [N,Ca,H,W] + [N,Cb,H,W] -> [N,Ca+Cb,H,W]
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const TensorT<T>& av = a.val();
  const TensorT<T>& bv = b.val();
  if (av.rank() != 4 || bv.rank() != 4) throw std::invalid_argument("concat_channels: rank 4");
  int N = av.dim(0), Ca = av.dim(1), H = av.dim(2), W = av.dim(3);
  if (bv.dim(0) != N || bv.dim(2) != H || bv.dim(3) != W)
    throw std::invalid_argument("concat_channels: shape mismatch");
  int Cb = bv.dim(1);
  TensorT<T> y({N, Ca + Cb, H, W});
  size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::memcpy(y.data() + (static_cast<size_t>(n) * (Ca + Cb)) * plane,
                av.data() + static_cast<size_t>(n) * Ca * plane, sizeof(T) * Ca * plane);
    std::memcpy(y.data() + (static_cast<size_t>(n) * (Ca + Cb) + Ca) * plane,
                bv.data() + static_cast<size_t>(n) * Cb * plane, sizeof(T) * Cb * plane);
  }
  int aid = a.id, bid = b.id;
  return tp.record(std::move(y), {aid, bid}, [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    if (t.requires_grad(aid)) {
      TensorT<T>& da = t.grad_buffer(aid);
      for (int n = 0; n < N; ++n) {
        const T* src = g.data() + (static_cast<size_t>(n) * (Ca + Cb)) * plane;
        T* dst = da.data() + static_cast<size_t>(n) * Ca * plane;
        for (size_t i = 0; i < static_cast<size_t>(Ca) * plane; ++i) dst[i] += src[i];
      }
    }
    if (t.requires_grad(bid)) {
      TensorT<T>& db = t.grad_buffer(bid);
      for (int n = 0; n < N; ++n) {
        const T* src = g.data() + (static_cast<size_t>(n) * (Ca + Cb) + Ca) * plane;
        T* dst = db.data() + static_cast<size_t>(n) * Cb * plane;
        for (size_t i = 0; i < static_cast<size_t>(Cb) * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

// [N,C] -> [N,C,h,w] by repeating each value over the spatial grid.
template <typename T>
Var<T> broadcast_spatial(Var<T> v, int h, int w) {
  Tape<T>& tp = *v.tape;
  const TensorT<T>& vv = v.val();
  if (vv.rank() != 2) throw std::invalid_argument("broadcast_spatial: rank-2 input");
  int N = vv.dim(0), C = vv.dim(1);
  TensorT<T> y({N, C, h, w});
  size_t plane = static_cast<size_t>(h) * w;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T val = vv.at2(n, c);
      T* dst = y.data() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] = val;
    }
  int vid = v.id;
  return tp.record(std::move(y), {vid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(vid)) return;
    const TensorT<T>& g = t.node(self).grad;
    TensorT<T>& dv = t.grad_buffer(vid);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T* src = g.data() + (static_cast<size_t>(n) * C + c) * plane;
        double acc = 0.0;
        for (size_t i = 0; i < plane; ++i) acc += src[i];
        dv.at2(n, c) += static_cast<T>(acc);
      }
  });
}

// Corrupt logits with learned heteroscedastic noise:
// out_i = logits_i + exp(log_var_i / 2) * eps_i, eps_i fresh standard normal.
template <typename T>
Var<T> aleatoric_corrupt(Var<T> logits, Var<T> log_var, RngStream stream) {
  Tape<T>& tp = *logits.tape;
  const TensorT<T>& fv = logits.val();
  const TensorT<T>& sv = log_var.val();
  if (!fv.same_shape(sv)) throw std::invalid_argument("aleatoric_corrupt: shape mismatch");
  auto eps = std::make_shared<std::vector<T>>(fv.size());
  TensorT<T> y(fv.shape());
  for (size_t i = 0; i < fv.size(); ++i) {
    T e = static_cast<T>(stream.gaussian_at(i));
    (*eps)[i] = e;
    y[i] = fv[i] + std::exp(sv[i] / T(2)) * e;
  }
  int fid = logits.id, sid = log_var.id;
  return tp.record(std::move(y), {fid, sid}, [=](Tape<T>& t, int self) {
    const TensorT<T>& g = t.node(self).grad;
    if (t.requires_grad(fid)) {
      TensorT<T>& df = t.grad_buffer(fid);
      for (size_t i = 0; i < df.size(); ++i) df[i] += g[i];
    }
    if (t.requires_grad(sid)) {
      const TensorT<T>& sval = t.node(sid).value;
      TensorT<T>& ds = t.grad_buffer(sid);
      for (size_t i = 0; i < ds.size(); ++i)
        ds[i] += g[i] * (*eps)[i] * std::exp(sval[i] / T(2)) / T(2);
    }
  });
}

// Mean binary cross-entropy over every element. Labels must be exactly 0 or 1;
// probabilities are clamped to [1e-7, 1-1e-7] before the logs.
template <typename T>
Var<T> bce_loss(Var<T> probs, const TensorT<T>& labels) {
  Tape<T>& tp = *probs.tape;
  const TensorT<T>& pv = probs.val();
  if (!pv.same_shape(labels)) throw std::invalid_argument("bce_loss: shape mismatch");
  const T lo = static_cast<T>(1e-7), hi = static_cast<T>(1.0 - 1e-7);
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    T yv = labels[i];
    if (yv != T(0) && yv != T(1))
      throw std::invalid_argument("bce_loss: labels must be exactly 0 or 1");
    T p = pv[i] < lo ? lo : (pv[i] > hi ? hi : pv[i]);
    acc -= yv == T(1) ? std::log(static_cast<double>(p))
                      : std::log(1.0 - static_cast<double>(p));
  }
  double m = static_cast<double>(pv.size());
  TensorT<T> y({1});
  y[0] = static_cast<T>(acc / m);
  int pid = probs.id;
  auto lab = std::make_shared<TensorT<T>>(labels);
  return tp.record(std::move(y), {pid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(pid)) return;
    T gs = t.node(self).grad[0];
    const TensorT<T>& pval = t.node(pid).value;
    TensorT<T>& dp = t.grad_buffer(pid);
    for (size_t i = 0; i < dp.size(); ++i) {
      T p = pval[i];
      if (p <= lo || p >= hi) continue;  // clamped region: zero slope
      double pd = p, yd = (*lab)[i];
      dp[i] += static_cast<T>(static_cast<double>(gs) * (pd - yd) / (pd * (1.0 - pd)) / m);
    }
  });
}

}  // namespace offnadir
