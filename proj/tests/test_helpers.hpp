#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "offnadir/ops.hpp"

namespace testutil {

using namespace offnadir;

inline TensorD rand_tensor(std::vector<int> shape, RngStream s, double lo = -1.0,
                           double hi = 1.0) {
  TensorD t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = lo + (hi - lo) * s.uniform_at(i);
  return t;
}

inline Tensor rand_tensor_f(std::vector<int> shape, RngStream s, double lo = -1.0,
                            double hi = 1.0) {
  TensorD t = rand_tensor(std::move(shape), s, lo, hi);
  return t.cast<float>();
}

// Central finite-difference check of reverse-mode gradients, in double.
// build() must be a pure function of the leaf values.
using BuildFn =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline double grad_check(std::vector<TensorD> params, const BuildFn& build,
                         double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (auto& p : params) vars.push_back(tape.leaf(p, true));
  Var<double> loss = build(tape, vars);
  if (loss.val().size() != 1) throw std::logic_error("grad_check: loss must be scalar");
  tape.backward(loss);
  std::vector<TensorD> grads;
  grads.reserve(vars.size());
  for (auto v : vars) grads.push_back(tape.grad(v));

  auto eval = [&](const std::vector<TensorD>& ps) {
    Tape<double> t(false);
    std::vector<Var<double>> vs;
    vs.reserve(ps.size());
    for (const auto& p : ps) vs.push_back(t.leaf(p, false));
    return build(t, vs).val()[0];
  };

  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < params[pi].size(); ++i) {
      double keep = params[pi][i];
      params[pi][i] = keep + h;
      double fp = eval(params);
      params[pi][i] = keep - h;
      double fm = eval(params);
      params[pi][i] = keep;
      double num = (fp - fm) / (2.0 * h);
      double ana = grads[pi][i];
      double err = std::fabs(num - ana) / std::max({std::fabs(num), std::fabs(ana), 1e-3});
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

// Direct convolution, kept deliberately naive as an oracle.
inline TensorD naive_conv(const TensorD& x, const TensorD& w, const TensorD* b, int stride,
                          int pad) {
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  TensorD y({N, K, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b ? (*b)[static_cast<size_t>(k)] : 0.0;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                int ih = oh * stride - pad + i;
                int iw = ow * stride - pad + j;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.at4(n, c, ih, iw) * w.at4(k, c, i, j);
              }
          y.at4(n, k, oh, ow) = acc;
        }
  return y;
}

// Scalar reduction for gradient checks; grads of a plain sum are all ones.
template <typename T>
Var<T> sum_all(Var<T> x) {
  Tape<T>& tp = *x.tape;
  const TensorT<T>& xv = x.val();
  TensorT<T> y({1});
  double acc = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  y[0] = static_cast<T>(acc);
  int xid = x.id;
  return tp.record(std::move(y), {xid}, [=](Tape<T>& t, int self) {
    if (!t.requires_grad(xid)) return;
    T g = t.node(self).grad[0];
    TensorT<T>& dx = t.grad_buffer(xid);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff_f(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

// Unique scratch directory per test binary run.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("offnadir_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
