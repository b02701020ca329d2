#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "offnadir/tensor.hpp"

namespace offnadir {

// Ordered, named collection of tensors. Insertion order is the canonical
// ordering used for gradient vectors, optimizer slots and checkpoints.
template <typename T>
class ParameterStoreT {
 public:
  struct Entry {
    std::string name;
    TensorT<T> value;
    bool decay = false;  // subject to weight decay
  };

  TensorT<T>& add(const std::string& name, TensorT<T> value, bool decay) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), decay});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return it->second;
  }

  TensorT<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return entries_[it->second].value;
  }
  const TensorT<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
    return entries_[it->second].value;
  }

  size_t size() const { return entries_.size(); }
  Entry& entry(size_t i) { return entries_[i]; }
  const Entry& entry(size_t i) const { return entries_[i]; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using ParameterStore = ParameterStoreT<float>;

// Per-parameter first/second moment slots, aligned with store order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState init_adam(const ParameterStore& params) {
  AdamState s;
  for (const auto& e : params) {
    s.m.push_back(Tensor::zeros(e.value.shape()));
    s.v.push_back(Tensor::zeros(e.value.shape()));
  }
  return s;
}

// One bias-corrected Adam step. Weight decay is added to the gradient before
// the moment updates, only for parameters flagged for decay.
inline void adam_step(ParameterStore& params, const std::vector<Tensor>& grads,
                      AdamState& st, double lr, double weight_decay) {
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& e = params.entry(pi);
    const Tensor& g = grads[pi];
    if (!g.same_shape(e.value))
      throw std::invalid_argument("adam_step: grad shape mismatch for " + e.name);
    Tensor& m = st.m[pi];
    Tensor& v = st.v[pi];
    double wd = e.decay ? weight_decay : 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
      double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi))
        throw std::runtime_error("non-finite gradient in parameter " + e.name);
      gi += wd * static_cast<double>(e.value[i]);
      double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      e.value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

}  // namespace offnadir
