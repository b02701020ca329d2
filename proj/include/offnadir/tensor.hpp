#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace offnadir {

// Dense row-major tensor. Rank and dims fixed at construction.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= static_cast<size_t>(d);
    }
    data_.assign(n, T(0));
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }
  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  // NCHW convenience accessors
  T& at4(int n, int c, int h, int w) {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  const T& at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

template <typename T>
void check_shape(const TensorT<T>& t, const std::vector<int>& want, const char* what) {
  if (t.shape() != want)
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(want) +
                                ", got " + shape_str(t.shape()));
}

}  // namespace offnadir
