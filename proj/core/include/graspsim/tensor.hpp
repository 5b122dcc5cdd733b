#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspsim/rng.hpp"

namespace grasp {

// Dense n-dimensional array, row-major. Float for training, double for
// gradient checking; the network code is templated on the scalar type so
// both modes share one implementation.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_))
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major indexing helpers for the dimensionalities the networks use.
  T& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  T& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const {
    for (const T& x : data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::string shape_string(const std::vector<int>& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) r += "x";
      r += std::to_string(s[i]);
    }
    return r + "]";
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  static std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dim in " + shape_string(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace grasp
