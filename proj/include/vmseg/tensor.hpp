// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmseg {

/// Dense row-major tensor of rank <= 4. Canonical layouts are [C,H,W] for
/// feature maps, [T,C,H,W] for sequences and [Cout,Cin,K,K] for kernels.
template <class T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(numel_of(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != numel_of(shape_)) {
      throw std::invalid_argument("Tensor: data size " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str());
    }
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] indexing
  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  // [Cout,Cin,K,K] indexing
  T& at4(int a, int b, int y, int x) {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + y) *
                     shape_[3] +
                 x];
  }
  const T& at4(int a, int b, int y, int x) const {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + y) *
                     shape_[3] +
                 x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream s;
    s << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s << ',';
      s << shape_[i];
    }
    s << ']';
    return s.str();
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
  }

private:
  static void validate_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw std::invalid_argument("Tensor: rank must be 1..4");
    }
    for (int e : shape) {
      if (e <= 0) throw std::invalid_argument("Tensor: extents must be positive");
    }
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace vmseg
