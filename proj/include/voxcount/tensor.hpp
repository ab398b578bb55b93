#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "voxcount/common.hpp"

namespace voxcount {

// Dense row-major N-d array of doubles. Shapes are immutable after
// construction; reshaped() returns a copy with the same data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<int64_t>(data_.size()))
      throw shape_error("tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Row-major multi-index access; bounds unchecked in release paths.
  double& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  double at(std::initializer_list<int> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel()) throw shape_error("reshape: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw shape_error("tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

 private:
  int64_t offset(std::initializer_list<int> idx) const {
    int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void accumulate(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw shape_error("accumulate: shape mismatch");
  double* d = dst.data();
  const double* s = src.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace voxcount
