#pragma once

#include <algorithm>
#include <initializer_list>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dsml/common.hpp"

namespace dsml {

// Dense row-major 64-bit float tensor. The substrate for every parameter,
// activation and gradient in the pipeline.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw ShapeError("Tensor: shape/data size mismatch");
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor vec(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("Tensor::from_rows: no rows");
    const std::size_t c = rows[0].size();
    Tensor t({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != c)
        throw ShapeError("Tensor::from_rows: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), t.data_.begin() + i * c);
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const {
    require_ndim(2, "rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_ndim(2, "cols");
    return shape_[1];
  }
  std::size_t size() const {
    require_ndim(1, "size");
    return shape_[0];
  }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return {data_.data(), data_.size()}; }
  std::span<const double> flat() const { return {data_.data(), data_.size()}; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const std::string& who) const {
    if (!all_finite())
      throw NumericError(who + ": tensor contains NaN or Inf");
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  void require_ndim(std::size_t n, const char* who) const {
    if (shape_.size() != n)
      throw ShapeError(std::string("Tensor::") + who + ": expected " +
                       std::to_string(n) + "-d tensor, got " + shape_str());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

// One trainable tensor with its gradient and momentum buffer.
struct ParamSlot {
  Tensor value;
  Tensor grad;
  Tensor momentum;

  ParamSlot() = default;
  explicit ParamSlot(Tensor v)
      : value(std::move(v)),
        grad(Tensor::zeros(value.shape())),
        momentum(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

// Gather rows of a B-major 2-d tensor.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t c = x.cols();
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows())
      throw ShapeError("gather_rows: index out of range");
    std::copy(x.data() + idx[i] * c, x.data() + (idx[i] + 1) * c,
              out.data() + i * c);
  }
  return out;
}

// out[idx[i], :] += rows[i, :]
inline void scatter_add_rows(Tensor& out, const std::vector<std::size_t>& idx,
                             const Tensor& rows) {
  const std::size_t c = out.cols();
  if (rows.cols() != c || rows.rows() != idx.size())
    throw ShapeError("scatter_add_rows: shape mismatch");
  for (std::size_t i = 0; i < idx.size(); ++i) {
    double* dst = out.data() + idx[i] * c;
    const double* src = rows.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
}

}  // namespace dsml
