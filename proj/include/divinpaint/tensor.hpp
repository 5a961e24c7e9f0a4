#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dip {

/// Raised whenever two operands disagree on shape.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or receives non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

inline std::int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1},
                         [](std::int64_t a, int b) { return a * b; });
}

/// Dense row-major n-d array. Images are N x C x H x W, style codes N x S x D.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Array::Constant(shape_numel(shape_), fill)) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor data size does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), Scalar(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), Scalar(1)); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(i < 0 ? i + rank() : i); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  Scalar& at(int n, int c, int h, int w) {
    return data_[((static_cast<Eigen::Index>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(int n, int c, int h, int w) const {
    return data_[((static_cast<Eigen::Index>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, data_.template cast<To>().eval());
  }

  /// Slice [begin, end) along the leading dimension.
  Tensor batch_slice(int begin, int end) const;
  /// Single item of the leading dimension, keeping rank (leading dim = 1).
  Tensor item(int n) const { return batch_slice(n, n + 1); }

  bool all_finite() const { return data_.isFinite().all(); }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && (data_ == o.data_).all();
  }

 private:
  Shape shape_;
  Array data_;
};

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::batch_slice(int begin, int end) const {
  if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end) {
    throw DimensionError("batch slice out of range for " + shape_str(shape_));
  }
  const Eigen::Index inner = shape_[0] == 0 ? 0 : size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(s, data_.segment(begin * inner, (end - begin) * inner).eval());
}

/// Concatenate along the leading dimension.
template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("stack_batch of nothing");
  Shape s = parts.front().shape();
  Shape inner_shape(s.begin() + 1, s.end());
  int total = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != inner_shape) {
      throw DimensionError("stack_batch: mismatched " + shape_str(p.shape()));
    }
    total += p.dim(0);
  }
  s[0] = total;
  Tensor<Scalar> out(s);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.array().segment(off, p.size()) = p.array();
    off += p.size();
  }
  return out;
}

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                         shape_str(got));
  }
}

}  // namespace dip
