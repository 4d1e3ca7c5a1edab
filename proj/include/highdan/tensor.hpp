#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "highdan/error.hpp"

namespace highdan {

using Index = Eigen::Index;

/// Extent of a batched feature map in N×C×H×W order.
struct Shape {
  Index n = 0, c = 0, h = 0, w = 0;

  Index size() const { return n * c * h * w; }
  Index plane() const { return h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

/// Dense NCHW tensor backed by a contiguous Eigen array.
///
/// Element (n, c, y, x) lives at ((n*C + c)*H + y)*W + x, so the feature maps
/// of one batch item form a row-major C×(H·W) matrix. Convolutions use that
/// view directly as a GEMM operand.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Storage::Zero(shape.size())) {}
  Tensor(Index n, Index c, Index h, Index w) : Tensor(Shape{n, c, h, w}) {}
  Tensor(const Shape& shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) throw ArgumentError("tensor storage does not match shape " + shape_.str());
  }

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor constant(const Shape& shape, Scalar value) {
    return Tensor(shape, Storage::Constant(shape.size(), value));
  }

  const Shape& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index n, Index c, Index y, Index x) { return data_[offset(n, c, y, x)]; }
  Scalar operator()(Index n, Index c, Index y, Index x) const { return data_[offset(n, c, y, x)]; }

  Scalar* plane(Index n, Index c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const Scalar* plane(Index n, Index c) const { return data_.data() + (n * shape_.c + c) * shape_.plane(); }

  /// Batch item `n` viewed as a C×(H·W) row-major matrix.
  MatrixMap image(Index n) { return MatrixMap(plane(n, 0), shape_.c, shape_.plane()); }
  ConstMatrixMap image(Index n) const { return ConstMatrixMap(plane(n, 0), shape_.c, shape_.plane()); }

  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.isFinite().all(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Index offset(Index n, Index c, Index y, Index x) const { return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x; }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ConfigError(std::string(what) + ": expected " + expected.str() + ", got " + t.shape().str());
  }
}

/// Concatenates maps with equal N, H, W along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  Shape out = parts.front()->shape();
  out.c = 0;
  for (const auto* p : parts) {
    if (p->n() != out.n || p->h() != out.h || p->w() != out.w) {
      throw ConfigError("concat_channels: extent mismatch " + p->shape().str());
    }
    out.c += p->c();
  }
  Tensor<Scalar> result(out);
  for (Index n = 0; n < out.n; ++n) {
    Index c0 = 0;
    for (const auto* p : parts) {
      result.image(n).middleRows(c0, p->c()) = p->image(n);
      c0 += p->c();
    }
  }
  return result;
}

/// Channel slice [c0, c0 + count) of every batch item.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index c0, Index count) {
  if (c0 < 0 || count < 0 || c0 + count > x.c()) throw ArgumentError("slice_channels: range out of bounds");
  Tensor<Scalar> out(x.n(), count, x.h(), x.w());
  for (Index n = 0; n < x.n(); ++n) out.image(n) = x.image(n).middleRows(c0, count);
  return out;
}

/// Batch items [b0, b0 + count).
template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& x, Index b0, Index count) {
  if (b0 < 0 || count < 0 || b0 + count > x.n()) throw ArgumentError("slice_batch: range out of bounds");
  const Index item = x.c() * x.h() * x.w();
  Tensor<Scalar> out(count, x.c(), x.h(), x.w());
  out.array() = x.array().segment(b0 * item, count * item);
  return out;
}

/// Stacks single-item (or multi-item) tensors along the batch axis.
template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<const Tensor<Scalar>*>& items) {
  if (items.empty()) throw ArgumentError("stack_batch: no inputs");
  Shape out = items.front()->shape();
  out.n = 0;
  for (const auto* t : items) {
    if (t->c() != out.c || t->h() != out.h || t->w() != out.w) throw ConfigError("stack_batch: shape mismatch");
    out.n += t->n();
  }
  Tensor<Scalar> result(out);
  Index at = 0;
  for (const auto* t : items) {
    result.array().segment(at, t->size()) = t->array();
    at += t->size();
  }
  return result;
}

}  // namespace highdan
