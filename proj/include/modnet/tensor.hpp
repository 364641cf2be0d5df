#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modnet/errors.hpp"

namespace modnet {

// Extents of an n-dimensional tensor, outermost first. Images are (C,H,W),
// conv kernel banks are (F,C,kh,kw), feature vectors are (n).
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Dense n-dimensional array over a flat row-major Eigen store.
///
/// The flat row-major order is part of the on-disk contract (checkpoints,
/// IDX export), so it never changes behind the scenes. Zero extents are
/// legal and produce an element-free tensor; negative extents are not.
template <typename Scalar>
class TensorT {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;

  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    for (int e : shape_) {
      if (e < 0) throw ShapeError("negative tensor extent in " + shape_str(shape_));
    }
    data_ = Array::Zero(shape_numel(shape_));
  }

  TensorT(Shape shape, std::initializer_list<Scalar> values) : TensorT(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != numel())
      throw ShapeError("initializer has " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape_));
    std::int64_t i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT constant(Shape shape, Scalar v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static TensorT from_vector(Shape shape, const std::vector<Scalar>& values) {
    TensorT t(std::move(shape));
    if (static_cast<std::int64_t>(values.size()) != t.numel())
      throw ShapeError("vector has " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape_));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data_[i] = values[i];
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](std::int64_t i) { return data_[i]; }
  Scalar operator[](std::int64_t i) const { return data_[i]; }

  Scalar& at(int i, int j) { return data_[index2(i, j)]; }
  Scalar at(int i, int j) const { return data_[index2(i, j)]; }
  Scalar& at(int c, int y, int x) { return data_[index3(c, y, x)]; }
  Scalar at(int c, int y, int x) const { return data_[index3(c, y, x)]; }

  void fill(Scalar v) { data_.setConstant(v); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  /// Same data, new extents. Element count must be preserved.
  TensorT reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  TensorT flattened() const { return reshaped({static_cast<int>(numel())}); }

 private:
  std::int64_t index2(int i, int j) const {
    check_rank(2);
    return static_cast<std::int64_t>(i) * shape_[1] + j;
  }
  std::int64_t index3(int c, int y, int x) const {
    check_rank(3);
    return (static_cast<std::int64_t>(c) * shape_[1] + y) * shape_[2] + x;
  }
  void check_rank(int r) const {
    if (rank() != r)
      throw ShapeError("rank-" + std::to_string(r) + " access into " + shape_str(shape_));
  }

  Shape shape_;
  Array data_;
};

using Tensor = TensorT<double>;

template <typename Scalar>
bool bit_equal(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace modnet
