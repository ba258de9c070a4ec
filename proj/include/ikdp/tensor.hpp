#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ikdp/error.hpp"
#include "ikdp/rng.hpp"

namespace ikdp {

using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Extents of an Array, rank 1 to 3.
class Shape {
 public:
  static constexpr int kMaxRank = 3;

  Shape() = default;
  Shape(std::initializer_list<Index> dims) {
    if (dims.size() == 0 || dims.size() > kMaxRank)
      throw Error(ErrorCode::kShapeMismatch, "rank must be 1..3, got " + std::to_string(dims.size()));
    for (Index d : dims) {
      if (d <= 0) throw Error(ErrorCode::kShapeMismatch, "extents must be positive");
      dims_[rank_++] = d;
    }
  }

  int rank() const noexcept { return rank_; }
  Index operator[](int i) const { return dims_[i]; }
  Index numel() const noexcept {
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  /// Trailing extent; Arrays are stored as (numel / cols) x cols.
  Index cols() const noexcept { return rank_ == 0 ? 0 : dims_[rank_ - 1]; }
  Index rows() const noexcept { return rank_ == 0 ? 0 : numel() / cols(); }

  bool operator==(const Shape& o) const noexcept {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[i] != o.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::array<Index, kMaxRank> dims_{};
  int rank_ = 0;
};

/// Dense row-major value with a shape. The storage is a rows x cols matrix
/// where cols is the trailing extent, so rank-3 (batch x tokens x features)
/// data multiplies against a features x k weight without copies.
template <typename Scalar>
class Array {
 public:
  using Matrix = Mat<Scalar>;

  Array() = default;
  explicit Array(const Shape& shape) : shape_(shape), values_(Matrix::Zero(shape.rows(), shape.cols())) {}
  Array(const Shape& shape, Matrix values) : shape_(shape), values_(std::move(values)) {
    if (values_.rows() != shape_.rows() || values_.cols() != shape_.cols())
      throw Error(ErrorCode::kShapeMismatch,
                  "values " + std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()) +
                      " do not fit shape " + shape_.str());
  }
  Array(const Shape& shape, std::initializer_list<Scalar> values) : Array(shape) {
    if (static_cast<Index>(values.size()) != shape.numel())
      throw Error(ErrorCode::kShapeMismatch, "initializer has " + std::to_string(values.size()) +
                                                 " values for shape " + shape_.str());
    std::copy(values.begin(), values.end(), values_.data());
  }

  static Array scalar(Scalar v) { return Array(Shape{1}, {v}); }

  const Shape& shape() const noexcept { return shape_; }
  const Matrix& matrix() const noexcept { return values_; }
  Matrix& matrix() noexcept { return values_; }
  Index size() const noexcept { return shape_.numel(); }
  const Scalar* data() const noexcept { return values_.data(); }
  Scalar* data() noexcept { return values_.data(); }
  Scalar operator[](Index i) const { return values_.data()[i]; }
  Scalar& operator[](Index i) { return values_.data()[i]; }
  Scalar item() const { return values_(0, 0); }

  Array reshaped(const Shape& shape) const {
    if (shape.numel() != shape_.numel())
      throw Error(ErrorCode::kShapeMismatch, "cannot reshape " + shape_.str() + " to " + shape.str());
    Matrix m = Eigen::Map<const Matrix>(values_.data(), shape.rows(), shape.cols());
    return Array(shape, std::move(m));
  }

  template <typename Other>
  Array<Other> cast() const {
    return Array<Other>(shape_, values_.template cast<Other>());
  }

  bool all_finite() const { return values_.allFinite(); }

 private:
  Shape shape_;
  Matrix values_;
};

/// Ordered, name-addressed collection of Arrays: model parameters, their
/// gradients, and optimizer moments all use it. Order is insertion order.
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Array<Scalar> value;
  };

  void add(std::string name, Array<Scalar> value) {
    if (find(name) != nullptr) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
  }

  const Array<Scalar>* find(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }
  Array<Scalar>* find(std::string_view name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }

  const Array<Scalar>& at(std::string_view name) const {
    const auto* p = find(name);
    if (p == nullptr) throw Error(ErrorCode::kInvalidArgument, "no parameter named '" + std::string(name) + "'");
    return *p;
  }
  Array<Scalar>& at(std::string_view name) {
    auto* p = find(name);
    if (p == nullptr) throw Error(ErrorCode::kInvalidArgument, "no parameter named '" + std::string(name) + "'");
    return *p;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Index total_size() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<Other>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

/// Standard normal draws, filled in storage order.
template <typename Scalar>
Array<Scalar> randn(Rng& rng, const Shape& shape) {
  Array<Scalar> out(shape);
  for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(rng.normal());
  return out;
}

/// Uniform draws in [lo, hi).
template <typename Scalar>
Array<Scalar> rand_uniform(Rng& rng, double lo, double hi, const Shape& shape) {
  Array<Scalar> out(shape);
  for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return out;
}

}  // namespace ikdp
