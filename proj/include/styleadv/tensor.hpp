#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "styleadv/error.hpp"

namespace styleadv {

using Index = std::int64_t;

/// Dimension list of a dense row-major tensor. Images are NCHW or CHW.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  int rank() const { return static_cast<int>(dims_.size()); }
  Index operator[](int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  Index& operator[](int i) { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
  }

  /// Shape with the leading (batch) dimension removed.
  Shape tail() const { return Shape(std::vector<Index>(dims_.begin() + 1, dims_.end())); }

  /// Shape with a leading batch dimension of size n prepended.
  Shape batched(Index n) const {
    std::vector<Index> d{n};
    d.insert(d.end(), dims_.begin(), dims_.end());
    return Shape(std::move(d));
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.numel()), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_.numel()) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  Index dim(int i) const { return shape_[i]; }
  int rank() const { return shape_.rank(); }
  Index numel() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(Index n, Index c, Index h, Index w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(Index n, Index c, Index h, Index w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape s) const& {
    check_reshape(s);
    return Tensor(std::move(s), data_);
  }
  Tensor reshaped(Shape s) && {
    check_reshape(s);
    return Tensor(std::move(s), std::move(data_));
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  /// Copy of batch items [begin, end) along the leading dimension.
  Tensor slice(Index begin, Index end) const {
    const Index item = shape_.tail().numel();
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s), std::vector<T>(data_.begin() + begin * item, data_.begin() + end * item));
  }

  /// Copy of batch item i with the batch dimension dropped.
  Tensor item(Index i) const {
    if (i < 0 || i >= dim(0)) throw ShapeError("item: index out of range");
    const Index n = shape_.tail().numel();
    return Tensor(shape_.tail(), std::vector<T>(data_.begin() + i * n, data_.begin() + (i + 1) * n));
  }

  /// Overwrite batch item i with `src` (which has the per-item shape).
  void set_item(Index i, const Tensor& src) {
    if (i < 0 || i >= dim(0)) throw ShapeError("set_item: index out of range");
    const Index n = shape_.tail().numel();
    if (src.numel() != n) throw ShapeError("set_item: item size mismatch");
    std::copy(src.data_.begin(), src.data_.end(), data_.begin() + i * n);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_reshape(const Shape& s) const {
    if (s.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Stack equally shaped items into a batch along a new leading dimension.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Tensor<T> out(items.front().shape().batched(static_cast<Index>(items.size())));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw ShapeError("stack: shape mismatch");
    out.set_item(static_cast<Index>(i), items[i]);
  }
  return out;
}

template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  return stack(std::span<const Tensor<T>>(items));
}

}  // namespace styleadv
