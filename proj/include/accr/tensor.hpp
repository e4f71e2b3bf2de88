#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "accr/errors.hpp"

namespace accr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Dense row-major array. Rank-4 tensors are NCHW image batches.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Number of elements per leading-axis item.
  std::size_t item_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  std::span<T> item(std::size_t n) { return std::span<T>(data_).subspan(n * item_size(), item_size()); }
  std::span<const T> item(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * item_size(), item_size());
  }

  Tensor reshaped(Shape s) const& {
    if (shape_size(s) != size()) throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    return Tensor(std::move(s), data_);
  }
  Tensor reshaped(Shape s) && {
    if (shape_size(s) != size()) throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    shape_ = std::move(s);
    return std::move(*this);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  void check_same(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string("shape mismatch in ") + what + ": " + to_string(shape_) + " vs " +
                       to_string(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Rank-4 batch (N, C, H, W) of images with values in [-1, 1].
using ImageBatch = Tensor<float>;

/// Stacks selected items of `src` along the leading axis.
template <class T>
Tensor<T> gather(const Tensor<T>& src, std::span<const std::size_t> indices) {
  Shape s = src.shape();
  s[0] = indices.size();
  Tensor<T> out(s);
  const std::size_t m = src.item_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto from = src.item(indices[i]);
    std::copy(from.begin(), from.end(), out.data() + i * m);
  }
  return out;
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  Shape sa(a.shape().begin() + 1, a.shape().end()), sb(b.shape().begin() + 1, b.shape().end());
  if (sa != sb) throw ShapeError("concat: item shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<T> d(a.storage());
  d.insert(d.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(s, std::move(d));
}

template <class T>
void require_rank4(const Tensor<T>& x, const char* who) {
  if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected NCHW batch, got " + to_string(x.shape()));
}

}  // namespace accr
