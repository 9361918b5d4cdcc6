#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "caer/errors.hpp"

namespace caer {

// All numeric buffers are 64-byte aligned so vectorized kernels take the same
// code path on every run; results are then bitwise reproducible.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(Align)); }

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

/// Extents of a dense row-major tensor, rank 1..5. When the rank is 5 the
/// axes are ordered (batch, channel, time, height, width).
class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<std::int64_t> extents) {
    init(extents.begin(), static_cast<int>(extents.size()));
  }

  explicit Shape(const std::vector<std::int64_t>& extents) {
    init(extents.data(), static_cast<int>(extents.size()));
  }

  int rank() const { return rank_; }

  std::int64_t operator[](int axis) const { return ext_[static_cast<std::size_t>(axis)]; }

  std::int64_t numel() const {
    if (rank_ == 0) return 0;
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= ext_[static_cast<std::size_t>(i)];
    return n;
  }

  bool operator==(const Shape& other) const {
    if (rank_ != other.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (ext_[static_cast<std::size_t>(i)] != other.ext_[static_cast<std::size_t>(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << ext_[static_cast<std::size_t>(i)];
    os << ')';
    return os.str();
  }

 private:
  void init(const std::int64_t* e, int r) {
    if (r < 1 || r > 5) throw ShapeError("tensor rank must be in [1,5], got " + std::to_string(r));
    for (int i = 0; i < r; ++i) {
      if (e[i] < 1) throw ShapeError("tensor extents must be >= 1");
      ext_[static_cast<std::size_t>(i)] = e[i];
    }
    rank_ = r;
  }

  int rank_ = 0;
  std::array<std::int64_t, 5> ext_{};
};

/// Canonical 5-axis activation layout. t is 1 for the static model.
struct Shape5 {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t t = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  Shape as_shape() const { return Shape{n, c, t, h, w}; }
};

/// Dense tensor with a contiguous row-major buffer. Immutable by convention
/// once built; in-place mutation is reserved for the optimizer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), T(0)) {}

  Tensor(Shape shape, const std::vector<T>& values)
      : shape_(shape), data_(values.begin(), values.end()) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(shape);
    for (auto& v : t.data_) v = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  std::int64_t numel() const { return shape_.numel(); }
  std::int64_t extent(int axis) const { return shape_[axis]; }
  bool empty() const { return shape_.rank() == 0; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Rank-5 accessor, used mostly by tests.
  T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>((((n * shape_[1] + c) * shape_[2] + t) * shape_[3] + h) * shape_[4] + w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t h, std::int64_t w) const {
    return const_cast<Tensor*>(this)->at(n, c, t, h, w);
  }

 private:
  Shape shape_{};
  AlignedVec<T> data_;
};

/// Element-wise product, Eq. 4's operator. `b` may broadcast over the channel
/// axis (extent 1 on axis 1); all other extents must match `a`.
template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    return out;
  }
  const bool broadcast = a.rank() == b.rank() && a.rank() >= 2 && b.extent(1) == 1 &&
                         [&] {
                           for (int ax = 0; ax < a.rank(); ++ax)
                             if (ax != 1 && a.extent(ax) != b.extent(ax)) return false;
                           return true;
                         }();
  if (!broadcast)
    throw ShapeError("elementwise_mul: incompatible shapes " + a.shape().str() + " and " +
                     b.shape().str());
  Tensor<T> out(a.shape());
  std::int64_t inner = 1;
  for (int ax = 2; ax < a.rank(); ++ax) inner *= a.extent(ax);
  const std::int64_t batches = a.extent(0), channels = a.extent(1);
  for (std::int64_t nb = 0; nb < batches; ++nb) {
    const T* bs = b.data() + nb * inner;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* as = a.data() + (nb * channels + c) * inner;
      T* os = out.data() + (nb * channels + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) os[i] = as[i] * bs[i];
    }
  }
  return out;
}

/// Same data, new extents. Element counts must agree.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (new_shape.numel() != x.numel())
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + new_shape.str());
  return Tensor<T>(new_shape, std::vector<T>(x.data(), x.data() + x.numel()));
}

/// Concatenation along the channel axis (Eq. 5's operator); a's channels
/// precede b's.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 2)
    throw ShapeError("concat_channels: need equal ranks >= 2, got " + a.shape().str() + " and " +
                     b.shape().str());
  for (int ax = 0; ax < a.rank(); ++ax)
    if (ax != 1 && a.extent(ax) != b.extent(ax))
      throw ShapeError("concat_channels: non-channel extent mismatch between " + a.shape().str() +
                       " and " + b.shape().str());
  std::vector<std::int64_t> ext;
  for (int ax = 0; ax < a.rank(); ++ax) ext.push_back(a.extent(ax));
  ext[1] = a.extent(1) + b.extent(1);
  Tensor<T> out{Shape(ext)};
  std::int64_t inner = 1;
  for (int ax = 2; ax < a.rank(); ++ax) inner *= a.extent(ax);
  const std::int64_t ca = a.extent(1), cb = b.extent(1);
  for (std::int64_t n = 0; n < a.extent(0); ++n) {
    T* dst = out.data() + n * (ca + cb) * inner;
    const T* pa = a.data() + n * ca * inner;
    const T* pb = b.data() + n * cb * inner;
    std::copy(pa, pa + ca * inner, dst);
    std::copy(pb, pb + cb * inner, dst + ca * inner);
  }
  return out;
}

/// Channels [c_begin, c_end) of x, the inverse of concat_channels.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t c_begin, std::int64_t c_end) {
  if (x.rank() < 2 || c_begin < 0 || c_end > x.extent(1) || c_begin >= c_end)
    throw ShapeError("slice_channels: bad range on " + x.shape().str());
  std::vector<std::int64_t> ext;
  for (int ax = 0; ax < x.rank(); ++ax) ext.push_back(x.extent(ax));
  ext[1] = c_end - c_begin;
  Tensor<T> out{Shape(ext)};
  std::int64_t inner = 1;
  for (int ax = 2; ax < x.rank(); ++ax) inner *= x.extent(ax);
  const std::int64_t c = x.extent(1);
  for (std::int64_t n = 0; n < x.extent(0); ++n) {
    const T* src = x.data() + (n * c + c_begin) * inner;
    T* dst = out.data() + n * (c_end - c_begin) * inner;
    std::copy(src, src + (c_end - c_begin) * inner, dst);
  }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add_inplace: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) a[i] += b[i];
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937& rng, T stddev, T mean = T(0)) {
  std::normal_distribution<T> dist(mean, stddev);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, T lo, T hi) {
  std::uniform_real_distribution<T> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
}

}  // namespace caer
