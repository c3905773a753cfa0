// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tfsed/error.hpp"

namespace tfsed {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorized kernels peel a different number of
// leading elements depending on the buffer address, so unaligned storage
// would make float results depend on where malloc placed a tensor.
namespace detail {
// Large blocks are recycled instead of returned to the OS; fresh pages for
// every activation tensor otherwise dominate the cost of cheap ops.
void* allocate_aligned(std::size_t bytes);
void deallocate_aligned(void* p, std::size_t bytes) noexcept;
}  // namespace detail

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  // Default-initializes, so AlignedVector<float>(n) leaves the values
  // unset; callers that need zeros pass an explicit fill value.
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  T* allocate(std::size_t n) { return static_cast<T*>(detail::allocate_aligned(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { detail::deallocate_aligned(p, n * sizeof(T)); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major array with an optional gradient buffer of the same length.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

  Tensor(Shape shape, std::initializer_list<T> data)
      : Tensor(std::move(shape), AlignedVector<T>(data)) {}

  Tensor(Shape shape, AlignedVector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    check(data_.size() == shape_size(shape_), ErrorCode::kDimension,
          "tensor data length " + std::to_string(data_.size()) +
              " does not match shape " + shape_string(shape_));
  }

  /// Storage left unset; for outputs that are written in full.
  static Tensor uninitialized(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), AlignedVector<T>(n));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  bool has_grad() const noexcept { return grad_.has_value(); }

  std::span<T> grad() {
    check(has_grad(), ErrorCode::kState, "tensor has no gradient buffer");
    return *grad_;
  }
  std::span<const T> grad() const {
    check(has_grad(), ErrorCode::kState, "tensor has no gradient buffer");
    return *grad_;
  }

  /// Allocates a zero gradient if none exists; returns it.
  std::span<T> ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), T(0));
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  void clear_grad() noexcept { grad_.reset(); }

  void reshape(Shape shape) {
    check(shape_size(shape) == data_.size(), ErrorCode::kDimension,
          "cannot reshape " + shape_string(shape_) + " to " +
              shape_string(shape));
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  void validate_shape() const {
    for (std::size_t d : shape_)
      check(d > 0, ErrorCode::kDimension,
            "tensor dimensions must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  AlignedVector<T> data_;
  std::optional<AlignedVector<T>> grad_;
};

}  // namespace tfsed
