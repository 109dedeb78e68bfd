#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace zp {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Process-wide counters of bytes held by tensor storage. The peak value is the
// memory proxy reported by the scaling benchmark.
namespace memory {

std::size_t live_bytes();
std::size_t peak_bytes();
void reset_peak();

namespace detail {
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);
}  // namespace detail

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    detail::on_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    detail::on_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  friend bool operator==(const TrackingAllocator&, const TrackingAllocator&) {
    return true;
  }
};

}  // namespace memory

// Dense row-major tensor. Ops treat the last dimension as the feature axis and
// flatten all leading dimensions into rows.
template <class T>
class BasicTensor {
 public:
  using Storage = std::vector<T, memory::TrackingAllocator<T>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  // Rejects non-finite entries and length/shape mismatches.
  BasicTensor(Shape shape, std::span<const T> data);
  BasicTensor(Shape shape, std::initializer_list<T> data)
      : BasicTensor(std::move(shape), std::span<const T>(data.begin(), data.size())) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  // Product of all dimensions except the last.
  std::size_t rows() const noexcept;
  // Size of the last dimension.
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> span() const noexcept { return {data_.data(), data_.size()}; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols() + c];
  }
  T item() const;

  BasicTensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace zp
