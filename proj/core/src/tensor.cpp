#include "zpressor/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "zpressor/error.hpp"

namespace zp {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace memory {
namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t live_bytes() { return g_live.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(live_bytes(), std::memory_order_relaxed); }

namespace detail {
void on_alloc(std::size_t bytes) {
  std::size_t now = g_live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak &&
         !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}
void on_free(std::size_t bytes) {
  g_live.fetch_sub(bytes, std::memory_order_relaxed);
}
}  // namespace detail
}  // namespace memory

template <class T>
BasicTensor<T>::BasicTensor(Shape shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::span<const T> data)
    : shape_(std::move(shape)) {
  if (shape_numel(shape_) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape_));
  }
  for (T v : data) {
    if (!std::isfinite(v)) throw InvalidInput("tensor data contains NaN/Inf");
  }
  data_.assign(data.begin(), data.end());
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  BasicTensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <class T>
std::size_t BasicTensor<T>::rows() const noexcept {
  if (shape_.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
  return n;
}

template <class T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                     shape_str(shape));
  }
  BasicTensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

template <class T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace zp
