// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace hmt {

// Fixed-capacity FIFO. Pushing into a full buffer evicts the oldest element.
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity = 0) : slots_(capacity) {}

  std::size_t capacity() const { return slots_.size(); }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  bool full() const { return size_ == slots_.size(); }

  /// Returns the evicted element, if any. A zero-capacity buffer drops
  /// everything.
  std::optional<T> push(T value) {
    if (slots_.empty()) return value;
    std::optional<T> evicted;
    if (full()) {
      evicted = std::move(slots_[head_]);
      slots_[head_] = std::move(value);
      head_ = (head_ + 1) % slots_.size();
    } else {
      slots_[(head_ + size_) % slots_.size()] = std::move(value);
      ++size_;
    }
    return evicted;
  }

  // 0 is the oldest element.
  const T& operator[](std::size_t i) const { return slots_[(head_ + i) % slots_.size()]; }
  T& operator[](std::size_t i) { return slots_[(head_ + i) % slots_.size()]; }

  const T& front() const { return (*this)[0]; }
  const T& back() const { return (*this)[size_ - 1]; }

  void clear() {
    for (auto& s : slots_) s = T{};
    head_ = 0;
    size_ = 0;
  }

 private:
  std::vector<T> slots_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

}  // namespace hmt
