#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace vdyn {

/// Bump allocator with chunk-stable storage: reset() recycles the memory
/// without freeing, and growing never invalidates previously returned spans.
/// Rollout workers reuse one arena per sample to keep the hot path
/// allocation-free.
template <typename T>
class Arena {
 public:
  static constexpr std::size_t kMinChunk = 1 << 14;

  std::span<T> alloc(std::size_t n) {
    if (n == 0) return {};
    used_ += n;
    while (chunk_ < chunks_.size() && top_ + n > sizes_[chunk_]) {
      ++chunk_;
      top_ = 0;
    }
    if (chunk_ == chunks_.size()) {
      std::size_t cap = n > kMinChunk ? n : kMinChunk;
      chunks_.push_back(std::make_unique<T[]>(cap));
      sizes_.push_back(cap);
      top_ = 0;
    }
    T* p = chunks_[chunk_].get() + top_;
    top_ += n;
    return {p, n};
  }

  void reset() {
    chunk_ = 0;
    top_ = 0;
    used_ = 0;
  }

  std::size_t capacity() const {
    std::size_t c = 0;
    for (std::size_t s : sizes_) c += s;
    return c;
  }

  /// Elements handed out since construction or the last reset(). Memory
  /// accounting reads this after one step to get the exact per-step usage.
  std::size_t used() const { return used_; }

 private:
  std::vector<std::unique_ptr<T[]>> chunks_;
  std::vector<std::size_t> sizes_;
  std::size_t chunk_ = 0;
  std::size_t top_ = 0;
  std::size_t used_ = 0;
};

}  // namespace vdyn
