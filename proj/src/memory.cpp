// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The tfsed Authors

#include <cstddef>
#include <map>
#include <mutex>
#include <new>

#include "tfsed/tensor.hpp"

namespace tfsed::detail {

namespace {

constexpr std::align_val_t kAlign{64};
constexpr std::size_t kMinCached = std::size_t{1} << 18;
constexpr std::size_t kCacheLimit = std::size_t{1} << 30;

struct BlockCache {
  std::mutex mu;
  std::multimap<std::size_t, void*> blocks;
  std::size_t total = 0;

  ~BlockCache() {
    for (auto& [bytes, p] : blocks) ::operator delete(p, kAlign);
  }
};

BlockCache& cache() {
  static BlockCache c;
  return c;
}

}  // namespace

void* allocate_aligned(std::size_t bytes) {
  if (bytes >= kMinCached) {
    auto& c = cache();
    std::lock_guard lock(c.mu);
    // Exact size match only; shapes repeat from batch to batch.
    if (auto it = c.blocks.find(bytes); it != c.blocks.end()) {
      void* p = it->second;
      c.blocks.erase(it);
      c.total -= bytes;
      return p;
    }
  }
  return ::operator new(bytes, kAlign);
}

void deallocate_aligned(void* p, std::size_t bytes) noexcept {
  if (p && bytes >= kMinCached) {
    auto& c = cache();
    std::lock_guard lock(c.mu);
    if (c.total + bytes <= kCacheLimit) {
      try {
        c.blocks.emplace(bytes, p);
        c.total += bytes;
        return;
      } catch (...) {
      }
    }
  }
  ::operator delete(p, kAlign);
}

}  // namespace tfsed::detail
