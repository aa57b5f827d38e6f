#pragma once

#include <array>
#include <bit>
#include <cassert>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>

#include "../frame_alloc.hpp"
#include "../util.hpp"

namespace fk::services {

// Reference frame-allocation policy: a buddy system over frame-granular
// blocks with power-of-two orders. Ties between equal-order free blocks go
// to the lowest address. Allocations above the requested size are rounded
// up to the block order internally and accounted as reserved.
class BuddyAllocator final : public FrameAlloc {
 public:
  explicit BuddyAllocator(std::uint64_t frame_size) : fs_(frame_size) {}

  std::optional<PhysAddr> alloc(const AllocLayout& layout) override {
    std::lock_guard lock(mutex_);
    const std::uint64_t frames = layout.size / fs_;
    std::uint32_t order = log2_ceil(frames);
    if (layout.alignment > fs_) {
      order = std::max(order, log2_ceil(layout.alignment / fs_));
    }
    if (order >= kOrders) return std::nullopt;

    std::uint32_t have = order;
    while (have < kOrders && free_[have].empty()) ++have;
    if (have >= kOrders) return std::nullopt;

    std::uint64_t block = *free_[have].begin();
    free_[have].erase(free_[have].begin());
    while (have > order) {
      --have;
      free_[have].insert(block + (std::uint64_t{1} << have));
    }
    live_.emplace(block, order);
    reserved_ += (std::uint64_t{1} << order) * fs_;
    return PhysAddr{block * fs_};
  }

  void dealloc(PhysAddr addr, std::uint64_t size) override {
    std::lock_guard lock(mutex_);
    std::uint64_t block = addr.value / fs_;
    auto it = live_.find(block);
    assert(it != live_.end() && "dealloc of a range this allocator never produced");
    if (it == live_.end()) return;
    std::uint32_t order = it->second;
    assert(size <= (std::uint64_t{1} << order) * fs_);
    (void)size;
    live_.erase(it);
    reserved_ -= (std::uint64_t{1} << order) * fs_;

    while (order + 1 < kOrders) {
      std::uint64_t buddy = block ^ (std::uint64_t{1} << order);
      if (free_[order].erase(buddy) == 0) break;
      block = std::min(block, buddy);
      ++order;
    }
    free_[order].insert(block);
  }

  void add_free_memory(PhysAddr addr, std::uint64_t size) override {
    std::lock_guard lock(mutex_);
    std::uint64_t first = addr.value / fs_;
    std::uint64_t count = size / fs_;
    managed_ += count * fs_;
    while (count > 0) {
      std::uint32_t align_order =
          first == 0 ? kOrders - 1 : static_cast<std::uint32_t>(std::countr_zero(first));
      std::uint32_t size_order = log2_floor(count);
      std::uint32_t order = std::min(align_order, size_order);
      free_[order].insert(first);
      first += std::uint64_t{1} << order;
      count -= std::uint64_t{1} << order;
    }
  }

  std::uint64_t free_bytes() const {
    std::lock_guard lock(mutex_);
    std::uint64_t total = 0;
    for (std::uint32_t k = 0; k < kOrders; ++k) {
      total += free_[k].size() * ((std::uint64_t{1} << k) * fs_);
    }
    return total;
  }

  std::uint64_t reserved_bytes() const {
    std::lock_guard lock(mutex_);
    return reserved_;
  }

  std::uint64_t managed_bytes() const {
    std::lock_guard lock(mutex_);
    return managed_;
  }

  // Free blocks at a given order, lowest address first.
  std::set<std::uint64_t> free_blocks(std::uint32_t order) const {
    std::lock_guard lock(mutex_);
    return free_[order];
  }

 private:
  static constexpr std::uint32_t kOrders = 40;

  std::uint64_t fs_;
  mutable std::mutex mutex_;
  std::array<std::set<std::uint64_t>, kOrders> free_;
  std::map<std::uint64_t, std::uint32_t> live_;  // block -> order
  std::uint64_t managed_ = 0;
  std::uint64_t reserved_ = 0;
};

}  // namespace fk::services
