#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <vector>

#include "../slab.hpp"

namespace fk::services {

// Slab-backed global heap: dispatches each allocation to the smallest size
// class whose slots fit the requested size and alignment, growing the
// per-class cache one slab at a time. Requests no class can serve fall back
// to dedicated frames.
class GlobalHeap {
 public:
  explicit GlobalHeap(FrameAllocSlot& frames) : frames_(frames) {}

  GlobalHeap(const GlobalHeap&) = delete;
  GlobalHeap& operator=(const GlobalHeap&) = delete;

  Status register_size_classes(std::vector<std::uint64_t> classes) {
    std::lock_guard lock(mutex_);
    if (!caches_.empty()) return Error{Errc::already_registered};
    if (classes.empty()) return Error{Errc::out_of_range, "no size classes"};
    std::uint64_t prev = 0;
    for (std::uint64_t c : classes) {
      if (c == 0 || c <= prev) return Error{Errc::out_of_range, "classes must strictly increase"};
      prev = c;
    }
    for (std::uint64_t c : classes) caches_.push_back(Cache{c, {}});
    return ok_status();
  }

  bool registered() const {
    std::lock_guard lock(mutex_);
    return !caches_.empty();
  }

  Result<HeapObject> alloc(const TypeTag& tag) {
    if (tag.size == 0 || !is_pow2(tag.alignment)) return Error{Errc::out_of_range, "type tag"};
    std::lock_guard lock(mutex_);
    if (caches_.empty()) return Error{Errc::not_registered};

    for (Cache& cache : caches_) {
      if (cache.class_size < tag.size || cache.class_size % tag.alignment != 0) continue;
      return alloc_from(cache, tag);
    }
    return alloc_direct(tag);
  }

  std::size_t slab_count(std::uint64_t class_size) const {
    std::lock_guard lock(mutex_);
    for (const Cache& c : caches_) {
      if (c.class_size == class_size) return c.slabs.size();
    }
    return 0;
  }

 private:
  struct Cache {
    std::uint64_t class_size;
    std::vector<std::unique_ptr<Slab>> slabs;
  };

  Result<HeapObject> alloc_from(Cache& cache, const TypeTag& tag) {
    for (auto& slab : cache.slabs) {
      if (slab->full() || slab->dropped()) continue;
      auto slot = slab->alloc();
      if (!slot.ok()) continue;
      return heapslot_into_object(*slab, slot.take(), tag);
    }
    // Cache exhausted: grow by one slab.
    const std::uint64_t fs = frames_.map().frame_size();
    std::uint64_t per_slab = cache.class_size >= fs ? 1 : fs / cache.class_size;
    auto grown = Slab::create(frames_, cache.class_size, per_slab);
    if (!grown.ok()) return grown.error();
    cache.slabs.push_back(std::make_unique<Slab>(grown.take()));
    Slab& slab = *cache.slabs.back();
    auto slot = slab.alloc();
    if (!slot.ok()) return slot.error();
    return heapslot_into_object(slab, slot.take(), tag);
  }

  // Oversize (or unalignable) requests get dedicated frames.
  Result<HeapObject> alloc_direct(const TypeTag& tag) {
    const std::uint64_t fs = frames_.map().frame_size();
    std::uint64_t nframes = (tag.size + fs - 1) / fs;
    std::uint64_t alignment = tag.alignment > fs ? tag.alignment : fs;
    auto seg = frames_.alloc_frames(AllocLayout{nframes * fs, alignment}, kKindSlab);
    if (!seg.ok()) {
      if (seg.errc() == Errc::policy_exhausted) return Error{Errc::exhausted};
      return seg.error();
    }
    return HeapObject::from_segment(seg.take(), tag);
  }

  FrameAllocSlot& frames_;
  mutable std::mutex mutex_;
  std::vector<Cache> caches_;
};

}  // namespace fk::services
