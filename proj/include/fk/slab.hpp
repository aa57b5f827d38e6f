#pragma once

#include <atomic>
#include <cassert>
#include <cstdint>
#include <mutex>
#include <utility>
#include <vector>

#include "frame_alloc.hpp"

namespace fk {

// Size and alignment of a value to be placed on the heap.
struct TypeTag {
  std::uint64_t size = 0;
  std::uint64_t alignment = 1;
};

inline bool fits(const TypeTag& tag, PhysAddr slot_addr, std::uint64_t slot_size) {
  return tag.size <= slot_size && slot_addr.value % tag.alignment == 0;
}

class Slab;
class HeapObject;
class HeapSlot;
Result<HeapObject> heapslot_into_object(Slab& parent, HeapSlot&& slot, const TypeTag& tag);

// A free slot handed out by a Slab, waiting for object placement. Move-only:
// a slot is consumed by conversion or recycling.
class HeapSlot {
 public:
  HeapSlot() = default;
  HeapSlot(HeapSlot&& other) noexcept { steal(other); }
  HeapSlot& operator=(HeapSlot&& other) noexcept {
    if (this != &other) steal(other);
    return *this;
  }
  HeapSlot(const HeapSlot&) = delete;
  HeapSlot& operator=(const HeapSlot&) = delete;

  bool valid() const { return size_ > 0; }
  std::uint64_t parent_id() const { return parent_id_; }
  std::uint32_t index() const { return index_; }
  PhysAddr addr() const { return addr_; }
  std::uint64_t size() const { return size_; }

 private:
  friend class Slab;
  friend Result<HeapObject> heapslot_into_object(Slab& parent, HeapSlot&& slot,
                                                 const TypeTag& tag);
  HeapSlot(std::uint64_t parent, std::uint32_t index, PhysAddr addr, std::uint64_t size)
      : parent_id_(parent), index_(index), addr_(addr), size_(size) {}

  void steal(HeapSlot& other) {
    parent_id_ = other.parent_id_;
    index_ = other.index_;
    addr_ = other.addr_;
    size_ = other.size_;
    other.size_ = 0;
  }

  std::uint64_t parent_id_ = 0;
  std::uint32_t index_ = 0;
  PhysAddr addr_{};
  std::uint64_t size_ = 0;
};

class Slab;

// An occupied slot (or, for oversize allocations, a dedicated segment).
// Dropping the object returns the slot to its parent slab.
class HeapObject {
 public:
  HeapObject() = default;
  HeapObject(HeapObject&& other) noexcept { steal(other); }
  HeapObject& operator=(HeapObject&& other) noexcept {
    if (this != &other) {
      release();
      steal(other);
    }
    return *this;
  }
  HeapObject(const HeapObject&) = delete;
  HeapObject& operator=(const HeapObject&) = delete;
  ~HeapObject() { release(); }

  bool valid() const { return parent_ != nullptr || segment_.live(); }
  PhysAddr addr() const { return addr_; }
  std::uint64_t storage_size() const { return size_; }
  const TypeTag& tag() const { return tag_; }

  inline void release();

  static HeapObject from_segment(SegmentHandle segment, const TypeTag& tag) {
    HeapObject o;
    o.addr_ = segment.addr();
    o.size_ = segment.span_bytes();
    o.tag_ = tag;
    o.segment_ = std::move(segment);
    return o;
  }

 private:
  friend Result<HeapObject> heapslot_into_object(Slab& parent, HeapSlot&& slot,
                                                 const TypeTag& tag);

  void steal(HeapObject& other) {
    parent_ = other.parent_;
    index_ = other.index_;
    addr_ = other.addr_;
    size_ = other.size_;
    tag_ = other.tag_;
    segment_ = std::move(other.segment_);
    other.parent_ = nullptr;
  }

  Slab* parent_ = nullptr;
  std::uint32_t index_ = 0;
  PhysAddr addr_{};
  std::uint64_t size_ = 0;
  TypeTag tag_;
  SegmentHandle segment_;
};

// One or more contiguous typed frames partitioned into fixed-size slots.
// The framework owns the active count; no injected policy can corrupt it.
// Dropping a slab with active slots is an unrecoverable fault and leaves
// the slab (and its frames) untouched. A slab must stay at a stable address
// while slots or objects from it are live.
class Slab {
 public:
  Slab() = default;
  Slab(Slab&&) = default;
  Slab& operator=(Slab&&) = default;
  Slab(const Slab&) = delete;
  Slab& operator=(const Slab&) = delete;

  ~Slab() {
    if (mutex_ == nullptr) return;  // moved-from
    std::lock_guard lock(*mutex_);
    if (backing_.live() && active_ > 0) {
      // Destroyed with live slots after a refused drop(). The frames stay
      // claimed forever; freeing them under live objects would be the very
      // bug the fault exists to stop.
      new SegmentHandle(std::move(backing_));
    }
  }

  static Result<Slab> create(FrameAllocSlot& frames, std::uint64_t slot_size,
                             std::uint64_t slot_count) {
    if (slot_size == 0 || slot_count == 0) return Error{Errc::bad_geometry};
    const std::uint64_t bytes = slot_size * slot_count;
    if (bytes / slot_size != slot_count) return Error{Errc::bad_geometry, "span overflow"};
    const std::uint64_t fs = frames.map().frame_size();
    const std::uint64_t nframes = (bytes + fs - 1) / fs;

    auto seg = frames.alloc_frames(AllocLayout{nframes * fs, fs}, kKindSlab);
    if (!seg.ok()) {
      if (seg.errc() == Errc::policy_exhausted || seg.errc() == Errc::not_registered) {
        return Error{Errc::exhausted, seg.error().to_string()};
      }
      return seg.error();
    }

    Slab s;
    s.map_ = &frames.map();
    s.backing_ = seg.take();
    s.slot_size_ = slot_size;
    s.slot_count_ = slot_count;
    s.live_.assign(slot_count, false);
    s.free_list_.reserve(slot_count);
    for (std::uint64_t i = slot_count; i > 0; --i) {
      s.free_list_.push_back(static_cast<std::uint32_t>(i - 1));
    }
    s.id_ = next_id().fetch_add(1, std::memory_order_relaxed);
    return s;
  }

  Result<HeapSlot> alloc() {
    std::lock_guard lock(*mutex_);
    if (free_list_.empty()) return Error{Errc::slab_full};
    std::uint32_t index = free_list_.back();
    free_list_.pop_back();
    live_[index] = true;
    ++active_;
    return HeapSlot(id_, index,
                    PhysAddr{backing_.addr().value + std::uint64_t{index} * slot_size_},
                    slot_size_);
  }

  // Recycles a slot. A slot belonging to another slab is rejected without
  // being consumed; an already-consumed slot is the double-free shape.
  Status dealloc(HeapSlot&& slot) {
    if (slot.parent_id() != id_) return Error{Errc::foreign_slot};
    if (!slot.valid()) return Error{Errc::double_free, "slot already consumed"};
    std::uint32_t index = slot.index();
    slot.size_ = 0;
    return return_index(index);
  }

  // Fault-checked teardown: releases the backing frames only when no slot
  // is active.
  Status drop() {
    std::lock_guard lock(*mutex_);
    if (!backing_.live()) return Error{Errc::stale_handle, "slab already dropped"};
    if (active_ > 0) {
      return Error{Errc::active_slots_remain,
                   std::to_string(active_) + " active slots at drop"};
    }
    backing_.reset();
    return ok_status();
  }

  bool dropped() const {
    std::lock_guard lock(*mutex_);
    return !backing_.live();
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t slot_size() const { return slot_size_; }
  std::uint64_t slot_count() const { return slot_count_; }
  PhysAddr base() const { return backing_.addr(); }

  std::uint32_t active() const {
    std::lock_guard lock(*mutex_);
    return active_;
  }

  bool full() const {
    std::lock_guard lock(*mutex_);
    return free_list_.empty();
  }

  const MemoryMap* map() const { return map_; }

 private:
  friend Result<HeapObject> heapslot_into_object(Slab& parent, HeapSlot&& slot,
                                                 const TypeTag& tag);
  friend class HeapObject;

  static std::atomic<std::uint64_t>& next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter;
  }

  Status return_index(std::uint32_t index) {
    std::lock_guard lock(*mutex_);
    if (index >= slot_count_ || !live_[index]) return Error{Errc::double_free};
    live_[index] = false;
    free_list_.push_back(index);
    --active_;
    return ok_status();
  }

  MemoryMap* map_ = nullptr;
  SegmentHandle backing_;
  std::uint64_t slot_size_ = 0;
  std::uint64_t slot_count_ = 0;
  std::uint64_t id_ = 0;
  std::uint32_t active_ = 0;
  std::vector<std::uint32_t> free_list_;
  std::vector<bool> live_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

// Converts a free slot into an occupied heap object after the fit check:
// the object's size must not exceed the slot and the slot address must
// satisfy the object's alignment. On Misfit the slot is recycled back to
// the slab; on ForeignSlot the caller keeps it.
inline Result<HeapObject> heapslot_into_object(Slab& parent, HeapSlot&& slot,
                                               const TypeTag& tag) {
  if (slot.parent_id() != parent.id()) return Error{Errc::foreign_slot};
  if (!slot.valid()) return Error{Errc::double_free, "slot already consumed"};
  if (tag.size == 0 || !is_pow2(tag.alignment)) return Error{Errc::out_of_range, "type tag"};
  std::uint32_t index = slot.index();
  PhysAddr addr = slot.addr();
  std::uint64_t size = slot.size();
  slot.size_ = 0;
  const bool checked = parent.map() == nullptr || parent.map()->checks().fit_check;
  if (checked && !fits(tag, addr, size)) {
    Status st = parent.return_index(index);
    (void)st;
    return Error{Errc::misfit};
  }
  HeapObject o;
  o.parent_ = &parent;
  o.index_ = index;
  o.addr_ = addr;
  o.size_ = size;
  o.tag_ = tag;
  return o;
}

inline void HeapObject::release() {
  if (parent_ != nullptr) {
    Status st = parent_->return_index(index_);
    assert(st.ok() && "heap object slot vanished under us");
    (void)st;
    parent_ = nullptr;
  }
  segment_.reset();
}

}  // namespace fk
