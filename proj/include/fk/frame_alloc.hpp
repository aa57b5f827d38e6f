#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frame.hpp"
#include "mem_model.hpp"
#include "result.hpp"

namespace fk {

// Frame-granular allocation request.
struct AllocLayout {
  std::uint64_t size = 0;       // bytes, multiple of the frame size
  std::uint64_t alignment = 0;  // bytes, power of two >= the frame size
};

// Interface of an injectable frame allocator. Policies are ordinary safe
// code: nothing they return is trusted until it passes the claim guard.
class FrameAlloc {
 public:
  virtual ~FrameAlloc() = default;
  virtual std::optional<PhysAddr> alloc(const AllocLayout& layout) = 0;
  virtual void dealloc(PhysAddr addr, std::uint64_t size) = 0;
  virtual void add_free_memory(PhysAddr addr, std::uint64_t size) = 0;
};

// Framework side of the injection: forwards requests to the registered
// policy and turns every returned range into a handle through the unused-
// memory guard. A buggy policy yields PolicyUnsound, never a handle.
//
// dealloc must not be called re-entrantly from within an alloc; the
// framework never does (release notifications only fire from handle
// drops), and policies are held to the same rule.
class FrameAllocSlot final : public ReleaseHook {
 public:
  explicit FrameAllocSlot(MemoryMap& map) : map_(map) {}

  FrameAllocSlot(const FrameAllocSlot&) = delete;
  FrameAllocSlot& operator=(const FrameAllocSlot&) = delete;

  MemoryMap& map() { return map_; }

  Status register_allocator(std::shared_ptr<FrameAlloc> policy) {
    std::lock_guard lock(mutex_);
    if (policy_ != nullptr) return Error{Errc::already_registered};
    if (map_.any_claims()) return Error{Errc::too_late, "frames already claimed"};
    policy_ = std::move(policy);
    for (const Region& r : map_.usable_regions()) {
      policy_->add_free_memory(r.addr, r.len);
    }
    return ok_status();
  }

  bool registered() const {
    std::lock_guard lock(mutex_);
    return policy_ != nullptr;
  }

  Result<SegmentHandle> alloc_frames(const AllocLayout& layout, std::uint16_t meta_kind,
                                     std::span<const std::uint64_t> payloads = {}) {
    std::shared_ptr<FrameAlloc> policy;
    {
      std::lock_guard lock(mutex_);
      policy = policy_;
    }
    if (policy == nullptr) return Error{Errc::not_registered};
    const std::uint64_t fs = map_.frame_size();
    if (layout.size == 0 || layout.size % fs != 0) {
      return Error{Errc::unaligned, "layout size must be whole frames"};
    }
    if (!is_pow2(layout.alignment) || layout.alignment < fs) {
      return Error{Errc::unaligned, "layout alignment"};
    }

    std::optional<PhysAddr> addr = policy->alloc(layout);
    if (!addr.has_value()) return Error{Errc::policy_exhausted};

    if (addr->value % layout.alignment != 0) {
      note_unsound("allocator returned " + std::to_string(addr->value) +
                   " for alignment " + std::to_string(layout.alignment));
      return Error{Errc::policy_unsound, "misaligned range from allocator"};
    }
    auto seg = SegmentHandle::from_unused(map_, *addr, layout.size / fs, meta_kind, payloads);
    if (!seg.ok()) {
      note_unsound("allocator returned " + std::to_string(addr->value) + ": " +
                   seg.error().to_string());
      return Error{Errc::policy_unsound, seg.error().to_string()};
    }
    seg.value().core_.origin = this;
    return seg;
  }

  // Last handle over a policy-allocated claim dropped: hand the frames back.
  void on_release(PhysAddr addr, std::uint64_t size) override {
    std::shared_ptr<FrameAlloc> policy;
    {
      std::lock_guard lock(mutex_);
      policy = policy_;
    }
    if (policy != nullptr) policy->dealloc(addr, size);
  }

  std::uint64_t policy_unsound_count() const {
    std::lock_guard lock(mutex_);
    return unsound_log_.size();
  }

  std::vector<std::string> policy_unsound_log() const {
    std::lock_guard lock(mutex_);
    return unsound_log_;
  }

 private:
  void note_unsound(std::string what) {
    std::lock_guard lock(mutex_);
    unsound_log_.push_back(std::move(what));
  }

  MemoryMap& map_;
  mutable std::mutex mutex_;
  std::shared_ptr<FrameAlloc> policy_;
  std::vector<std::string> unsound_log_;
};

}  // namespace fk
