#pragma once

#include <bit>
#include <concepts>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mem_model.hpp"
#include "result.hpp"
#include "util.hpp"

namespace fk {

// Plain-old-data shape: a value of `size` bytes where every bit pattern is
// valid, serialized little-endian into the store.
struct PodDesc {
  std::uint32_t size = 0;
  std::uint32_t alignment = 1;
};

// Weak reference to one frame claim, used by harnesses to probe stale
// access after the owning handle dropped.
struct FrameToken {
  std::uint64_t frame = 0;
  std::uint32_t generation = 0;
};

// Receives frames back when the last handle over a policy-allocated claim
// drops. Implemented by the frame-allocator injection slot.
class ReleaseHook {
 public:
  virtual ~ReleaseHook() = default;
  virtual void on_release(PhysAddr addr, std::uint64_t size) = 0;
};

namespace detail {

// Shared machinery behind FrameHandle and SegmentHandle.
struct HandleCore {
  MemoryMap* map = nullptr;
  std::uint64_t first = 0;
  std::uint64_t frames = 0;  // 0 = empty
  std::uint16_t kind = 0;
  bool untyped = false;
  ReleaseHook* origin = nullptr;

  bool live() const { return map != nullptr && frames > 0; }
  std::uint64_t span_bytes() const { return frames * map->frame_size(); }
  std::uint64_t base_addr() const { return first * map->frame_size(); }
};

inline Status claim_range(MemoryMap& map, PhysAddr addr, std::uint64_t len_frames,
                          std::uint16_t kind, std::span<const std::uint64_t> payloads) {
  const std::uint64_t fs = map.frame_size();
  if (len_frames == 0) return Error{Errc::out_of_range, "empty range"};
  if (!payloads.empty() && payloads.size() != 1 && payloads.size() != len_frames) {
    return Error{Errc::out_of_range, "payload count"};
  }
  const std::uint64_t first = addr.value / fs;
  const std::uint64_t bytes = len_frames * fs;
  if (bytes / fs != len_frames || first + len_frames > map.frame_count() ||
      addr.value / fs != first) {
    return Error{Errc::out_of_range};
  }
  if (map.checks().claim_validation) {
    if (addr.value % fs != 0) return Error{Errc::unaligned};
    if (!map.range_usable(addr, bytes)) return Error{Errc::out_of_range, "outside usable memory"};
  }
  for (std::uint64_t i = 0; i < len_frames; ++i) {
    std::uint64_t payload = 0;
    if (payloads.size() == 1) payload = payloads[0];
    else if (!payloads.empty()) payload = payloads[i];
    Status st = map.claim_frame(first + i, kind, payload);
    if (!st.ok()) {
      // All-or-nothing: roll back the frames already claimed.
      for (std::uint64_t j = i; j > 0; --j) {
        auto r = map.release_frame(first + j - 1);
        (void)r;
      }
      return st;
    }
  }
  return ok_status();
}

inline Status dup_range(MemoryMap& map, std::uint64_t first, std::uint64_t n) {
  for (std::uint64_t i = 0; i < n; ++i) {
    Status st = map.dup_frame(first + i);
    if (!st.ok()) {
      for (std::uint64_t j = i; j > 0; --j) {
        auto r = map.release_frame(first + j - 1);
        (void)r;
      }
      return st;
    }
  }
  return ok_status();
}

// Returns true when every covered frame reached zero (claim fully released).
inline bool release_range(MemoryMap& map, std::uint64_t first, std::uint64_t n) {
  bool all_released = n > 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto r = map.release_frame(first + i);
    if (!r.ok() || !r.value().released) all_released = false;
  }
  return all_released;
}

inline Status check_span(const MemoryMap& map, const HandleCore& core, std::uint64_t offset,
                         std::uint64_t len) {
  if (!map.checks().bounds) return ok_status();
  const std::uint64_t span = core.span_bytes();
  if (offset > span || len > span - offset) return Error{Errc::out_of_bounds};
  return ok_status();
}

inline Result<std::vector<std::uint8_t>> read_bytes(const HandleCore& core, std::uint64_t offset,
                                                    std::uint64_t len) {
  if (!core.live()) return Error{Errc::stale_handle};
  if (!core.untyped) return Error{Errc::typed_frame_rejected, "byte access needs untyped memory"};
  if (Status st = check_span(*core.map, core, offset, len); !st.ok()) return st.error();
  std::vector<std::uint8_t> out(len);
  core.map->raw_store_read(core.base_addr() + offset, out);
  return out;
}

inline Status write_bytes(const HandleCore& core, std::uint64_t offset,
                          std::span<const std::uint8_t> bytes) {
  if (!core.live()) return Error{Errc::stale_handle};
  if (!core.untyped) return Error{Errc::typed_frame_rejected, "byte access needs untyped memory"};
  if (Status st = check_span(*core.map, core, offset, bytes.size()); !st.ok()) return st;
  core.map->raw_store_write(core.base_addr() + offset, bytes);
  return ok_status();
}

inline Status check_pod(const MemoryMap& map, const PodDesc& pod, std::uint64_t offset) {
  if (pod.size == 0 || pod.size > 8 || !is_pow2(pod.alignment)) {
    return Error{Errc::out_of_range, "pod descriptor"};
  }
  if (map.checks().bounds && offset % pod.alignment != 0) return Error{Errc::misaligned};
  return ok_status();
}

inline Result<std::uint64_t> read_pod(const HandleCore& core, std::uint64_t offset,
                                      const PodDesc& pod) {
  if (!core.live()) return Error{Errc::stale_handle};
  if (Status st = check_pod(*core.map, pod, offset); !st.ok()) return st.error();
  auto bytes = read_bytes(core, offset, pod.size);
  if (!bytes.ok()) return bytes.error();
  return load_le(bytes.value(), pod.size);
}

inline Status write_pod(const HandleCore& core, std::uint64_t offset, const PodDesc& pod,
                        std::uint64_t value) {
  if (!core.live()) return Error{Errc::stale_handle};
  if (Status st = check_pod(*core.map, pod, offset); !st.ok()) return st;
  std::array<std::uint8_t, 8> buf{};
  store_le(buf, value, pod.size);
  return write_bytes(core, offset, std::span<const std::uint8_t>(buf.data(), pod.size));
}

}  // namespace detail

// Counted handle over one frame. Move-only; the destructor drops the count
// (Rust-style linearity: duplication is explicit, double drop cannot be
// expressed).
class FrameHandle {
 public:
  FrameHandle() = default;
  FrameHandle(FrameHandle&& other) noexcept : core_(other.core_) { other.core_ = {}; }
  FrameHandle& operator=(FrameHandle&& other) noexcept {
    if (this != &other) {
      reset();
      core_ = other.core_;
      other.core_ = {};
    }
    return *this;
  }
  FrameHandle(const FrameHandle&) = delete;
  FrameHandle& operator=(const FrameHandle&) = delete;
  ~FrameHandle() { reset(); }

  // Claims the frame at `addr`: Unused -> claimed, ref_count 0 -> 1, with
  // exactly-one-winner semantics under races.
  static Result<FrameHandle> from_unused(MemoryMap& map, PhysAddr addr, std::uint16_t meta_kind,
                                         std::uint64_t initial_meta = 0) {
    std::uint64_t payload[1] = {initial_meta};
    Status st = detail::claim_range(map, addr, 1, meta_kind, payload);
    if (!st.ok()) return st.error();
    FrameHandle h;
    h.core_ = {&map, addr.value / map.frame_size(), 1, meta_kind, map.kind_untyped(meta_kind),
               nullptr};
    return h;
  }

  Result<FrameHandle> duplicate() const {
    if (!live()) return Error{Errc::stale_handle};
    Status st = detail::dup_range(*core_.map, core_.first, 1);
    if (!st.ok()) return st.error();
    FrameHandle h;
    h.core_ = core_;
    return h;
  }

  void reset() {
    if (live()) {
      bool released = detail::release_range(*core_.map, core_.first, 1);
      if (released && core_.origin != nullptr) {
        core_.origin->on_release(PhysAddr{core_.base_addr()}, core_.map->frame_size());
      }
    }
    core_ = {};
  }

  bool live() const { return core_.live(); }
  std::uint64_t frame() const { return core_.first; }
  PhysAddr addr() const { return PhysAddr{core_.base_addr()}; }
  std::uint64_t span_bytes() const { return core_.span_bytes(); }
  std::uint16_t meta_kind() const { return core_.kind; }
  bool untyped() const { return core_.untyped; }

  FrameToken token() const { return FrameToken{core_.first, core_.map->generation(core_.first)}; }

  Result<std::vector<std::uint8_t>> read_bytes(std::uint64_t offset, std::uint64_t len) const {
    return detail::read_bytes(core_, offset, len);
  }
  Status write_bytes(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    return detail::write_bytes(core_, offset, bytes);
  }
  Result<std::uint64_t> read_pod(std::uint64_t offset, const PodDesc& pod) const {
    return detail::read_pod(core_, offset, pod);
  }
  Status write_pod(std::uint64_t offset, const PodDesc& pod, std::uint64_t value) {
    return detail::write_pod(core_, offset, pod, value);
  }

  template <class T>
    requires(std::integral<T> || std::floating_point<T>)
  Result<T> read_pod_as(std::uint64_t offset) const {
    auto r = read_pod(offset, PodDesc{sizeof(T), alignof(T)});
    if (!r.ok()) return r.error();
    if constexpr (std::integral<T>) {
      return static_cast<T>(r.value());
    } else if constexpr (sizeof(T) == 4) {
      return std::bit_cast<T>(static_cast<std::uint32_t>(r.value()));
    } else {
      return std::bit_cast<T>(r.value());
    }
  }

  template <class T>
    requires(std::integral<T> || std::floating_point<T>)
  Status write_pod_as(std::uint64_t offset, T value) {
    std::uint64_t bits;
    if constexpr (std::integral<T>) {
      bits = static_cast<std::uint64_t>(static_cast<std::make_unsigned_t<T>>(value));
    } else if constexpr (sizeof(T) == 4) {
      bits = std::bit_cast<std::uint32_t>(value);
    } else {
      bits = std::bit_cast<std::uint64_t>(value);
    }
    return write_pod(offset, PodDesc{sizeof(T), alignof(T)}, bits);
  }

 private:
  friend class FrameAllocSlot;
  detail::HandleCore core_;
};

// Counted handle over N contiguous frames, treated as one flat span for
// byte access.
class SegmentHandle {
 public:
  SegmentHandle() = default;
  SegmentHandle(SegmentHandle&& other) noexcept : core_(other.core_) { other.core_ = {}; }
  SegmentHandle& operator=(SegmentHandle&& other) noexcept {
    if (this != &other) {
      reset();
      core_ = other.core_;
      other.core_ = {};
    }
    return *this;
  }
  SegmentHandle(const SegmentHandle&) = delete;
  SegmentHandle& operator=(const SegmentHandle&) = delete;
  ~SegmentHandle() { reset(); }

  // All-or-nothing claim of `len_frames` contiguous frames: every frame
  // claimed, or none (partial failures roll back).
  static Result<SegmentHandle> from_unused(MemoryMap& map, PhysAddr addr,
                                           std::uint64_t len_frames, std::uint16_t meta_kind,
                                           std::span<const std::uint64_t> payloads = {}) {
    Status st = detail::claim_range(map, addr, len_frames, meta_kind, payloads);
    if (!st.ok()) return st.error();
    SegmentHandle h;
    h.core_ = {&map, addr.value / map.frame_size(), len_frames, meta_kind,
               map.kind_untyped(meta_kind), nullptr};
    return h;
  }

  Result<SegmentHandle> duplicate() const {
    if (!live()) return Error{Errc::stale_handle};
    Status st = detail::dup_range(*core_.map, core_.first, core_.frames);
    if (!st.ok()) return st.error();
    SegmentHandle h;
    h.core_ = core_;
    return h;
  }

  void reset() {
    if (live()) {
      bool released = detail::release_range(*core_.map, core_.first, core_.frames);
      if (released && core_.origin != nullptr) {
        core_.origin->on_release(PhysAddr{core_.base_addr()}, core_.span_bytes());
      }
    }
    core_ = {};
  }

  bool live() const { return core_.live(); }
  std::uint64_t first_frame() const { return core_.first; }
  std::uint64_t len() const { return core_.frames; }
  PhysAddr addr() const { return PhysAddr{core_.base_addr()}; }
  std::uint64_t span_bytes() const { return core_.span_bytes(); }
  std::uint16_t meta_kind() const { return core_.kind; }
  bool untyped() const { return core_.untyped; }

  FrameToken token_for(std::uint64_t i) const {
    return FrameToken{core_.first + i, core_.map->generation(core_.first + i)};
  }

  Result<std::vector<std::uint8_t>> read_bytes(std::uint64_t offset, std::uint64_t len) const {
    return detail::read_bytes(core_, offset, len);
  }
  Status write_bytes(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    return detail::write_bytes(core_, offset, bytes);
  }
  Result<std::uint64_t> read_pod(std::uint64_t offset, const PodDesc& pod) const {
    return detail::read_pod(core_, offset, pod);
  }
  Status write_pod(std::uint64_t offset, const PodDesc& pod, std::uint64_t value) {
    return detail::write_pod(core_, offset, pod, value);
  }

 private:
  friend class FrameAllocSlot;
  detail::HandleCore core_;
};

// Stale-access probes: byte access through a retained token. After the
// last drop (or a re-claim) the generation no longer matches; the access
// is rejected and, when a trace sink is attached, flagged as
// use-after-release.
inline Status token_check(MemoryMap& map, const FrameToken& t, TraceOp attempted,
                          std::uint64_t offset, std::uint64_t len) {
  if (t.frame >= map.frame_count()) return Error{Errc::out_of_bounds};
  FrameMeta m = map.peek_meta(t.frame);
  if (m.ref_count == 0 || map.generation(t.frame) != t.generation) {
    if (TraceSink* sink = map.sink()) {
      Violation v;
      v.kind = Violation::Kind::use_after_release;
      v.subject = t.frame;
      TraceEvent ev{trace_tid(), attempted, t.frame * map.frame_size() + offset, len};
      v.events = {ev, ev};
      sink->flag(v);
    }
    return Error{Errc::stale_handle};
  }
  if (!m.state.is_untyped()) return Error{Errc::typed_frame_rejected};
  return ok_status();
}

inline Result<std::vector<std::uint8_t>> token_read_bytes(MemoryMap& map, const FrameToken& t,
                                                          std::uint64_t offset,
                                                          std::uint64_t len) {
  if (Status st = token_check(map, t, TraceOp::byte_read, offset, len); !st.ok())
    return st.error();
  const std::uint64_t span = map.frame_size();
  if (offset > span || len > span - offset) return Error{Errc::out_of_bounds};
  std::vector<std::uint8_t> out(len);
  map.raw_store_read(t.frame * span + offset, out);
  return out;
}

inline Status token_write_bytes(MemoryMap& map, const FrameToken& t, std::uint64_t offset,
                                std::span<const std::uint8_t> bytes) {
  if (Status st = token_check(map, t, TraceOp::byte_write, offset, bytes.size()); !st.ok())
    return st;
  const std::uint64_t span = map.frame_size();
  if (offset > span || bytes.size() > span - offset) return Error{Errc::out_of_bounds};
  map.raw_store_write(t.frame * span + offset, bytes);
  return ok_status();
}

}  // namespace fk
