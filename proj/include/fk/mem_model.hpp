#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cassert>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "result.hpp"
#include "trace.hpp"
#include "util.hpp"

namespace fk {

// Byte address into simulated physical memory.
struct PhysAddr {
  std::uint64_t value = 0;
  constexpr auto operator<=>(const PhysAddr&) const = default;
};

// Privileged uses of typed frames.
enum class TypedKind : std::uint8_t {
  page_table = 0,
  kernel_stack = 1,
  slab = 2,
  metadata = 3,
};

enum class StateKind : std::uint8_t { unused = 0, typed = 1, untyped = 2 };

struct FrameState {
  StateKind kind = StateKind::unused;
  std::uint16_t tag = 0;  // claiming metadata-kind id; 0 when unused

  bool is_unused() const { return kind == StateKind::unused; }
  bool is_typed() const { return kind == StateKind::typed; }
  bool is_untyped() const { return kind == StateKind::untyped; }

  friend bool operator==(const FrameState&, const FrameState&) = default;
};

struct FrameMeta {
  std::uint32_t ref_count = 0;
  FrameState state;
  std::uint64_t payload = 0;  // client metadata slot, owned by the claim holder
};

struct Region {
  PhysAddr addr;
  std::uint64_t len = 0;
};

// Registered per-frame metadata kind. Builtin kinds 0..3 cover the
// privileged typed uses; client kinds are registered before the first
// claim and may carry the untyped marker.
struct MetaKindInfo {
  std::uint16_t id = 0;
  std::string name;
  std::uint32_t payload_size = 0;  // bytes serialized into the payload slot, <= 8
  bool untyped = false;
  TypedKind typed_use = TypedKind::metadata;  // meaningful when !untyped
};

// Toggles for the safety mechanisms, used by the overhead benchmarks.
// Production configuration is everything on; turning a check off never
// changes results for well-formed workloads.
struct SafetyChecks {
  bool bounds = true;            // byte-access boundary checks
  bool claim_validation = true;  // unused/usable validation on frame claims
  bool atomic_metadata = true;   // CAS metadata updates vs unsynchronized read+write
  bool running_flag = true;      // scheduler single-run guard
  bool fit_check = true;         // heap object size/alignment fit check
  bool guard_pages = true;       // kernel stack guard region creation
};

struct MemConfig {
  std::uint64_t frame_size = 4096;
  std::uint64_t frame_count = 4096;
  std::vector<Region> usable;
  bool reserve_metadata_frames = false;
  SafetyChecks checks;
};

// Serialized metadata entry width used by the reserved-residency option and
// the snapshot format: u32 ref_count, u8 state, u8 pad, u16 kind, u64 payload.
inline constexpr std::uint64_t kMetaEntryBytes = 16;

inline constexpr std::uint16_t kKindPageTable = 0;
inline constexpr std::uint16_t kKindKernelStack = 1;
inline constexpr std::uint16_t kKindSlab = 2;
inline constexpr std::uint16_t kKindMetadata = 3;

class MemoryMap;
Result<std::unique_ptr<MemoryMap>> mem_init(MemConfig cfg);

// Simulated physical memory: a zero-initialized byte store divided into
// fixed-size frames plus one metadata word per frame. Metadata updates are
// linearizable; disjoint byte ranges may be accessed concurrently.
class MemoryMap {
 public:
  MemoryMap(const MemoryMap&) = delete;
  MemoryMap& operator=(const MemoryMap&) = delete;

  std::uint64_t frame_size() const { return frame_size_; }
  std::uint64_t frame_count() const { return frame_count_; }
  std::uint64_t total_bytes() const { return frame_size_ * frame_count_; }
  const std::vector<Region>& usable_regions() const { return usable_; }
  const SafetyChecks& checks() const { return checks_; }

  // Privileged: benchmark harnesses flip individual safety mechanisms.
  void set_checks(const SafetyChecks& c) { checks_ = c; }

  bool any_claims() const { return any_claims_.load(std::memory_order_acquire); }

  // --- metadata kinds -------------------------------------------------

  Result<std::uint16_t> register_meta_kind(std::string name, std::uint32_t payload_size,
                                           bool untyped,
                                           TypedKind typed_use = TypedKind::metadata) {
    std::lock_guard lock(kind_mutex_);
    if (any_claims()) return Error{Errc::too_late, "kinds are fixed after the first claim"};
    if (payload_size > 8) return Error{Errc::out_of_range, "payload slot is 8 bytes"};
    if (kinds_.size() > 0xffff) return Error{Errc::exhausted, "kind ids"};
    auto id = static_cast<std::uint16_t>(kinds_.size());
    kinds_.push_back(MetaKindInfo{id, std::move(name), payload_size, untyped, typed_use});
    return id;
  }

  const MetaKindInfo* kind_info(std::uint16_t id) const {
    std::lock_guard lock(kind_mutex_);
    if (id >= kinds_.size()) return nullptr;
    return &kinds_[id];
  }

  bool kind_untyped(std::uint16_t id) const {
    const MetaKindInfo* k = kind_info(id);
    return k != nullptr && k->untyped;
  }

  std::size_t kind_count() const {
    std::lock_guard lock(kind_mutex_);
    return kinds_.size();
  }

  // --- metadata operations ---------------------------------------------

  Result<FrameMeta> meta_read(std::uint64_t frame) const {
    if (frame >= frame_count_) return Error{Errc::out_of_bounds, "frame index"};
    emit({trace_tid(), TraceOp::meta_read, frame, 0});
    return load_meta(frame);
  }

  // Observe-only snapshot for censuses and reporting; emits no trace event.
  FrameMeta peek_meta(std::uint64_t frame) const {
    assert(frame < frame_count_);
    return load_meta(frame);
  }

  std::uint64_t census_total_refs() const {
    std::uint64_t sum = 0;
    for (std::uint64_t f = 0; f < frame_count_; ++f) {
      sum += peek_meta(f).ref_count;
    }
    return sum;
  }

  // Compare-and-exchange contract over (ref_count, state). Applies
  // `desired` (including its payload) only if the current metadata equals
  // `expected`; otherwise returns Conflict and changes nothing. With
  // atomic_metadata disabled this degrades to an unsynchronized
  // read-check-write pair, which is exactly the bug shape the trace oracle
  // exists to catch.
  Status meta_transition(std::uint64_t frame, const FrameMeta& expected,
                         const FrameMeta& desired) {
    if (frame >= frame_count_) return Error{Errc::out_of_bounds, "frame index"};
    const std::uint64_t want = encode_word(expected);
    const std::uint64_t next = encode_word(desired);
    if (checks_.atomic_metadata) {
      std::uint64_t cur = want;
      bool won = words_[frame].compare_exchange_strong(cur, next, std::memory_order_acq_rel,
                                                       std::memory_order_acquire);
      emit({trace_tid(), TraceOp::meta_cas, frame, 0});
      if (!won) return Error{Errc::conflict};
    } else {
      std::uint64_t cur = words_[frame].load(std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_read, frame, 0});
      if (cur != want) return Error{Errc::conflict};
      words_[frame].store(next, std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_write, frame, 0});
    }
    payloads_[frame].store(desired.payload, std::memory_order_relaxed);
    note_transition(expected, desired);
    return ok_status();
  }

  // --- claim / duplicate / release primitives (framework internal) ------

  // Unused -> claimed by `kind`, ref_count 1. Exactly one racer wins.
  Status claim_frame(std::uint64_t frame, std::uint16_t kind, std::uint64_t payload) {
    const MetaKindInfo* info = kind_info(kind);
    if (info == nullptr) return Error{Errc::unknown_kind};
    FrameState claimed{info->untyped ? StateKind::untyped : StateKind::typed, kind};
    if (!checks_.claim_validation) {
      // Unchecked mode trusts the caller: force the claimed word in place.
      if (frame >= frame_count_) return Error{Errc::out_of_bounds, "frame index"};
      words_[frame].store(encode_word(FrameMeta{1, claimed, 0}), std::memory_order_relaxed);
      payloads_[frame].store(payload, std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_write, frame, 0});
      generations_[frame].fetch_add(1, std::memory_order_acq_rel);
      any_claims_.store(true, std::memory_order_release);
      return ok_status();
    }
    Status st = meta_transition(frame, FrameMeta{0, FrameState{}, 0},
                                FrameMeta{1, claimed, payload});
    if (!st.ok()) {
      if (st.errc() == Errc::conflict) return Error{Errc::in_use};
      return st;
    }
    generations_[frame].fetch_add(1, std::memory_order_acq_rel);
    return ok_status();
  }

  // ref_count += 1. Saturates with a fault at the 32-bit ceiling.
  Status dup_frame(std::uint64_t frame) {
    if (frame >= frame_count_) return Error{Errc::out_of_bounds, "frame index"};
    if (checks_.atomic_metadata) {
      std::uint64_t cur = words_[frame].load(std::memory_order_acquire);
      for (;;) {
        std::uint32_t count = static_cast<std::uint32_t>(cur);
        if (count == 0) return Error{Errc::stale_handle, "duplicate of unclaimed frame"};
        if (count == 0xffffffffu) return Error{Errc::saturation, "ref_count"};
        if (words_[frame].compare_exchange_weak(cur, cur + 1, std::memory_order_acq_rel,
                                                std::memory_order_acquire)) {
          break;
        }
      }
      emit({trace_tid(), TraceOp::meta_cas, frame, 0});
    } else {
      std::uint64_t cur = words_[frame].load(std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_read, frame, 0});
      std::uint32_t count = static_cast<std::uint32_t>(cur);
      if (count == 0) return Error{Errc::stale_handle, "duplicate of unclaimed frame"};
      if (count == 0xffffffffu) return Error{Errc::saturation, "ref_count"};
      words_[frame].store(cur + 1, std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_write, frame, 0});
    }
    return ok_status();
  }

  struct ReleaseOutcome {
    std::uint32_t remaining = 0;
    bool released = false;  // count hit zero; state returned to Unused
  };

  // ref_count -= 1; the 1 -> 0 transition atomically returns the frame to
  // Unused in the same step.
  Result<ReleaseOutcome> release_frame(std::uint64_t frame) {
    if (frame >= frame_count_) return Error{Errc::out_of_bounds, "frame index"};
    ReleaseOutcome out;
    if (checks_.atomic_metadata) {
      std::uint64_t cur = words_[frame].load(std::memory_order_acquire);
      for (;;) {
        std::uint32_t count = static_cast<std::uint32_t>(cur);
        if (count == 0) return Error{Errc::stale_handle, "release of unclaimed frame"};
        std::uint64_t next = (count == 1) ? 0 : cur - 1;
        if (words_[frame].compare_exchange_weak(cur, next, std::memory_order_acq_rel,
                                                std::memory_order_acquire)) {
          out.remaining = count - 1;
          out.released = (count == 1);
          break;
        }
      }
      emit({trace_tid(), TraceOp::meta_cas, frame, 0});
    } else {
      std::uint64_t cur = words_[frame].load(std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_read, frame, 0});
      std::uint32_t count = static_cast<std::uint32_t>(cur);
      if (count == 0) return Error{Errc::stale_handle, "release of unclaimed frame"};
      std::uint64_t next = (count == 1) ? 0 : cur - 1;
      words_[frame].store(next, std::memory_order_relaxed);
      emit({trace_tid(), TraceOp::meta_write, frame, 0});
      out.remaining = count - 1;
      out.released = (count == 1);
    }
    if (out.released) payloads_[frame].store(0, std::memory_order_relaxed);
    return out;
  }

  std::uint32_t generation(std::uint64_t frame) const {
    assert(frame < frame_count_);
    return generations_[frame].load(std::memory_order_acquire);
  }

  // --- usable-range queries ---------------------------------------------

  // True when [addr, addr+len) is covered by the usable regions.
  bool range_usable(PhysAddr addr, std::uint64_t len) const {
    if (len == 0) return false;
    std::uint64_t cur = addr.value;
    std::uint64_t end = addr.value + len;
    if (end < addr.value) return false;  // wraparound
    for (const Region& r : usable_) {
      std::uint64_t rend = r.addr.value + r.len;
      if (cur < r.addr.value) return false;  // gap before next region
      if (cur >= rend) continue;
      cur = rend;
      if (cur >= end) return true;
    }
    return cur >= end;
  }

  // --- raw store access (privileged plumbing) ----------------------------

  void raw_store_read(std::uint64_t addr, std::span<std::uint8_t> dst) const {
    assert(addr + dst.size() <= total_bytes() && addr + dst.size() >= addr);
    if (!dst.empty()) std::memcpy(dst.data(), store_.data() + addr, dst.size());
    emit({trace_tid(), TraceOp::byte_read, addr, dst.size()});
  }

  void raw_store_write(std::uint64_t addr, std::span<const std::uint8_t> src) {
    assert(addr + src.size() <= total_bytes() && addr + src.size() >= addr);
    if (!src.empty()) std::memcpy(store_.data() + addr, src.data(), src.size());
    emit({trace_tid(), TraceOp::byte_write, addr, src.size()});
  }

  std::span<const std::uint8_t> raw_store_view() const { return store_; }

  // Snapshot restore: force one frame's metadata without trace noise.
  void restore_meta(std::uint64_t frame, const FrameMeta& m) {
    assert(frame < frame_count_);
    words_[frame].store(encode_word(m), std::memory_order_relaxed);
    payloads_[frame].store(m.payload, std::memory_order_relaxed);
    if (m.ref_count > 0) any_claims_.store(true, std::memory_order_release);
  }

  void raw_store_restore(std::span<const std::uint8_t> bytes) {
    assert(bytes.size() == store_.size());
    std::memcpy(store_.data(), bytes.data(), bytes.size());
  }

  // --- trace attachment ---------------------------------------------------

  void attach_sink(TraceSink* sink) { sink_.store(sink, std::memory_order_release); }
  void detach_sink() { sink_.store(nullptr, std::memory_order_release); }
  TraceSink* sink() const { return sink_.load(std::memory_order_acquire); }

  std::uint64_t reserved_metadata_frames() const { return reserved_frames_; }

 private:
  friend Result<std::unique_ptr<MemoryMap>> mem_init(MemConfig cfg);

  explicit MemoryMap(MemConfig cfg)
      : frame_size_(cfg.frame_size),
        frame_count_(cfg.frame_count),
        checks_(cfg.checks),
        usable_(std::move(cfg.usable)),
        store_(cfg.frame_size * cfg.frame_count),
        words_(cfg.frame_count),
        payloads_(cfg.frame_count),
        generations_(cfg.frame_count) {
    kinds_ = {
        MetaKindInfo{kKindPageTable, "page-table", 0, false, TypedKind::page_table},
        MetaKindInfo{kKindKernelStack, "kernel-stack", 0, false, TypedKind::kernel_stack},
        MetaKindInfo{kKindSlab, "slab", 0, false, TypedKind::slab},
        MetaKindInfo{kKindMetadata, "frame-metadata", 0, false, TypedKind::metadata},
    };
  }

  static std::uint64_t encode_word(const FrameMeta& m) {
    return static_cast<std::uint64_t>(m.ref_count) |
           (static_cast<std::uint64_t>(m.state.kind) << 32) |
           (static_cast<std::uint64_t>(m.state.tag) << 34);
  }

  static FrameMeta decode_word(std::uint64_t w) {
    FrameMeta m;
    m.ref_count = static_cast<std::uint32_t>(w);
    m.state.kind = static_cast<StateKind>((w >> 32) & 0x3);
    m.state.tag = static_cast<std::uint16_t>((w >> 34) & 0xffff);
    return m;
  }

  FrameMeta load_meta(std::uint64_t frame) const {
    FrameMeta m = decode_word(words_[frame].load(std::memory_order_acquire));
    m.payload = payloads_[frame].load(std::memory_order_relaxed);
    return m;
  }

  void note_transition(const FrameMeta& expected, const FrameMeta& desired) {
    if (expected.state.is_unused() && !desired.state.is_unused()) {
      any_claims_.store(true, std::memory_order_release);
    }
  }

  void emit(const TraceEvent& ev) const {
    if (TraceSink* s = sink_.load(std::memory_order_acquire)) s->emit(ev);
  }

  std::uint64_t frame_size_;
  std::uint64_t frame_count_;
  SafetyChecks checks_;
  std::vector<Region> usable_;
  std::vector<std::uint8_t> store_;
  std::vector<std::atomic<std::uint64_t>> words_;
  std::vector<std::atomic<std::uint64_t>> payloads_;
  std::vector<std::atomic<std::uint32_t>> generations_;
  std::atomic<bool> any_claims_{false};
  std::atomic<TraceSink*> sink_{nullptr};
  std::uint64_t reserved_frames_ = 0;

  mutable std::mutex kind_mutex_;
  std::vector<MetaKindInfo> kinds_;
};

inline Result<std::unique_ptr<MemoryMap>> mem_init(MemConfig cfg) {
  if (!is_pow2(cfg.frame_size) || cfg.frame_size < 256) {
    return Error{Errc::bad_geometry, "frame_size must be a power of two >= 256"};
  }
  if (cfg.frame_count == 0) return Error{Errc::bad_geometry, "frame_count"};
  const std::uint64_t total = cfg.frame_size * cfg.frame_count;
  if (total / cfg.frame_size != cfg.frame_count) {
    return Error{Errc::bad_geometry, "map size overflow"};
  }
  std::sort(cfg.usable.begin(), cfg.usable.end(),
            [](const Region& a, const Region& b) { return a.addr.value < b.addr.value; });
  std::uint64_t prev_end = 0;
  bool first = true;
  for (const Region& r : cfg.usable) {
    if (r.len == 0 || r.addr.value % cfg.frame_size != 0 || r.len % cfg.frame_size != 0) {
      return Error{Errc::unaligned_region};
    }
    std::uint64_t end = r.addr.value + r.len;
    if (end < r.addr.value || end > total) return Error{Errc::out_of_bounds, "usable region"};
    if (!first && r.addr.value < prev_end) return Error{Errc::overlapping_regions};
    prev_end = end;
    first = false;
  }

  std::uint64_t reserve = 0;
  if (cfg.reserve_metadata_frames) {
    std::uint64_t meta_bytes = cfg.frame_count * kMetaEntryBytes;
    reserve = (meta_bytes + cfg.frame_size - 1) / cfg.frame_size;
    if (reserve >= cfg.frame_count) return Error{Errc::bad_geometry, "metadata reservation"};
    // The reserved low frames leave the usable list so allocators never see
    // them.
    std::vector<Region> trimmed;
    std::uint64_t cut = reserve * cfg.frame_size;
    for (const Region& r : cfg.usable) {
      std::uint64_t end = r.addr.value + r.len;
      std::uint64_t start = std::max(r.addr.value, cut);
      if (start < end) trimmed.push_back(Region{PhysAddr{start}, end - start});
    }
    cfg.usable = std::move(trimmed);
  }

  std::unique_ptr<MemoryMap> map(new MemoryMap(std::move(cfg)));
  map->reserved_frames_ = reserve;
  for (std::uint64_t f = 0; f < reserve; ++f) {
    map->restore_meta(f, FrameMeta{1, FrameState{StateKind::typed, kKindMetadata}, 0});
  }
  // Bootstrap reservations are not client claims; registration windows stay
  // open on a fresh map.
  map->any_claims_.store(false, std::memory_order_release);
  return map;
}

inline Result<std::unique_ptr<MemoryMap>> mem_init(std::uint64_t frame_size,
                                                   std::uint64_t frame_count,
                                                   std::vector<Region> usable) {
  MemConfig cfg;
  cfg.frame_size = frame_size;
  cfg.frame_count = frame_count;
  cfg.usable = std::move(usable);
  return mem_init(std::move(cfg));
}

}  // namespace fk
