#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "frame.hpp"
#include "frame_alloc.hpp"
#include "mem_model.hpp"
#include "result.hpp"
#include "util.hpp"

namespace fk {

// --- user-mode CPU context --------------------------------------------------

enum class Reg : std::uint8_t { pc, sp, sysno, a0, a1, a2, rv };
inline constexpr std::size_t kRegCount = 7;

// User-visible register file. The flags word masks the sensitive bits
// (interrupt-enable and I/O-privilege analogs): stores never alter them and
// loads never reveal them.
class UserContext {
 public:
  static constexpr std::uint64_t kSensitiveMask = (1ull << 9) | (3ull << 12);
  static constexpr std::uint64_t kFlagsInit = 1ull << 9;

  std::uint64_t reg(Reg r) const { return regs_[static_cast<std::size_t>(r)]; }
  void set_reg(Reg r, std::uint64_t v) { regs_[static_cast<std::size_t>(r)] = v; }

  void set_flags(std::uint64_t value) {
    flags_ = (flags_ & kSensitiveMask) | (value & ~kSensitiveMask);
  }
  std::uint64_t flags() const { return flags_ & ~kSensitiveMask; }

  // Privileged observability: the stored word including masked bits.
  std::uint64_t raw_flags_word() const { return flags_; }

 private:
  std::array<std::uint64_t, kRegCount> regs_{};
  std::uint64_t flags_ = kFlagsInit;
};

// --- user address spaces ------------------------------------------------------

enum Perm : std::uint8_t { kPermR = 1, kPermW = 2, kPermX = 4 };

// Page-granular user mappings. Only untyped memory can be mapped; each
// mapping holds a duplicate of its handle, so mapped frames stay claimed
// for exactly as long as the mapping lives.
class VmSpace {
 public:
  explicit VmSpace(MemoryMap& map) : map_(&map) {}

  VmSpace(VmSpace&&) = default;
  VmSpace& operator=(VmSpace&&) = default;

  Status map_frame(std::uint64_t vaddr, const FrameHandle& handle, std::uint8_t perms) {
    if (!handle.live()) return Error{Errc::stale_handle};
    if (!handle.untyped()) return Error{Errc::typed_frame_rejected};
    auto dup = handle.duplicate();
    if (!dup.ok()) return dup.error();
    return install(vaddr, handle.frame(), 1, perms, Holder{dup.take()});
  }

  Status map_segment(std::uint64_t vaddr, const SegmentHandle& handle, std::uint8_t perms) {
    if (!handle.live()) return Error{Errc::stale_handle};
    if (!handle.untyped()) return Error{Errc::typed_frame_rejected};
    auto dup = handle.duplicate();
    if (!dup.ok()) return dup.error();
    return install(vaddr, handle.first_frame(), handle.len(), perms, Holder{dup.take()});
  }

  // Removes the whole mapping containing `vaddr`.
  Status unmap(std::uint64_t vaddr) {
    const std::uint64_t fs = map_->frame_size();
    std::uint64_t vpage = vaddr / fs;
    auto page = pages_.find(vpage);
    if (page == pages_.end()) return Error{Errc::not_mapped};
    std::uint64_t id = page->second.mapping_id;
    for (auto it = pages_.begin(); it != pages_.end();) {
      if (it->second.mapping_id == id) it = pages_.erase(it);
      else ++it;
    }
    mappings_.erase(id);
    return ok_status();
  }

  Result<std::vector<std::uint8_t>> read_user(std::uint64_t vaddr, std::uint64_t len) const {
    std::vector<std::uint8_t> out(len);
    Status st = copy_user(vaddr, len, kPermR, [&](std::uint64_t pos, std::uint64_t phys,
                                                  std::uint64_t chunk) {
      map_->raw_store_read(phys, std::span<std::uint8_t>(out).subspan(pos, chunk));
    });
    if (!st.ok()) return st.error();
    return out;
  }

  Status write_user(std::uint64_t vaddr, std::span<const std::uint8_t> bytes) {
    return copy_user(vaddr, bytes.size(), kPermW,
                     [&](std::uint64_t pos, std::uint64_t phys, std::uint64_t chunk) {
                       map_->raw_store_write(phys, bytes.subspan(pos, chunk));
                     });
  }

  bool mapped(std::uint64_t vaddr) const {
    return pages_.count(vaddr / map_->frame_size()) > 0;
  }

  std::size_t page_count() const { return pages_.size(); }

  // Frames reachable through this space; the Inv-4 oracle checks these are
  // all untyped.
  std::set<std::uint64_t> mapped_frames() const {
    std::set<std::uint64_t> out;
    for (const auto& [vpage, entry] : pages_) out.insert(entry.frame);
    return out;
  }

  MemoryMap& map() const { return *map_; }

 private:
  friend class UserMode;

  using Holder = std::variant<FrameHandle, SegmentHandle>;

  struct PageEntry {
    std::uint64_t frame = 0;
    std::uint8_t perms = 0;
    std::uint64_t mapping_id = 0;
  };

  Status install(std::uint64_t vaddr, std::uint64_t first_frame, std::uint64_t nframes,
                 std::uint8_t perms, Holder holder) {
    const std::uint64_t fs = map_->frame_size();
    if (vaddr % fs != 0) return Error{Errc::unaligned};
    std::uint64_t vpage = vaddr / fs;
    for (std::uint64_t i = 0; i < nframes; ++i) {
      if (pages_.count(vpage + i)) return Error{Errc::overlap};
    }
    std::uint64_t id = next_mapping_++;
    for (std::uint64_t i = 0; i < nframes; ++i) {
      pages_[vpage + i] = PageEntry{first_frame + i, perms, id};
    }
    mappings_.emplace(id, std::move(holder));
    return ok_status();
  }

  // Boundary- and permission-checked copy through the page table, possibly
  // spanning several mappings.
  Status copy_user(std::uint64_t vaddr, std::uint64_t len, std::uint8_t need,
                   const std::function<void(std::uint64_t, std::uint64_t, std::uint64_t)>&
                       chunk_fn) const {
    if (len == 0) return ok_status();
    const std::uint64_t fs = map_->frame_size();
    if (vaddr + len < vaddr) return Error{Errc::out_of_bounds, "wraparound"};
    std::uint64_t pos = 0;
    while (pos < len) {
      std::uint64_t cur = vaddr + pos;
      auto page = pages_.find(cur / fs);
      if (page == pages_.end()) {
        return Error{Errc::not_mapped, "vaddr " + std::to_string(cur)};
      }
      if ((page->second.perms & need) != need) return Error{Errc::permission_denied};
      std::uint64_t in_page = cur % fs;
      std::uint64_t chunk = std::min(fs - in_page, len - pos);
      chunk_fn(pos, page->second.frame * fs + in_page, chunk);
      pos += chunk;
    }
    return ok_status();
  }

  MemoryMap* map_;
  std::map<std::uint64_t, PageEntry> pages_;
  std::map<std::uint64_t, Holder> mappings_;
  std::uint64_t next_mapping_ = 1;
};

// --- scripted user execution ---------------------------------------------------

struct UserOp {
  enum class Kind { load, store, syscall, exit };
  Kind kind = Kind::exit;
  std::uint64_t vaddr = 0;
  std::uint64_t len = 0;                 // load
  std::vector<std::uint8_t> bytes;       // store
  std::uint64_t sysno = 0;               // syscall
  std::array<std::uint64_t, 3> args{};   // syscall
};

inline UserOp uop_load(std::uint64_t vaddr, std::uint64_t len) {
  UserOp op;
  op.kind = UserOp::Kind::load;
  op.vaddr = vaddr;
  op.len = len;
  return op;
}
inline UserOp uop_store(std::uint64_t vaddr, std::vector<std::uint8_t> bytes) {
  UserOp op;
  op.kind = UserOp::Kind::store;
  op.vaddr = vaddr;
  op.bytes = std::move(bytes);
  return op;
}
inline UserOp uop_syscall(std::uint64_t sysno, std::uint64_t a0 = 0, std::uint64_t a1 = 0,
                          std::uint64_t a2 = 0) {
  UserOp op;
  op.kind = UserOp::Kind::syscall;
  op.sysno = sysno;
  op.args = {a0, a1, a2};
  return op;
}
inline UserOp uop_exit() { return UserOp{}; }

struct TrapReason {
  enum class Kind { syscall, page_fault, exit };
  Kind kind = Kind::exit;
  std::uint64_t value = 0;  // syscall number or faulting vaddr

  bool is_syscall(std::uint64_t no) const { return kind == Kind::syscall && value == no; }
};

// Jumps "into user space" and executes the scripted program against the
// attached VmSpace until a trap returns control, with the UserContext
// updated. Faulting ops are not retired; the kernel decides what happens
// next.
class UserMode {
 public:
  UserMode(UserContext& ctx, VmSpace& space, std::vector<UserOp> program)
      : ctx_(&ctx), space_(&space), program_(std::move(program)) {}

  TrapReason run() {
    while (ip_ < program_.size()) {
      const UserOp& op = program_[ip_];
      switch (op.kind) {
        case UserOp::Kind::load: {
          auto bytes = space_->read_user(op.vaddr, op.len);
          if (!bytes.ok()) return TrapReason{TrapReason::Kind::page_fault, op.vaddr};
          std::uint64_t v = load_le(bytes.value(), std::min<std::size_t>(op.len, 8));
          ctx_->set_reg(Reg::rv, v);
          ip_ += 1;
          break;
        }
        case UserOp::Kind::store: {
          if (!space_->write_user(op.vaddr, op.bytes).ok()) {
            return TrapReason{TrapReason::Kind::page_fault, op.vaddr};
          }
          ip_ += 1;
          break;
        }
        case UserOp::Kind::syscall: {
          ctx_->set_reg(Reg::sysno, op.sysno);
          ctx_->set_reg(Reg::a0, op.args[0]);
          ctx_->set_reg(Reg::a1, op.args[1]);
          ctx_->set_reg(Reg::a2, op.args[2]);
          ip_ += 1;
          return TrapReason{TrapReason::Kind::syscall, op.sysno};
        }
        case UserOp::Kind::exit:
          ip_ = program_.size();
          return TrapReason{TrapReason::Kind::exit, 0};
      }
    }
    return TrapReason{TrapReason::Kind::exit, 0};
  }

  bool finished() const { return ip_ >= program_.size(); }

 private:
  UserContext* ctx_;
  VmSpace* space_;
  std::vector<UserOp> program_;
  std::size_t ip_ = 0;
};

// --- kernel stacks with guard regions -------------------------------------------

// Typed kernel-stack frames with one frame-sized guard region below the
// stack (overflow direction). Guard accesses fault without mutating a byte.
class KernelStack {
 public:
  static Result<KernelStack> create(FrameAllocSlot& frames, std::uint64_t stack_frames) {
    if (stack_frames == 0) return Error{Errc::out_of_range, "empty stack"};
    MemoryMap& map = frames.map();
    const bool guarded = map.checks().guard_pages;
    const std::uint64_t fs = map.frame_size();
    const std::uint64_t total = stack_frames + (guarded ? 1 : 0);
    auto seg = frames.alloc_frames(AllocLayout{total * fs, fs}, kKindKernelStack);
    if (!seg.ok()) {
      if (seg.errc() == Errc::policy_exhausted || seg.errc() == Errc::not_registered) {
        return Error{Errc::exhausted, seg.error().to_string()};
      }
      return seg.error();
    }
    KernelStack ks;
    ks.map_ = &map;
    ks.backing_ = seg.take();
    ks.stack_frames_ = stack_frames;
    ks.guarded_ = guarded;
    return ks;
  }

  // Probe an access at a byte offset from the stack base. Offsets below the
  // base land in the guard region.
  Status access(std::int64_t offset) const {
    const std::int64_t fs = static_cast<std::int64_t>(map_->frame_size());
    const std::int64_t limit = static_cast<std::int64_t>(stack_frames_) * fs;
    if (offset >= 0 && offset < limit) return ok_status();
    if (guarded_ && offset < 0 && offset >= -fs) {
      return Error{Errc::guard_fault, "guard region at offset " + std::to_string(offset)};
    }
    return Error{Errc::out_of_bounds};
  }

  Status write(std::int64_t offset, std::span<const std::uint8_t> bytes) {
    if (Status st = span_ok(offset, bytes.size()); !st.ok()) return st;
    map_->raw_store_write(stack_base().value + static_cast<std::uint64_t>(offset), bytes);
    return ok_status();
  }

  Result<std::vector<std::uint8_t>> read(std::int64_t offset, std::uint64_t len) const {
    if (Status st = span_ok(offset, len); !st.ok()) return st.error();
    std::vector<std::uint8_t> out(len);
    map_->raw_store_read(stack_base().value + static_cast<std::uint64_t>(offset), out);
    return out;
  }

  PhysAddr stack_base() const {
    return PhysAddr{backing_.addr().value + (guarded_ ? map_->frame_size() : 0)};
  }
  std::uint64_t stack_bytes() const { return stack_frames_ * map_->frame_size(); }
  bool guarded() const { return guarded_; }
  PhysAddr guard_base() const { return backing_.addr(); }
  std::uint64_t guard_bytes() const { return guarded_ ? map_->frame_size() : 0; }

 private:
  KernelStack() = default;

  Status span_ok(std::int64_t offset, std::uint64_t len) const {
    if (Status st = access(offset); !st.ok()) return st;
    if (len == 0) return ok_status();
    std::int64_t last = offset + static_cast<std::int64_t>(len) - 1;
    if (last < offset) return Error{Errc::out_of_bounds};
    return access(last);
  }

  MemoryMap* map_ = nullptr;
  SegmentHandle backing_;
  std::uint64_t stack_frames_ = 0;
  bool guarded_ = true;
};

// --- I/O sensitivity labeling and MMIO/PIO access --------------------------------

enum class Sensitivity { sensitive, insensitive };
enum class IoKind { mem, port };

// Labeled address/port ranges. Labels are immutable once sealed; anything
// unlabeled defaults to sensitive (fail closed).
class SensitivityRegistry {
 public:
  Status label(IoKind kind, std::uint64_t start, std::uint64_t len, Sensitivity s) {
    if (sealed_) return Error{Errc::sealed, "labels are immutable after sealing"};
    if (len == 0 || start + len < start) return Error{Errc::out_of_range};
    labels_.push_back(Label{kind, start, len, s});
    return ok_status();
  }

  Status seal() {
    if (sealed_) return Error{Errc::sealed};
    sealed_ = true;
    return ok_status();
  }

  bool sealed() const { return sealed_; }

  // True only when every byte of the range is covered by an insensitive
  // label and no sensitive label overlaps it.
  bool insensitive(IoKind kind, std::uint64_t start, std::uint64_t len) const {
    if (len == 0) return false;
    for (const Label& l : labels_) {
      if (l.kind != kind || l.s != Sensitivity::sensitive) continue;
      if (l.start < start + len && start < l.start + l.len) return false;
    }
    std::uint64_t cur = start;
    const std::uint64_t end = start + len;
    while (cur < end) {
      bool advanced = false;
      for (const Label& l : labels_) {
        if (l.kind != kind || l.s != Sensitivity::insensitive) continue;
        if (l.start <= cur && cur < l.start + l.len) {
          cur = l.start + l.len;
          advanced = true;
          break;
        }
      }
      if (!advanced) return false;
    }
    return true;
  }

 private:
  struct Label {
    IoKind kind;
    std::uint64_t start, len;
    Sensitivity s;
  };
  std::vector<Label> labels_;
  bool sealed_ = false;
};

class IoSpace;

// Exclusive claim over an insensitive I/O range.
class IoHandle {
 public:
  IoHandle() = default;
  IoHandle(IoHandle&& other) noexcept { steal(other); }
  IoHandle& operator=(IoHandle&& other) noexcept {
    if (this != &other) {
      release();
      steal(other);
    }
    return *this;
  }
  IoHandle(const IoHandle&) = delete;
  IoHandle& operator=(const IoHandle&) = delete;
  inline ~IoHandle();

  bool live() const { return space_ != nullptr; }
  IoKind kind() const { return kind_; }
  std::uint64_t start() const { return start_; }
  std::uint64_t len() const { return len_; }

  inline void release();

 private:
  friend class IoSpace;
  IoSpace* space_ = nullptr;
  std::uint64_t id_ = 0;
  IoKind kind_ = IoKind::mem;
  std::uint64_t start_ = 0;
  std::uint64_t len_ = 0;

  void steal(IoHandle& other) {
    space_ = other.space_;
    id_ = other.id_;
    kind_ = other.kind_;
    start_ = other.start_;
    len_ = other.len_;
    other.space_ = nullptr;
  }
};

// Reacts to register writes in its wired window.
class IoDevice {
 public:
  virtual ~IoDevice() = default;
  virtual void on_io_write(std::uint64_t addr, std::uint32_t width, std::uint64_t value) = 0;
};

// Simulated MMIO and port spaces. Handles can only be acquired for ranges
// labeled insensitive in a sealed registry and never overlap while live.
// read_once/write_once are single accesses against the backing on every
// call (volatile contract) with boundary checks.
class IoSpace {
 public:
  explicit IoSpace(std::uint64_t mem_bytes = 1 << 16, std::uint64_t port_bytes = 1 << 16)
      : mem_(mem_bytes, 0), ports_(port_bytes, 0) {}

  IoSpace(const IoSpace&) = delete;
  IoSpace& operator=(const IoSpace&) = delete;
  ~IoSpace() = default;

  void set_checks(const SafetyChecks& c) { checks_ = c; }

  // Privileged bootstrap: labeling, sealing and device wiring.
  Status io_label(IoKind kind, std::uint64_t start, std::uint64_t len, Sensitivity s) {
    std::lock_guard lock(mutex_);
    return registry_.label(kind, start, len, s);
  }

  Status seal_labels() {
    std::lock_guard lock(mutex_);
    return registry_.seal();
  }

  Status wire_device(std::uint64_t start, std::uint64_t len, IoDevice* dev) {
    std::lock_guard lock(mutex_);
    if (start + len > mem_.size() || start + len < start) return Error{Errc::out_of_bounds};
    hooks_.push_back(Hook{start, len, dev});
    return ok_status();
  }

  Result<IoHandle> acquire_mem(std::uint64_t start, std::uint64_t len) {
    return acquire(IoKind::mem, start, len, mem_.size());
  }

  Result<IoHandle> acquire_port(std::uint64_t start, std::uint64_t len) {
    return acquire(IoKind::port, start, len, ports_.size());
  }

  Result<std::uint64_t> read_once(const IoHandle& h, std::uint64_t offset,
                                  std::uint32_t width) const {
    if (Status st = op_ok(h, offset, width); !st.ok()) return st.error();
    std::lock_guard lock(mutex_);
    const auto& backing = h.kind() == IoKind::mem ? mem_ : ports_;
    return load_le(std::span<const std::uint8_t>(backing).subspan(h.start() + offset), width);
  }

  Status write_once(const IoHandle& h, std::uint64_t offset, std::uint32_t width,
                    std::uint64_t value) {
    if (Status st = op_ok(h, offset, width); !st.ok()) return st;
    std::vector<Hook> to_fire;
    {
      std::lock_guard lock(mutex_);
      auto& backing = h.kind() == IoKind::mem ? mem_ : ports_;
      store_le(std::span<std::uint8_t>(backing).subspan(h.start() + offset), value, width);
      if (h.kind() == IoKind::mem) {
        std::uint64_t abs = h.start() + offset;
        for (const Hook& hook : hooks_) {
          if (abs < hook.start + hook.len && hook.start < abs + width) to_fire.push_back(hook);
        }
      }
    }
    for (const Hook& hook : to_fire) {
      hook.dev->on_io_write(h.start() + offset, width, value);
    }
    return ok_status();
  }

  // Device-side register update: a device may only poke within a window
  // wired to it, mirroring hardware that owns its own register file.
  Status device_poke(IoDevice* dev, std::uint64_t addr, std::uint64_t value,
                     std::uint32_t width) {
    std::lock_guard lock(mutex_);
    for (const Hook& hook : hooks_) {
      if (hook.dev == dev && addr >= hook.start && addr + width <= hook.start + hook.len) {
        store_le(std::span<std::uint8_t>(mem_).subspan(addr), value, width);
        return ok_status();
      }
    }
    return Error{Errc::permission_denied, "poke outside wired window"};
  }

  std::size_t live_handles() const {
    std::lock_guard lock(mutex_);
    return live_.size();
  }

 private:
  friend class IoHandle;

  struct Live {
    std::uint64_t id;
    IoKind kind;
    std::uint64_t start, len;
  };
  struct Hook {
    std::uint64_t start, len;
    IoDevice* dev;
  };

  Result<IoHandle> acquire(IoKind kind, std::uint64_t start, std::uint64_t len,
                           std::uint64_t space_size) {
    std::lock_guard lock(mutex_);
    if (!registry_.sealed()) return Error{Errc::not_sealed, "label registry not sealed"};
    if (len == 0 || start + len > space_size || start + len < start) {
      return Error{Errc::out_of_bounds};
    }
    if (!registry_.insensitive(kind, start, len)) return Error{Errc::sensitive_range};
    for (const Live& l : live_) {
      if (l.kind == kind && l.start < start + len && start < l.start + l.len) {
        return Error{Errc::overlap};
      }
    }
    IoHandle h;
    h.space_ = this;
    h.id_ = next_id_++;
    h.kind_ = kind;
    h.start_ = start;
    h.len_ = len;
    live_.push_back(Live{h.id_, kind, start, len});
    return h;
  }

  Status op_ok(const IoHandle& h, std::uint64_t offset, std::uint32_t width) const {
    if (!h.live()) return Error{Errc::stale_handle};
    if (width != 1 && width != 2 && width != 4 && width != 8) {
      return Error{Errc::out_of_range, "access width"};
    }
    if (checks_.bounds && (offset >= h.len() || width > h.len() - offset)) {
      return Error{Errc::out_of_bounds};
    }
    return ok_status();
  }

  void release_handle(std::uint64_t id) {
    std::lock_guard lock(mutex_);
    for (auto it = live_.begin(); it != live_.end(); ++it) {
      if (it->id == id) {
        live_.erase(it);
        return;
      }
    }
  }

  mutable std::mutex mutex_;
  SensitivityRegistry registry_;
  std::vector<std::uint8_t> mem_;
  std::vector<std::uint8_t> ports_;
  std::vector<Live> live_;
  std::vector<Hook> hooks_;
  std::uint64_t next_id_ = 1;
  SafetyChecks checks_;
};

inline IoHandle::~IoHandle() { release(); }
inline void IoHandle::release() {
  if (space_ != nullptr) {
    space_->release_handle(id_);
    space_ = nullptr;
  }
}

// --- DMA windows -------------------------------------------------------------

enum class DmaMode { stream, coherent };
enum class DmaDir { to_device, from_device, bidirectional };

class DmaEngine;

// Device-visible window over an untyped segment. Unmapping (or dropping)
// closes the window; the device-visible addresses are never reused.
class DmaMapping {
 public:
  DmaMapping() = default;
  DmaMapping(DmaMapping&& other) noexcept { steal(other); }
  DmaMapping& operator=(DmaMapping&& other) noexcept {
    if (this != &other) {
      unmap();
      steal(other);
    }
    return *this;
  }
  DmaMapping(const DmaMapping&) = delete;
  DmaMapping& operator=(const DmaMapping&) = delete;
  inline ~DmaMapping();

  bool live() const { return engine_ != nullptr; }
  std::uint64_t dva() const { return dva_; }
  std::uint64_t len() const { return len_; }
  DmaMode mode() const { return mode_; }
  DmaDir direction() const { return dir_; }

  inline void unmap();

 private:
  friend class DmaEngine;
  DmaEngine* engine_ = nullptr;
  std::uint64_t id_ = 0;
  std::uint64_t dva_ = 0;
  std::uint64_t len_ = 0;
  DmaMode mode_ = DmaMode::stream;
  DmaDir dir_ = DmaDir::bidirectional;
  SegmentHandle backing_;

  void steal(DmaMapping& other) {
    engine_ = other.engine_;
    id_ = other.id_;
    dva_ = other.dva_;
    len_ = other.len_;
    mode_ = other.mode_;
    dir_ = other.dir_;
    backing_ = std::move(other.backing_);
    other.engine_ = nullptr;
  }
};

// The IOMMU stand-in: initially no physical memory is device-accessible;
// windows open only over untyped segments, and every device access lands
// inside a live window or is blocked and logged.
class DmaEngine {
 public:
  explicit DmaEngine(MemoryMap& map) : map_(&map) {}

  DmaEngine(const DmaEngine&) = delete;
  DmaEngine& operator=(const DmaEngine&) = delete;

  Result<DmaMapping> map(const SegmentHandle& segment, DmaMode mode, DmaDir dir) {
    if (!segment.live()) return Error{Errc::stale_handle};
    if (!segment.untyped()) return Error{Errc::typed_memory_rejected};
    auto dup = segment.duplicate();
    if (!dup.ok()) return dup.error();

    std::lock_guard lock(mutex_);
    DmaMapping m;
    m.engine_ = this;
    m.id_ = next_id_++;
    m.len_ = segment.span_bytes();
    m.dva_ = next_dva_;
    next_dva_ += (m.len_ + 0xfffull) & ~0xfffull;  // never reused
    m.mode_ = mode;
    m.dir_ = dir;
    m.backing_ = dup.take();
    windows_.push_back(Window{m.id_, m.dva_, m.len_, segment.first_frame(), dir});
    return m;
  }

  Status device_write(const std::string& dev, std::uint64_t dva,
                      std::span<const std::uint8_t> bytes) {
    std::uint64_t phys = 0;
    {
      std::lock_guard lock(mutex_);
      const Window* w = window_for(dva, bytes.size());
      if (w == nullptr || w->dir == DmaDir::to_device) {
        blocked_log_.push_back(dev + " write " + std::to_string(dva) + "+" +
                               std::to_string(bytes.size()) + " blocked");
        return Error{Errc::blocked};
      }
      phys = w->first_frame * map_->frame_size() + (dva - w->dva);
    }
    map_->raw_store_write(phys, bytes);
    return ok_status();
  }

  Result<std::vector<std::uint8_t>> device_read(const std::string& dev, std::uint64_t dva,
                                                std::uint64_t len) {
    std::uint64_t phys = 0;
    {
      std::lock_guard lock(mutex_);
      const Window* w = window_for(dva, len);
      if (w == nullptr || w->dir == DmaDir::from_device) {
        blocked_log_.push_back(dev + " read " + std::to_string(dva) + "+" +
                               std::to_string(len) + " blocked");
        return Error{Errc::blocked};
      }
      phys = w->first_frame * map_->frame_size() + (dva - w->dva);
    }
    std::vector<std::uint8_t> out(len);
    map_->raw_store_read(phys, out);
    return out;
  }

  std::uint64_t blocked_count() const {
    std::lock_guard lock(mutex_);
    return blocked_log_.size();
  }

  std::vector<std::string> blocked_log() const {
    std::lock_guard lock(mutex_);
    return blocked_log_;
  }

  // Frames currently writable by devices; the Inv-5 oracle checks these
  // stay untyped and within live mappings.
  std::set<std::uint64_t> device_writable_frames() const {
    std::lock_guard lock(mutex_);
    std::set<std::uint64_t> out;
    const std::uint64_t fs = map_->frame_size();
    for (const Window& w : windows_) {
      if (w.dir == DmaDir::to_device) continue;
      for (std::uint64_t f = 0; f * fs < w.len; ++f) out.insert(w.first_frame + f);
    }
    return out;
  }

 private:
  friend class DmaMapping;

  struct Window {
    std::uint64_t id;
    std::uint64_t dva;
    std::uint64_t len;
    std::uint64_t first_frame;
    DmaDir dir;
  };

  const Window* window_for(std::uint64_t dva, std::uint64_t len) const {
    if (len == 0 || dva + len < dva) return nullptr;
    for (const Window& w : windows_) {
      if (dva >= w.dva && dva + len <= w.dva + w.len) return &w;
    }
    return nullptr;
  }

  void close(std::uint64_t id) {
    std::lock_guard lock(mutex_);
    for (auto it = windows_.begin(); it != windows_.end(); ++it) {
      if (it->id == id) {
        windows_.erase(it);
        return;
      }
    }
  }

  MemoryMap* map_;
  mutable std::mutex mutex_;
  std::vector<Window> windows_;
  std::vector<std::string> blocked_log_;
  std::uint64_t next_dva_ = 0x1000'0000;
  std::uint64_t next_id_ = 1;
};

inline DmaMapping::~DmaMapping() { unmap(); }
inline void DmaMapping::unmap() {
  if (engine_ != nullptr) {
    engine_->close(id_);
    engine_ = nullptr;
    backing_.reset();
  }
}

// --- interrupt lines ------------------------------------------------------------

class IrqTable;

// Registered interrupt vector; dropping it frees the vector.
class IrqLine {
 public:
  IrqLine() = default;
  IrqLine(IrqLine&& other) noexcept { steal(other); }
  IrqLine& operator=(IrqLine&& other) noexcept {
    if (this != &other) {
      release();
      steal(other);
    }
    return *this;
  }
  IrqLine(const IrqLine&) = delete;
  IrqLine& operator=(const IrqLine&) = delete;
  inline ~IrqLine();

  bool live() const { return table_ != nullptr; }
  std::uint32_t vector() const { return vector_; }

  inline void release();

 private:
  friend class IrqTable;
  IrqTable* table_ = nullptr;
  std::uint32_t vector_ = 0;

  void steal(IrqLine& other) {
    table_ = other.table_;
    vector_ = other.vector_;
    other.table_ = nullptr;
  }
};

// Interrupt delivery with a device-authorization table standing in for
// remapping hardware: a raise lands only when the vector is registered and
// the device is authorized for it; everything else is dropped and logged.
class IrqTable {
 public:
  static constexpr std::uint32_t kVectors = 256;

  Result<IrqLine> register_handler(std::uint32_t vector,
                                   std::function<void(std::uint32_t)> handler) {
    std::lock_guard lock(mutex_);
    if (vector >= kVectors) return Error{Errc::out_of_range, "vector"};
    if (handlers_[vector] != nullptr) return Error{Errc::vector_busy};
    handlers_[vector] = std::move(handler);
    IrqLine line;
    line.table_ = this;
    line.vector_ = vector;
    return line;
  }

  // Privileged bootstrap: the remapping authorization table.
  void authorize_device(const std::string& dev, std::uint32_t vector) {
    std::lock_guard lock(mutex_);
    authorized_.insert({dev, vector});
  }

  bool raise(const std::string& dev, std::uint32_t vector) {
    std::function<void(std::uint32_t)> handler;
    {
      std::lock_guard lock(mutex_);
      if (vector >= kVectors || handlers_[vector] == nullptr ||
          authorized_.count({dev, vector}) == 0) {
        dropped_log_.push_back(dev + " vector " + std::to_string(vector) + " dropped");
        return false;
      }
      handler = handlers_[vector];
      delivered_[vector] += 1;
    }
    handler(vector);
    return true;
  }

  std::uint64_t delivered(std::uint32_t vector) const {
    std::lock_guard lock(mutex_);
    auto it = delivered_.find(vector);
    return it == delivered_.end() ? 0 : it->second;
  }

  std::uint64_t dropped_count() const {
    std::lock_guard lock(mutex_);
    return dropped_log_.size();
  }

  std::vector<std::string> dropped_log() const {
    std::lock_guard lock(mutex_);
    return dropped_log_;
  }

 private:
  friend class IrqLine;

  void release_vector(std::uint32_t vector) {
    std::lock_guard lock(mutex_);
    handlers_[vector] = nullptr;
  }

  mutable std::mutex mutex_;
  std::array<std::function<void(std::uint32_t)>, kVectors> handlers_{};
  std::set<std::pair<std::string, std::uint32_t>> authorized_;
  std::map<std::uint32_t, std::uint64_t> delivered_;
  std::vector<std::string> dropped_log_;
};

inline IrqLine::~IrqLine() { release(); }
inline void IrqLine::release() {
  if (table_ != nullptr) {
    table_->release_vector(vector_);
    table_ = nullptr;
  }
}

}  // namespace fk
