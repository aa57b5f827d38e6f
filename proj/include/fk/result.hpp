#pragma once

#include <cassert>
#include <string>
#include <utility>
#include <variant>

namespace fk {

enum class Errc : int {
  ok = 0,
  // memory model
  overlapping_regions,
  unaligned_region,
  out_of_bounds,
  conflict,
  // frame handles
  in_use,
  out_of_range,
  unaligned,
  misaligned,
  saturation,
  stale_handle,
  typed_frame_rejected,
  unknown_kind,
  // allocator injection
  not_registered,
  already_registered,
  too_late,
  policy_exhausted,
  policy_unsound,
  exhausted,
  // slab
  bad_geometry,
  slab_full,
  foreign_slot,
  double_free,
  misfit,
  active_slots_remain,
  oversize,
  // scheduling
  unknown_task,
  // privilege separation
  overlap,
  not_mapped,
  permission_denied,
  guard_fault,
  typed_memory_rejected,
  sensitive_range,
  not_sealed,
  sealed,
  vector_busy,
  blocked,
  // oracle / tooling
  too_large,
  parse_error,
  unknown_syscall,
  device_timeout,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::ok: return "Ok";
    case Errc::overlapping_regions: return "OverlappingRegions";
    case Errc::unaligned_region: return "UnalignedRegion";
    case Errc::out_of_bounds: return "OutOfBounds";
    case Errc::conflict: return "Conflict";
    case Errc::in_use: return "InUse";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::unaligned: return "Unaligned";
    case Errc::misaligned: return "Misaligned";
    case Errc::saturation: return "Saturation";
    case Errc::stale_handle: return "StaleHandle";
    case Errc::typed_frame_rejected: return "TypedFrameRejected";
    case Errc::unknown_kind: return "UnknownKind";
    case Errc::not_registered: return "NotRegistered";
    case Errc::already_registered: return "AlreadyRegistered";
    case Errc::too_late: return "TooLate";
    case Errc::policy_exhausted: return "PolicyExhausted";
    case Errc::policy_unsound: return "PolicyUnsound";
    case Errc::exhausted: return "Exhausted";
    case Errc::bad_geometry: return "BadGeometry";
    case Errc::slab_full: return "SlabFull";
    case Errc::foreign_slot: return "ForeignSlot";
    case Errc::double_free: return "DoubleFree";
    case Errc::misfit: return "Misfit";
    case Errc::active_slots_remain: return "ActiveSlotsRemain";
    case Errc::oversize: return "Oversize";
    case Errc::unknown_task: return "UnknownTask";
    case Errc::overlap: return "Overlap";
    case Errc::not_mapped: return "NotMapped";
    case Errc::permission_denied: return "PermissionDenied";
    case Errc::guard_fault: return "GuardFault";
    case Errc::typed_memory_rejected: return "TypedMemoryRejected";
    case Errc::sensitive_range: return "SensitiveRange";
    case Errc::not_sealed: return "NotSealed";
    case Errc::sealed: return "Sealed";
    case Errc::vector_busy: return "VectorBusy";
    case Errc::blocked: return "Blocked";
    case Errc::too_large: return "TooLarge";
    case Errc::parse_error: return "ParseError";
    case Errc::unknown_syscall: return "UnknownSyscall";
    case Errc::device_timeout: return "DeviceTimeout";
  }
  return "Unknown";
}

struct Error {
  Errc code = Errc::ok;
  std::string detail;

  Error() = default;
  explicit Error(Errc c, std::string d = {}) : code(c), detail(std::move(d)) {}

  std::string to_string() const {
    std::string s = errc_name(code);
    if (!detail.empty()) {
      s += ": ";
      s += detail;
    }
    return s;
  }
};

struct Unit {};

// Minimal expected-style result. Operations report recoverable failures
// through this; nothing in the library throws on its own.
template <class T>
class [[nodiscard]] Result {
 public:
  Result(T value) : data_(std::move(value)) {}
  Result(Error error) : data_(std::move(error)) { assert(err().code != Errc::ok); }
  Result(Errc code, std::string detail = {}) : data_(Error{code, std::move(detail)}) {
    assert(code != Errc::ok);
  }

  bool ok() const { return std::holds_alternative<T>(data_); }
  explicit operator bool() const { return ok(); }

  T& value() {
    assert(ok());
    return std::get<T>(data_);
  }
  const T& value() const {
    assert(ok());
    return std::get<T>(data_);
  }
  T take() {
    assert(ok());
    return std::move(std::get<T>(data_));
  }

  const Error& error() const {
    assert(!ok());
    return std::get<Error>(data_);
  }
  Errc errc() const { return ok() ? Errc::ok : error().code; }

 private:
  const Error& err() const { return std::get<Error>(data_); }
  std::variant<T, Error> data_;
};

using Status = Result<Unit>;

inline Status ok_status() { return Status(Unit{}); }

}  // namespace fk
