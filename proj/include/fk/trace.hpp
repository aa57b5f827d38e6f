#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace fk {

// One observable step of the memory subsystem. Meta events name a frame
// index; byte events and exposures name an absolute store byte range.
enum class TraceOp : std::uint8_t {
  meta_read,
  meta_write,
  meta_cas,
  byte_read,
  byte_write,
  expose_ro,
  expose_mut,
};

inline const char* trace_op_name(TraceOp op) {
  switch (op) {
    case TraceOp::meta_read: return "meta_read";
    case TraceOp::meta_write: return "meta_write";
    case TraceOp::meta_cas: return "meta_cas";
    case TraceOp::byte_read: return "byte_read";
    case TraceOp::byte_write: return "byte_write";
    case TraceOp::expose_ro: return "expose_ro";
    case TraceOp::expose_mut: return "expose_mut";
  }
  return "?";
}

struct TraceEvent {
  std::uint32_t tid = 0;
  TraceOp op = TraceOp::meta_read;
  std::uint64_t a = 0;  // frame index for meta ops, range start for byte ops
  std::uint64_t b = 0;  // unused for meta ops, range length for byte ops

  bool is_meta() const {
    return op == TraceOp::meta_read || op == TraceOp::meta_write || op == TraceOp::meta_cas;
  }
  bool is_byte() const { return op == TraceOp::byte_read || op == TraceOp::byte_write; }
  bool is_expose() const { return op == TraceOp::expose_ro || op == TraceOp::expose_mut; }

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

using Schedule = std::vector<TraceEvent>;

struct Violation {
  enum class Kind { data_race, mutability, use_after_release };

  Kind kind = Kind::data_race;
  // The conflicting pair; for single-event findings both entries hold the
  // offending event.
  std::array<TraceEvent, 2> events{};
  // Frame index (data races, use-after-release) or range start (mutability).
  std::uint64_t subject = 0;
  // Replayable witness: the full schedule the finding was produced from.
  Schedule schedule;

  const char* kind_name() const {
    switch (kind) {
      case Kind::data_race: return "DataRace";
      case Kind::mutability: return "MutabilityViolation";
      case Kind::use_after_release: return "UseAfterRelease";
    }
    return "?";
  }
};

// Instrumentation hook. When attached to a MemoryMap, every metadata and
// byte operation emits exactly one event (two in the unsynchronized
// fault-injection mode, which is the point of that mode). Findings raised
// directly by live checks (stale handles) arrive through flag().
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void emit(const TraceEvent& ev) = 0;
  virtual void flag(const Violation&) {}
};

// Per-thread logical id stamped on emitted events. Harnesses and the
// scheduling engine set this around the work they drive.
inline std::uint32_t& trace_tid() {
  thread_local std::uint32_t tid = 0;
  return tid;
}

class TraceTidScope {
 public:
  explicit TraceTidScope(std::uint32_t tid) : prev_(trace_tid()) { trace_tid() = tid; }
  ~TraceTidScope() { trace_tid() = prev_; }

 private:
  std::uint32_t prev_;
};

class TraceRecorder : public TraceSink {
 public:
  void emit(const TraceEvent& ev) override {
    std::lock_guard lock(mutex_);
    events_.push_back(ev);
  }

  void flag(const Violation& v) override {
    std::lock_guard lock(mutex_);
    flagged_.push_back(v);
  }

  Schedule schedule() const {
    std::lock_guard lock(mutex_);
    return events_;
  }

  std::vector<Violation> flagged() const {
    std::lock_guard lock(mutex_);
    return flagged_;
  }

  void clear() {
    std::lock_guard lock(mutex_);
    events_.clear();
    flagged_.clear();
  }

 private:
  mutable std::mutex mutex_;
  Schedule events_;
  std::vector<Violation> flagged_;
};

}  // namespace fk
