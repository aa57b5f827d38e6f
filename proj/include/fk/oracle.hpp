#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "result.hpp"
#include "trace.hpp"
#include "util.hpp"

namespace fk {

inline constexpr std::size_t kExhaustiveEventLimit = 12;

// Number of distinct merges of per-thread sequences: the multinomial
// coefficient (sum lens)! / prod(lens!).
inline std::uint64_t order_count(std::span<const std::size_t> lens) {
  std::uint64_t count = 1;
  std::uint64_t placed = 0;
  for (std::size_t len : lens) {
    for (std::size_t i = 1; i <= len; ++i) {
      count = count * (placed + i) / i;  // stays integral: running binomial
    }
    placed += len;
  }
  return count;
}

namespace detail {

template <class Fn>
void orders_dfs(std::vector<std::size_t>& remaining, std::vector<std::uint32_t>& prefix,
                std::size_t left, Fn&& visit) {
  if (left == 0) {
    visit(prefix);
    return;
  }
  for (std::uint32_t t = 0; t < remaining.size(); ++t) {
    if (remaining[t] == 0) continue;
    remaining[t] -= 1;
    prefix.push_back(t);
    orders_dfs(remaining, prefix, left - 1, visit);
    prefix.pop_back();
    remaining[t] += 1;
  }
}

}  // namespace detail

// Visits every merge order (sequence of thread indices) exactly once.
// Exhaustive mode refuses inputs beyond `limit` total events.
template <class Fn>
Status for_each_order(std::vector<std::size_t> lens, std::size_t limit, Fn&& visit) {
  std::size_t total = 0;
  for (std::size_t l : lens) total += l;
  if (total > limit) {
    return Error{Errc::too_large, "exhaustive interleaving limit is " + std::to_string(limit)};
  }
  std::vector<std::uint32_t> prefix;
  prefix.reserve(total);
  detail::orders_dfs(lens, prefix, total, visit);
  return ok_status();
}

inline Result<std::vector<std::vector<std::uint32_t>>> enumerate_orders(
    std::vector<std::size_t> lens, std::size_t limit = kExhaustiveEventLimit) {
  std::vector<std::vector<std::uint32_t>> out;
  Status st = for_each_order(std::move(lens), limit,
                             [&](const std::vector<std::uint32_t>& o) { out.push_back(o); });
  if (!st.ok()) return st.error();
  return out;
}

// Uniformly random merge order: at each step a thread is chosen with
// probability proportional to its remaining events.
inline std::vector<std::uint32_t> sample_order(std::vector<std::size_t> remaining,
                                               SplitMix64& rng) {
  std::size_t total = 0;
  for (std::size_t l : remaining) total += l;
  std::vector<std::uint32_t> order;
  order.reserve(total);
  while (total > 0) {
    std::uint64_t pick = rng.bounded(total);
    for (std::uint32_t t = 0; t < remaining.size(); ++t) {
      if (pick < remaining[t]) {
        order.push_back(t);
        remaining[t] -= 1;
        total -= 1;
        break;
      }
      pick -= remaining[t];
    }
  }
  return order;
}

inline Schedule merge_by_order(const std::vector<std::vector<TraceEvent>>& threads,
                               std::span<const std::uint32_t> order) {
  std::vector<std::size_t> pos(threads.size(), 0);
  Schedule merged;
  merged.reserve(order.size());
  for (std::uint32_t t : order) {
    merged.push_back(threads[t][pos[t]++]);
  }
  return merged;
}

// Every merge of the per-thread event orders, exactly once.
inline Result<std::vector<Schedule>> interleave_enumerate(
    const std::vector<std::vector<TraceEvent>>& threads,
    std::size_t limit = kExhaustiveEventLimit) {
  std::vector<std::size_t> lens;
  lens.reserve(threads.size());
  for (const auto& t : threads) lens.push_back(t.size());
  std::vector<Schedule> out;
  Status st = for_each_order(std::move(lens), limit, [&](const std::vector<std::uint32_t>& o) {
    out.push_back(merge_by_order(threads, o));
  });
  if (!st.ok()) return st.error();
  return out;
}

inline std::vector<Schedule> interleave_sample(const std::vector<std::vector<TraceEvent>>& threads,
                                               std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> lens;
  for (const auto& t : threads) lens.push_back(t.size());
  SplitMix64 rng(seed);
  std::vector<Schedule> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(merge_by_order(threads, sample_order(lens, rng)));
  }
  return out;
}

namespace detail {

struct Epoch {
  std::uint32_t clock = 0;
  std::size_t event_index = 0;
};

// Per-frame access history for the happens-before race check.
struct FrameHistory {
  std::map<std::uint32_t, Epoch> last_meta;        // any metadata access, per thread
  std::map<std::uint32_t, Epoch> last_plain_write; // non-CAS writes, per thread
  std::vector<std::uint32_t> sync_clock;           // released by successful CAS
  bool reported = false;
};

inline void vc_join(std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] = std::max(a[i], b[i]);
}

}  // namespace detail

// Happens-before data-race detection over one schedule. The order model is
// per-thread program order plus synchronization edges from a CAS to later
// CAS or read events on the same frame; a pair of metadata accesses on one
// frame races when it is unordered and at least one side is a non-CAS
// write. One finding is reported per frame.
inline std::vector<Violation> detect_data_race(const Schedule& schedule) {
  std::vector<Violation> out;
  std::map<std::uint32_t, std::uint32_t> tid_index;
  for (const TraceEvent& ev : schedule) {
    if (tid_index.find(ev.tid) == tid_index.end()) {
      std::uint32_t next = static_cast<std::uint32_t>(tid_index.size());
      tid_index.emplace(ev.tid, next);
    }
  }
  std::vector<std::vector<std::uint32_t>> clocks(tid_index.size());
  std::map<std::uint64_t, detail::FrameHistory> frames;

  for (std::size_t idx = 0; idx < schedule.size(); ++idx) {
    const TraceEvent& ev = schedule[idx];
    if (!ev.is_meta()) continue;
    const std::uint32_t t = tid_index[ev.tid];
    auto& vc = clocks[t];
    if (vc.size() <= t) vc.resize(t + 1, 0);
    vc[t] += 1;

    detail::FrameHistory& hist = frames[ev.a];
    if (ev.op == TraceOp::meta_read || ev.op == TraceOp::meta_cas) {
      detail::vc_join(vc, hist.sync_clock);
    }

    auto ordered_after = [&](std::uint32_t u, std::uint32_t clock) {
      return u < vc.size() && vc[u] >= clock;
    };
    auto report = [&](std::size_t prior_idx) {
      if (hist.reported) return;
      hist.reported = true;
      Violation v;
      v.kind = Violation::Kind::data_race;
      v.subject = ev.a;
      v.events = {schedule[prior_idx], ev};
      v.schedule = schedule;
      out.push_back(std::move(v));
    };

    if (ev.op == TraceOp::meta_write) {
      for (const auto& [u, epoch] : hist.last_meta) {
        if (u != t && !ordered_after(u, epoch.clock)) report(epoch.event_index);
      }
    } else {
      for (const auto& [u, epoch] : hist.last_plain_write) {
        if (u != t && !ordered_after(u, epoch.clock)) report(epoch.event_index);
      }
    }

    hist.last_meta[t] = {vc[t], idx};
    if (ev.op == TraceOp::meta_write) hist.last_plain_write[t] = {vc[t], idx};
    if (ev.op == TraceOp::meta_cas) hist.sync_clock = vc;
  }
  return out;
}

// Mutability tracking is range-granular with last-exposure-wins semantics:
// a byte write lands in violation when the most recent exposure covering
// any written byte was read-only.
inline std::vector<Violation> detect_mutability(const Schedule& schedule) {
  struct Exposure {
    std::uint64_t start, len;
    bool read_only;
  };
  std::vector<Exposure> exposures;
  std::vector<Violation> out;

  for (std::size_t idx = 0; idx < schedule.size(); ++idx) {
    const TraceEvent& ev = schedule[idx];
    if (ev.is_expose()) {
      exposures.push_back({ev.a, ev.b, ev.op == TraceOp::expose_ro});
      continue;
    }
    if (ev.op != TraceOp::byte_write || ev.b == 0) continue;

    // Resolve the written range against exposures, newest first.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> remaining{{ev.a, ev.a + ev.b}};
    bool violated = false;
    for (auto it = exposures.rbegin(); it != exposures.rend() && !remaining.empty(); ++it) {
      const std::uint64_t es = it->start;
      const std::uint64_t ee = it->start + it->len;
      std::vector<std::pair<std::uint64_t, std::uint64_t>> next;
      for (auto [s, e] : remaining) {
        std::uint64_t os = std::max(s, es);
        std::uint64_t oe = std::min(e, ee);
        if (os < oe) {
          if (it->read_only) violated = true;
          if (s < os) next.emplace_back(s, os);
          if (oe < e) next.emplace_back(oe, e);
        } else {
          next.emplace_back(s, e);
        }
      }
      remaining = std::move(next);
      if (violated) break;
    }
    if (violated) {
      Violation v;
      v.kind = Violation::Kind::mutability;
      v.subject = ev.a;
      v.events = {ev, ev};
      v.schedule = schedule;
      out.push_back(std::move(v));
    }
  }
  return out;
}

inline std::vector<Violation> detect_schedule(const Schedule& schedule) {
  std::vector<Violation> out = detect_data_race(schedule);
  std::vector<Violation> mut = detect_mutability(schedule);
  out.insert(out.end(), std::make_move_iterator(mut.begin()), std::make_move_iterator(mut.end()));
  return out;
}

struct OracleReport {
  std::vector<Violation> violations;  // deduplicated, each with a witness
  std::uint64_t schedules_analyzed = 0;
  bool exhaustive = false;
};

namespace detail {

inline void merge_findings(std::vector<Violation>& into, std::vector<Violation>&& found) {
  for (Violation& v : found) {
    bool dup = false;
    for (const Violation& have : into) {
      if (have.kind == v.kind && have.subject == v.subject) {
        dup = true;
        break;
      }
    }
    if (!dup) into.push_back(std::move(v));
  }
}

}  // namespace detail

// Runs the detectors over every interleaving of the per-thread event lists,
// deduplicating findings by (kind, subject). Each kept finding carries the
// first witnessing schedule.
inline Result<OracleReport> analyze_exhaustive(const std::vector<std::vector<TraceEvent>>& threads,
                                               std::size_t limit = kExhaustiveEventLimit) {
  std::vector<std::size_t> lens;
  for (const auto& t : threads) lens.push_back(t.size());
  OracleReport report;
  report.exhaustive = true;
  Status st = for_each_order(std::move(lens), limit, [&](const std::vector<std::uint32_t>& o) {
    Schedule s = merge_by_order(threads, o);
    detail::merge_findings(report.violations, detect_schedule(s));
    report.schedules_analyzed += 1;
  });
  if (!st.ok()) return st.error();
  return report;
}

inline OracleReport analyze_sampled(const std::vector<std::vector<TraceEvent>>& threads,
                                    std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> lens;
  for (const auto& t : threads) lens.push_back(t.size());
  SplitMix64 rng(seed);
  OracleReport report;
  for (std::size_t i = 0; i < count; ++i) {
    Schedule s = merge_by_order(threads, sample_order(lens, rng));
    detail::merge_findings(report.violations, detect_schedule(s));
    report.schedules_analyzed += 1;
  }
  return report;
}

inline OracleReport analyze_schedule(const Schedule& schedule) {
  OracleReport report;
  report.schedules_analyzed = 1;
  detail::merge_findings(report.violations, detect_schedule(schedule));
  return report;
}

// --- trace text format -----------------------------------------------------
// One event per line: `tid op args`, where meta ops take a frame index and
// byte/expose ops take `start len`. `#` starts a comment.

inline Result<std::vector<std::vector<TraceEvent>>> parse_trace_text(std::string_view text) {
  std::map<std::uint32_t, std::vector<TraceEvent>> by_tid;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::uint32_t tid;
    std::string op;
    if (!(ls >> tid)) continue;  // blank line
    auto fail = [&](const char* why) {
      return Error{Errc::parse_error,
                   "line " + std::to_string(line_no) + ": " + why};
    };
    if (!(ls >> op)) return fail("missing op");
    TraceEvent ev;
    ev.tid = tid;
    if (op == "meta_read") ev.op = TraceOp::meta_read;
    else if (op == "meta_write") ev.op = TraceOp::meta_write;
    else if (op == "meta_cas") ev.op = TraceOp::meta_cas;
    else if (op == "byte_read") ev.op = TraceOp::byte_read;
    else if (op == "byte_write") ev.op = TraceOp::byte_write;
    else if (op == "expose_ro") ev.op = TraceOp::expose_ro;
    else if (op == "expose_mut") ev.op = TraceOp::expose_mut;
    else return fail("unknown op");
    if (!(ls >> ev.a)) return fail("missing argument");
    if (!ev.is_meta() && !(ls >> ev.b)) return fail("missing length");
    std::string rest;
    if (ls >> rest) return fail("trailing tokens");
    by_tid[tid].push_back(ev);
  }
  std::vector<std::vector<TraceEvent>> threads;
  threads.reserve(by_tid.size());
  for (auto& [tid, events] : by_tid) threads.push_back(std::move(events));
  return threads;
}

inline std::string format_trace_event(const TraceEvent& ev) {
  std::string s = std::to_string(ev.tid);
  s += ' ';
  s += trace_op_name(ev.op);
  s += ' ';
  s += std::to_string(ev.a);
  if (!ev.is_meta()) {
    s += ' ';
    s += std::to_string(ev.b);
  }
  return s;
}

inline std::string format_violation(const Violation& v) {
  std::string s = v.kind_name();
  s += " subject=";
  s += std::to_string(v.subject);
  s += " pair=[";
  s += format_trace_event(v.events[0]);
  s += " | ";
  s += format_trace_event(v.events[1]);
  s += "]";
  return s;
}

}  // namespace fk
