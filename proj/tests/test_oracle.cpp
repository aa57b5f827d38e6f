#include <catch2/catch_amalgamated.hpp>

#include <set>

#include <fk/frame.hpp>
#include <fk/oracle.hpp>

using namespace fk;

namespace {

TraceEvent ev(std::uint32_t tid, TraceOp op, std::uint64_t a, std::uint64_t b = 0) {
  return TraceEvent{tid, op, a, b};
}

// The two-sided unsynchronized metadata update: a drop's read+write racing
// a claim's read+write on one frame.
std::vector<std::vector<TraceEvent>> unsync_meta_threads() {
  return {
      {ev(0, TraceOp::meta_read, 5), ev(0, TraceOp::meta_write, 5)},
      {ev(1, TraceOp::meta_read, 5), ev(1, TraceOp::meta_write, 5)},
  };
}

std::vector<std::vector<TraceEvent>> cas_meta_threads() {
  return {
      {ev(0, TraceOp::meta_cas, 5)},
      {ev(1, TraceOp::meta_cas, 5)},
  };
}

}  // namespace

TEST_CASE("interleaving counts follow the multinomial formula", "[oracle]") {
  CHECK(order_count(std::vector<std::size_t>{2, 2}) == 6);
  CHECK(order_count(std::vector<std::size_t>{3, 3}) == 20);
  CHECK(order_count(std::vector<std::size_t>{2, 2, 2}) == 90);

  auto o22 = enumerate_orders({2, 2});
  REQUIRE(o22.ok());
  CHECK(o22.value().size() == 6);

  auto o33 = enumerate_orders({3, 3});
  REQUIRE(o33.ok());
  CHECK(o33.value().size() == 20);

  auto o222 = enumerate_orders({2, 2, 2});
  REQUIRE(o222.ok());
  CHECK(o222.value().size() == 90);

  // Every merge appears exactly once.
  std::set<std::vector<std::uint32_t>> distinct(o222.value().begin(), o222.value().end());
  CHECK(distinct.size() == 90);
}

TEST_CASE("exhaustive mode refuses oversized inputs", "[oracle]") {
  auto too_big = enumerate_orders({7, 6});
  REQUIRE(too_big.errc() == Errc::too_large);

  auto at_limit = enumerate_orders({6, 6});
  REQUIRE(at_limit.ok());
  CHECK(at_limit.value().size() == order_count(std::vector<std::size_t>{6, 6}));
}

TEST_CASE("sampled orders are deterministic and well formed", "[oracle]") {
  SplitMix64 a(42), b(42);
  auto o1 = sample_order({5, 5, 5}, a);
  auto o2 = sample_order({5, 5, 5}, b);
  REQUIRE(o1 == o2);
  std::array<int, 3> seen{};
  for (auto t : o1) seen[t] += 1;
  CHECK(seen == std::array<int, 3>{5, 5, 5});
}

TEST_CASE("unsynchronized metadata updates race in every interleaving", "[oracle]") {
  auto report = analyze_exhaustive(unsync_meta_threads());
  REQUIRE(report.ok());
  CHECK(report.value().schedules_analyzed == 6);
  REQUIRE(report.value().violations.size() == 1);
  const Violation& v = report.value().violations.front();
  CHECK(v.kind == Violation::Kind::data_race);
  CHECK(v.subject == 5);

  // Each individual schedule already exhibits the race.
  auto schedules = interleave_enumerate(unsync_meta_threads());
  REQUIRE(schedules.ok());
  for (const Schedule& s : schedules.value()) {
    CHECK(detect_data_race(s).size() == 1);
  }
}

TEST_CASE("CAS-fixed metadata updates are race-free in every interleaving", "[oracle]") {
  auto report = analyze_exhaustive(cas_meta_threads());
  REQUIRE(report.ok());
  CHECK(report.value().schedules_analyzed == 2);
  CHECK(report.value().violations.empty());
}

TEST_CASE("single-threaded traces never race", "[oracle]") {
  Schedule s = {ev(0, TraceOp::meta_read, 1), ev(0, TraceOp::meta_write, 1),
                ev(0, TraceOp::meta_read, 1), ev(0, TraceOp::meta_write, 1)};
  CHECK(detect_data_race(s).empty());
}

TEST_CASE("CAS edges order later reads on the same frame", "[oracle]") {
  // Claim via CAS on thread 0, then a plain read on thread 1: ordered, no
  // race. A plain write on thread 1 would not be ordered.
  Schedule ordered = {ev(0, TraceOp::meta_cas, 3), ev(1, TraceOp::meta_read, 3)};
  CHECK(detect_data_race(ordered).empty());

  Schedule unordered = {ev(0, TraceOp::meta_write, 3), ev(1, TraceOp::meta_read, 3)};
  CHECK(detect_data_race(unordered).size() == 1);
}

TEST_CASE("read-only exposure turns writes into mutability violations", "[oracle]") {
  Schedule flawed = {ev(0, TraceOp::expose_ro, 4096, 64), ev(0, TraceOp::byte_write, 4096, 8)};
  auto v = detect_mutability(flawed);
  REQUIRE(v.size() == 1);
  CHECK(v.front().kind == Violation::Kind::mutability);
  CHECK(v.front().subject == 4096);

  Schedule clean = {ev(0, TraceOp::expose_mut, 4096, 64), ev(0, TraceOp::byte_write, 4096, 8)};
  CHECK(detect_mutability(clean).empty());
}

TEST_CASE("re-exposure flips mutability back: exactly one violation", "[oracle]") {
  Schedule s = {
      ev(0, TraceOp::expose_ro, 0, 64),
      ev(0, TraceOp::byte_write, 0, 8),   // violation
      ev(0, TraceOp::expose_mut, 0, 64),
      ev(0, TraceOp::byte_write, 0, 8),   // clean
  };
  auto v = detect_mutability(s);
  REQUIRE(v.size() == 1);
  CHECK(v.front().events[0].b == 8);
}

TEST_CASE("mutability is range-granular with last exposure winning", "[oracle]") {
  Schedule partial = {
      ev(0, TraceOp::expose_ro, 0, 16),
      ev(0, TraceOp::byte_write, 8, 16),  // overlaps the read-only range
  };
  CHECK(detect_mutability(partial).size() == 1);

  Schedule beside = {
      ev(0, TraceOp::expose_ro, 0, 16),
      ev(0, TraceOp::byte_write, 16, 8),  // entirely past it
  };
  CHECK(detect_mutability(beside).empty());

  Schedule relabel = {
      ev(0, TraceOp::expose_ro, 0, 64),
      ev(0, TraceOp::expose_mut, 0, 32),
      ev(0, TraceOp::byte_write, 0, 32),   // most recent exposure is mutable
      ev(0, TraceOp::byte_write, 32, 32),  // still read-only
  };
  auto v = detect_mutability(relabel);
  REQUIRE(v.size() == 1);
  CHECK(v.front().events[0].a == 32);
}

TEST_CASE("violations replay identically from their witness schedule", "[oracle]") {
  auto report = analyze_exhaustive(unsync_meta_threads());
  REQUIRE(report.ok());
  const Violation& v = report.value().violations.front();
  auto replay = detect_data_race(v.schedule);
  REQUIRE(replay.size() == 1);
  CHECK(replay.front().kind == v.kind);
  CHECK(replay.front().subject == v.subject);
  CHECK(replay.front().events[0] == v.events[0]);
  CHECK(replay.front().events[1] == v.events[1]);
}

TEST_CASE("trace text parses by thread and reports malformed lines", "[oracle]") {
  const char* text =
      "# drop racing a claim\n"
      "0 meta_read 5\n"
      "0 meta_write 5\n"
      "1 meta_read 5\n"
      "1 meta_write 5\n"
      "\n"
      "2 byte_write 4096 8\n";
  auto threads = parse_trace_text(text);
  REQUIRE(threads.ok());
  REQUIRE(threads.value().size() == 3);
  CHECK(threads.value()[0].size() == 2);
  CHECK(threads.value()[2].front().b == 8);

  auto bad = parse_trace_text("0 shove 3\n");
  REQUIRE(bad.errc() == Errc::parse_error);
  CHECK(bad.error().detail.find("line 1") != std::string::npos);

  auto missing = parse_trace_text("0 byte_write 4096\n");
  REQUIRE(missing.errc() == Errc::parse_error);
}

TEST_CASE("sampled analysis still finds the unsynchronized race", "[oracle]") {
  auto report = analyze_sampled(unsync_meta_threads(), 50, 9);
  CHECK(report.schedules_analyzed == 50);
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations.front().kind == Violation::Kind::data_race);
}

TEST_CASE("fault-injected claims reproduce the unsynchronized race live", "[oracle]") {
  // With atomic metadata updates disabled, claim and release degrade to
  // read-check-write pairs. Two actors racing on one frame then emit the
  // exact event shape the detector flags.
  MemConfig cfg;
  cfg.frame_count = 4;
  cfg.usable = {Region{PhysAddr{0}, 4 * 4096}};
  cfg.checks.atomic_metadata = false;
  auto map = mem_init(std::move(cfg)).take();
  auto kind = map->register_meta_kind("anon", 0, true).value();

  auto h = FrameHandle::from_unused(*map, PhysAddr{0}, kind).take();
  TraceRecorder recorder;
  map->attach_sink(&recorder);
  {
    TraceTidScope tid(0);
    h.reset();  // release: MetaRead + MetaWrite
  }
  {
    TraceTidScope tid(1);
    auto h2 = FrameHandle::from_unused(*map, PhysAddr{0}, kind).take();  // claim: same pair
  }
  map->detach_sink();

  auto schedule = recorder.schedule();
  REQUIRE(schedule.size() == 6);  // claim's pair + release's pair for tid 1 teardown
  auto violations = detect_data_race(schedule);
  REQUIRE(violations.size() == 1);
  CHECK(violations.front().kind == Violation::Kind::data_race);
  CHECK(violations.front().subject == 0);

  // The CAS-backed configuration of the same sequence is clean.
  MemConfig fixed_cfg;
  fixed_cfg.frame_count = 4;
  fixed_cfg.usable = {Region{PhysAddr{0}, 4 * 4096}};
  auto fixed_map = mem_init(std::move(fixed_cfg)).take();
  auto fixed_kind = fixed_map->register_meta_kind("anon", 0, true).value();
  auto fh = FrameHandle::from_unused(*fixed_map, PhysAddr{0}, fixed_kind).take();
  TraceRecorder fixed_rec;
  fixed_map->attach_sink(&fixed_rec);
  {
    TraceTidScope tid(0);
    fh.reset();
  }
  {
    TraceTidScope tid(1);
    auto h2 = FrameHandle::from_unused(*fixed_map, PhysAddr{0}, fixed_kind).take();
  }
  fixed_map->detach_sink();
  CHECK(detect_data_race(fixed_rec.schedule()).empty());
}

TEST_CASE("a detached sink records nothing", "[oracle]") {
  auto map = mem_init(4096, 4, {Region{PhysAddr{0}, 4 * 4096}}).take();
  auto kind = map->register_meta_kind("anon", 0, true).value();
  TraceRecorder recorder;
  map->attach_sink(&recorder);
  map->detach_sink();
  auto h = FrameHandle::from_unused(*map, PhysAddr{0}, kind).take();
  REQUIRE(h.write_bytes(0, std::vector<std::uint8_t>{1, 2}).ok());
  CHECK(recorder.schedule().empty());
}
