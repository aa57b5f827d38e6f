// Acceptance suite: every release criterion as one pass/fail line, with
// thresholds pinned in code. Exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include <fk/bench.hpp>
#include <fk/oracle.hpp>
#include <fk/scenario.hpp>
#include <fk/services/global_heap.hpp>
#include <fk/slab.hpp>
#include <fk/tcb_scan.hpp>

#include "../support/oracles.hpp"

using namespace fk;

namespace {

int g_failures = 0;

struct Criterion {
  std::string name;
  double budget_s;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;

  Criterion(std::string n, double budget) : name(std::move(n)), budget_s(budget) {}

  void require(bool cond, const std::string& why) {
    if (!cond && ok) {
      ok = false;
      detail = why;
    }
  }

  void finish() {
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                         .count();
    if (elapsed > budget_s) {
      ok = false;
      if (detail.empty()) detail = "over time budget";
    }
    std::printf("[%s] %s (%.1fs of %.0fs budget)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                elapsed, budget_s, detail.empty() ? "" : ": ", detail.c_str());
    if (!ok) ++g_failures;
  }
};

#define REQUIRE_BAIL(c, cond, why) \
  do {                             \
    if (!(cond)) {                 \
      (c).require(false, (why));   \
      (c).finish();                \
      return;                      \
    }                              \
  } while (0)

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path scenario_dir() {
  return std::filesystem::path(FK_SOURCE_DIR) / "scenarios";
}

// --- Criterion 1: safety-overhead reproduction ------------------------------

void check_safety_overhead() {
  Criterion c("safety-overhead ratios", 120);
  BenchOptions opt;
  opt.iterations = 100000;
  auto rows = run_bench(opt);
  std::cout << bench_table(rows);

  auto ratio_of = [&](const std::string& name) -> double {
    for (const auto& r : rows) {
      if (r.name == name) return r.ratio();
    }
    return 1.0;
  };
  struct Gate {
    const char* row;
    double limit;
  };
  const Gate gates[] = {
      {"uframe_read_4k", 0.10},  {"uframe_write_4k", 0.10}, {"task_yield", 0.05},
      {"alloc_frames_1", 0.15},  {"heap_object_48", 0.05},
  };
  for (const Gate& g : gates) {
    double r = ratio_of(g.row);
    std::ostringstream why;
    why << g.row << " ratio " << r << " exceeds " << g.limit;
    c.require(r <= g.limit, why.str());
  }
  // Sanity: disabling a check never makes the operation slower beyond noise.
  for (const auto& r : rows) {
    c.require(r.ratio() >= -0.15, r.name + " unchecked slower than checked beyond noise");
  }
  c.finish();
}

// --- Criterion 2: unused-origin oracle equivalence ---------------------------

void check_inv41_equivalence() {
  Criterion c("frame-claim oracle equivalence (10k ops)", 10);
  auto map = mem_init(4096, 64, {Region{PhysAddr{0}, 64 * 4096}}).take();
  auto kind = map->register_meta_kind("anon", 0, true).value();
  fkt::ShadowFrames shadow(4096, 64, {Region{PhysAddr{0}, 64 * 4096}});

  std::vector<FrameHandle> live;
  std::vector<std::uint64_t> live_frames;
  SplitMix64 rng(20260810);

  for (int i = 0; i < 10000; ++i) {
    std::uint64_t roll = rng.bounded(3);
    if (roll == 0 || live.empty()) {
      std::uint64_t frame = rng.bounded(64);
      auto h = FrameHandle::from_unused(*map, PhysAddr{frame * 4096}, kind);
      bool expect = shadow.claim_would_succeed(frame * 4096, 1);
      REQUIRE_BAIL(c, h.ok() == expect, "claim acceptance diverged at op " + std::to_string(i));
      if (h.ok()) {
        shadow.claim(frame * 4096, 1, kind);
        live.push_back(h.take());
        live_frames.push_back(frame);
      }
    } else if (roll == 1) {
      std::size_t pick = rng.bounded(live.size());
      auto dup = live[pick].duplicate();
      REQUIRE_BAIL(c, dup.ok(), "duplicate failed unexpectedly");
      shadow.dup(live_frames[pick], 1);
      live.push_back(dup.take());
      live_frames.push_back(live_frames[pick]);
    } else {
      std::size_t pick = rng.bounded(live.size());
      shadow.drop(live_frames[pick], 1);
      live[pick].reset();
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(pick));
      live_frames.erase(live_frames.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    if (i % 512 == 0) {
      REQUIRE_BAIL(c, shadow.matches(*map), "ref_count census diverged at op " + std::to_string(i));
    }
  }
  c.require(shadow.matches(*map), "final ref_count census diverged");

  std::set<std::uint64_t> impl_unused;
  for (std::uint64_t f = 0; f < 64; ++f) {
    if (map->peek_meta(f).state.is_unused()) impl_unused.insert(f);
  }
  c.require(impl_unused == shadow.unused_set(), "unused set diverged");
  c.finish();
}

// --- Criterion 3: scheduler single-run invariant ------------------------------

void check_scheduler_single_run() {
  Criterion c("scheduler single-run invariant", 60);

  // Exhaustive: 2 CPUs x 2 tasks, 10 events, every merge order.
  std::uint64_t orders = 0;
  auto st = for_each_order({5, 5}, 10, [&](const std::vector<std::uint32_t>& order) {
    SchedSim sim(SchedConfig{2, false, {}});
    Status reg = sim.register_scheduler(std::make_shared<services::RoundRobinScheduler>(2));
    c.require(reg.ok(), "register");
    c.require(sim.spawn({op_run(1000)}).ok(), "spawn");
    c.require(sim.spawn({op_run(1000)}).ok(), "spawn");
    for (std::uint32_t cpu : order) {
      sim.step(cpu);
      if (!sim.consistent()) c.require(false, "double-run state in exhaustive interleaving");
    }
    c.require(sim.guard_reports().empty(), "guard report under well-behaved policy");
    ++orders;
  });
  c.require(st.ok() && orders == 252, "expected 252 interleavings");

  // Randomized: 10k schedules over 4 CPUs x 8 tasks.
  SplitMix64 rng(77);
  for (int round = 0; round < 10000; ++round) {
    SchedSim sim(SchedConfig{4, false, {}});
    Status reg = sim.register_scheduler(std::make_shared<services::RoundRobinScheduler>(4));
    c.require(reg.ok(), "register");
    std::vector<TaskId> ids;
    for (int i = 0; i < 8; ++i) {
      ids.push_back(
          sim.spawn({op_run(2), op_yield(), op_run(1), op_sleep(), op_run(1), op_exit()})
              .value());
    }
    for (int e = 0; e < 32; ++e) {
      if (rng.bounded(8) == 0) {
        TaskId pick = ids[rng.bounded(ids.size())];
        if (!sim.runnable(pick) && !sim.exited(pick)) {
          Status w = sim.wake(pick);
          c.require(w.ok(), "wake");
        }
      } else {
        sim.step(static_cast<std::uint32_t>(rng.bounded(4)));
      }
      if (!sim.consistent()) {
        c.require(false, "double-run state in randomized schedule " + std::to_string(round));
        round = 10000;
        break;
      }
    }
  }

  // Adversarial: the shipped double-booking policy trips the guard, state
  // stays consistent.
  SchedSim sim(SchedConfig{2, false, {}});
  Status reg = sim.register_scheduler(std::make_shared<services::DoubleBookScheduler>(2));
  c.require(reg.ok(), "register");
  c.require(sim.spawn({op_run(1000)}).ok(), "spawn");
  c.require(sim.spawn({op_run(1000)}).ok(), "spawn");
  sim.schedule(0);
  sim.schedule(1);
  c.require(!sim.guard_reports().empty(), "adversarial policy produced no guard report");
  c.require(sim.consistent(), "state inconsistent after refused switch");
  c.finish();
}

// --- Criterion 4: slab lifetime and fit invariants ----------------------------

void check_slab_invariants() {
  Criterion c("slab lifetime faults and fit predicate", 10);
  MemConfig cfg;
  cfg.frame_count = 256;
  cfg.usable = {Region{PhysAddr{0}, 256 * 4096}};
  auto map = mem_init(std::move(cfg)).take();
  FrameAllocSlot slot(*map);
  Status reg = slot.register_allocator(std::make_shared<services::BuddyAllocator>(4096));
  c.require(reg.ok(), "register");

  // 500 constructed violations: drop with active slots faults every time,
  // and drop after cleanup never does.
  SplitMix64 rng(9);
  int faults = 0;
  for (int i = 0; i < 500; ++i) {
    auto slab = Slab::create(slot, 64, 64).take();
    std::uint64_t active = 1 + rng.bounded(64);
    std::vector<HeapSlot> held;
    for (std::uint64_t k = 0; k < active; ++k) held.push_back(slab.alloc().take());
    if (slab.drop().errc() == Errc::active_slots_remain) ++faults;
    for (auto& s : held) {
      Status d = slab.dealloc(std::move(s));
      c.require(d.ok(), "dealloc");
    }
    Status fin = slab.drop();
    c.require(fin.ok(), "drop faulted with zero active slots");
  }
  c.require(faults == 500, "only " + std::to_string(faults) + "/500 active drops faulted");

  // Exhaustive (size, alignment) grid against the fit predicate.
  auto slab = Slab::create(slot, 64, 64).take();
  for (std::uint64_t size = 1; size <= 128; ++size) {
    for (std::uint64_t align : {1, 2, 4, 8, 16, 64}) {
      auto hs = slab.alloc().take();
      bool predicate = fits(TypeTag{size, align}, hs.addr(), hs.size());
      auto obj = heapslot_into_object(slab, std::move(hs), TypeTag{size, align});
      if (obj.ok() != predicate) {
        c.require(false, "fit acceptance diverged at size " + std::to_string(size) + " align " +
                             std::to_string(align));
      }
      if (obj.ok()) obj.value().release();
    }
  }
  c.require(slab.active() == 0, "grid leaked active slots");
  Status fin = slab.drop();
  c.require(fin.ok(), "final drop");
  c.finish();
}

// --- Criterion 5: privilege separation ----------------------------------------

void check_privilege_separation() {
  Criterion c("privilege separation negative suite", 30);
  MemConfig cfg;
  cfg.frame_count = 64;
  cfg.usable = {Region{PhysAddr{0}, 64 * 4096}};
  auto map = mem_init(std::move(cfg)).take();
  FrameAllocSlot slot(*map);
  Status reg = slot.register_allocator(std::make_shared<services::BuddyAllocator>(4096));
  c.require(reg.ok(), "register");
  auto anon = map->register_meta_kind("anon", 0, true).value();

  // Typed frame into a user mapping: rejected.
  VmSpace space(*map);
  auto typed = FrameHandle::from_unused(*map, PhysAddr{40 * 4096}, kKindPageTable).take();
  c.require(space.map_frame(0x1000, typed, kPermR | kPermW).errc() == Errc::typed_frame_rejected,
            "typed frame mapped into user space");

  // Typed memory under DMA: rejected.
  DmaEngine dma(*map);
  auto typed_seg = SegmentHandle::from_unused(*map, PhysAddr{41 * 4096}, 1, kKindSlab).take();
  c.require(dma.map(typed_seg, DmaMode::stream, DmaDir::bidirectional).errc() ==
                Errc::typed_memory_rejected,
            "typed memory DMA-mapped");

  // Sensitive and unlabeled I/O ranges: closed.
  IoSpace io;
  Status l1 = io.io_label(IoKind::mem, 0x100, 0x40, Sensitivity::insensitive);
  Status l2 = io.io_label(IoKind::mem, 0x200, 0x40, Sensitivity::sensitive);
  Status sl = io.seal_labels();
  c.require(l1.ok() && l2.ok() && sl.ok(), "labeling");
  c.require(io.acquire_mem(0x200, 8).errc() == Errc::sensitive_range, "sensitive range acquired");
  c.require(io.acquire_mem(0x800, 8).errc() == Errc::sensitive_range, "unlabeled range acquired");

  // Unauthorized interrupt raises: dropped.
  IrqTable irq;
  int fired = 0;
  auto line = irq.register_handler(9, [&](std::uint32_t) { ++fired; }).take();
  irq.authorize_device("good", 9);
  c.require(irq.raise("good", 9), "authorized raise dropped");
  c.require(!irq.raise("rogue", 9), "unauthorized raise delivered");
  c.require(fired == 1, "handler count wrong");

  // Guard pages: fault without mutation.
  auto stack = KernelStack::create(slot, 2).take();
  c.require(stack.access(-1).errc() == Errc::guard_fault, "guard access not faulting");

  // 10k fuzzed device writes: every mutated byte lies inside the one live
  // window (store-diff oracle); the guard region never changes.
  auto seg = SegmentHandle::from_unused(*map, PhysAddr{48 * 4096}, 2, anon).take();
  auto mapping = dma.map(seg, DmaMode::stream, DmaDir::bidirectional).take();
  auto before = std::vector<std::uint8_t>(map->raw_store_view().begin(),
                                          map->raw_store_view().end());
  SplitMix64 rng(646464);
  for (int i = 0; i < 10000; ++i) {
    std::vector<std::uint8_t> junk(1 + rng.bounded(128));
    for (auto& b : junk) b = static_cast<std::uint8_t>(rng.next());
    std::uint64_t dva = mapping.dva() + rng.bounded(4 * 8192) - 2 * 8192;
    Status w = dma.device_write("fuzzer", dva, junk);
    (void)w;
  }
  auto now = map->raw_store_view();
  for (std::uint64_t i = 0; i < now.size(); ++i) {
    if (now[i] != before[i]) {
      std::uint64_t frame = i / 4096;
      if (frame < 48 || frame >= 50) {
        c.require(false, "device write escaped to frame " + std::to_string(frame));
        break;
      }
    }
  }
  std::uint64_t gbase = stack.guard_base().value;
  for (std::uint64_t i = 0; i < stack.guard_bytes(); ++i) {
    if (now[gbase + i] != before[gbase + i]) {
      c.require(false, "guard byte mutated");
      break;
    }
  }
  c.finish();
}

// --- Criterion 6: trace-oracle case studies ------------------------------------

void check_ub_case_studies() {
  Criterion c("trace oracle case studies", 5);

  auto flawed = parse_trace_text(slurp(scenario_dir() / "race_unsync_meta.fkt"));
  REQUIRE_BAIL(c, flawed.ok(), "flawed trace unreadable");
  auto flawed_report = analyze_exhaustive(flawed.value());
  REQUIRE_BAIL(c, flawed_report.ok(), "flawed analysis failed");
  bool has_race = false;
  for (const auto& v : flawed_report.value().violations) {
    has_race |= v.kind == Violation::Kind::data_race;
  }
  c.require(has_race, "unsynchronized metadata trace produced no data race");

  auto fixed = parse_trace_text(slurp(scenario_dir() / "race_cas_meta.fkt"));
  REQUIRE_BAIL(c, fixed.ok(), "fixed trace unreadable");
  auto fixed_report = analyze_exhaustive(fixed.value());
  c.require(fixed_report.ok() && fixed_report.value().violations.empty(),
            "CAS-fixed trace still races");

  auto ro = parse_trace_text(slurp(scenario_dir() / "heap_readonly_expose.fkt"));
  REQUIRE_BAIL(c, ro.ok(), "read-only trace unreadable");
  auto ro_report = analyze_exhaustive(ro.value());
  REQUIRE_BAIL(c, ro_report.ok(), "read-only analysis failed");
  std::size_t muts = 0;
  for (const auto& v : ro_report.value().violations) {
    muts += v.kind == Violation::Kind::mutability ? 1 : 0;
  }
  c.require(muts == 1, "expected exactly 1 mutability violation, got " + std::to_string(muts));

  auto mut = parse_trace_text(slurp(scenario_dir() / "heap_mutable_expose.fkt"));
  REQUIRE_BAIL(c, mut.ok(), "mutable trace unreadable");
  auto mut_report = analyze_exhaustive(mut.value());
  c.require(mut_report.ok() && mut_report.value().violations.empty(),
            "mutable-exposure variant flagged");
  c.finish();
}

// --- Criterion 7: end-to-end clean run -----------------------------------------

void check_end_to_end() {
  Criterion c("end-to-end clean run under oracle attachment", 60);
  for (const char* name : {"census_100ops.fks", "demo_echo.fks", "demo_syscalls.fks",
                           "demo_sched.fks", "demo_privsep.fks"}) {
    auto sc = Scenario::parse(slurp(scenario_dir() / name));
    REQUIRE_BAIL(c, sc.ok(), std::string(name) + " unparseable");
    OracleReport report;
    auto res = sc.value().run(42, true, &report);
    c.require(res.exit_code() == 0, std::string(name) + " failed its expectations");
    c.require(report.violations.empty(),
              std::string(name) + " produced " + std::to_string(report.violations.size()) +
                  " oracle violations");
  }

  auto scan = tcb_scan(std::filesystem::path(FK_SOURCE_DIR) / "include" / "fk");
  REQUIRE_BAIL(c, scan.ok(), "scan failed");
  c.require(scan.value().findings.empty(),
            "forbidden privileged calls in services: " +
                std::to_string(scan.value().findings.size()));
  std::printf("  tcb scan: privileged %zu / total %zu lines (ratio %.2f), findings %zu\n",
              scan.value().privileged_lines(),
              scan.value().privileged_lines() + scan.value().service_lines(),
              scan.value().privileged_ratio(), scan.value().findings.size());
  c.finish();
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");
  check_safety_overhead();
  check_inv41_equivalence();
  check_scheduler_single_run();
  check_slab_invariants();
  check_privilege_separation();
  check_ub_case_studies();
  check_end_to_end();
  if (g_failures == 0) {
    std::printf("================\nall criteria passed\n");
    return 0;
  }
  std::printf("================\n%d criteria FAILED\n", g_failures);
  return 1;
}
