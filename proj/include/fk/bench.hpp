#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <memory>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "privsep.hpp"
#include "services/buddy.hpp"
#include "services/global_heap.hpp"
#include "services/schedulers.hpp"
#include "slab.hpp"
#include "system.hpp"

namespace fk {

// Safety-mechanism overhead rows: each operation is measured with the
// relevant check enabled and disabled, on otherwise identical fixtures.
// The two modes are timed in interleaved batches so host-speed drift hits
// both equally; ratio = (checked - unchecked) / checked over the medians.
struct BenchRow {
  std::string name;
  double checked_ns = 0;
  double unchecked_ns = 0;

  double ratio() const {
    return checked_ns <= 0 ? 0.0 : (checked_ns - unchecked_ns) / checked_ns;
  }
};

struct BenchOptions {
  std::uint64_t iterations = 100000;  // per mode, split into batches
  std::string filter;                 // regex over row names; empty = all
};

namespace bench_detail {

// Both modes of one row, with their fixtures kept alive by `keepalive`.
struct PreparedOps {
  std::function<void()> checked;
  std::function<void()> unchecked;
  std::shared_ptr<void> keepalive;
};

inline std::pair<double, double> time_pair(const PreparedOps& ops, std::uint64_t iterations) {
  constexpr int kBatches = 25;
  const std::uint64_t per_batch = std::max<std::uint64_t>(1, iterations / kBatches);
  auto run_batch = [&](const std::function<void()>& op) {
    auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t i = 0; i < per_batch; ++i) op();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration_cast<std::chrono::duration<double, std::nano>>(t1 - t0)
               .count() /
           static_cast<double>(per_batch);
  };
  // Warmup both paths.
  for (std::uint64_t i = 0; i < per_batch; ++i) {
    ops.checked();
    ops.unchecked();
  }
  std::vector<double> c_ns, u_ns;
  c_ns.reserve(kBatches);
  u_ns.reserve(kBatches);
  for (int b = 0; b < kBatches; ++b) {
    c_ns.push_back(run_batch(ops.checked));
    u_ns.push_back(run_batch(ops.unchecked));
  }
  std::sort(c_ns.begin(), c_ns.end());
  std::sort(u_ns.begin(), u_ns.end());
  return {c_ns[c_ns.size() / 2], u_ns[u_ns.size() / 2]};
}

struct MemFixture {
  std::unique_ptr<MemoryMap> map;
  std::unique_ptr<FrameAllocSlot> slot;
  std::uint16_t kind = 0;

  MemFixture(std::uint64_t frames, const SafetyChecks& checks, bool with_buddy) {
    MemConfig cfg;
    cfg.frame_count = frames;
    cfg.usable = {Region{PhysAddr{0}, frames * 4096}};
    cfg.checks = checks;
    map = mem_init(std::move(cfg)).take();
    kind = map->register_meta_kind("bench", 0, true).value();
    slot = std::make_unique<FrameAllocSlot>(*map);
    if (with_buddy) {
      Status st = slot->register_allocator(std::make_shared<services::BuddyAllocator>(4096));
      (void)st;
    }
  }
};

inline SafetyChecks with(bool SafetyChecks::*field, bool value) {
  SafetyChecks checks;
  checks.*field = value;
  return checks;
}

struct RowSpec {
  std::string name;
  std::function<PreparedOps()> make;
};

inline std::vector<RowSpec> row_specs() {
  std::vector<RowSpec> rows;

  rows.push_back({"uframe_read_4k", [] {
                    struct Fx {
                      MemFixture on{16, with(&SafetyChecks::bounds, true), false};
                      MemFixture off{16, with(&SafetyChecks::bounds, false), false};
                      FrameHandle h_on, h_off;
                    };
                    auto fx = std::make_shared<Fx>();
                    fx->h_on = FrameHandle::from_unused(*fx->on.map, PhysAddr{0}, fx->on.kind)
                                   .take();
                    fx->h_off = FrameHandle::from_unused(*fx->off.map, PhysAddr{0}, fx->off.kind)
                                    .take();
                    return PreparedOps{
                        [fx] {
                          auto r = fx->h_on.read_bytes(0, 4096);
                          do_not_optimize(r.value().data());
                        },
                        [fx] {
                          auto r = fx->h_off.read_bytes(0, 4096);
                          do_not_optimize(r.value().data());
                        },
                        fx};
                  }});

  rows.push_back({"uframe_write_4k", [] {
                    struct Fx {
                      MemFixture on{16, with(&SafetyChecks::bounds, true), false};
                      MemFixture off{16, with(&SafetyChecks::bounds, false), false};
                      FrameHandle h_on, h_off;
                      std::vector<std::uint8_t> payload = std::vector<std::uint8_t>(4096, 0x5A);
                    };
                    auto fx = std::make_shared<Fx>();
                    fx->h_on = FrameHandle::from_unused(*fx->on.map, PhysAddr{0}, fx->on.kind)
                                   .take();
                    fx->h_off = FrameHandle::from_unused(*fx->off.map, PhysAddr{0}, fx->off.kind)
                                    .take();
                    return PreparedOps{
                        [fx] {
                          auto st = fx->h_on.write_bytes(0, fx->payload);
                          do_not_optimize(st.ok());
                        },
                        [fx] {
                          auto st = fx->h_off.write_bytes(0, fx->payload);
                          do_not_optimize(st.ok());
                        },
                        fx};
                  }});

  auto make_io_row = [](bool is_read) {
    return [is_read] {
      struct Fx {
        IoSpace on, off;
        IoHandle h_on, h_off;
        std::uint64_t v = 0;
      };
      auto fx = std::make_shared<Fx>();
      for (IoSpace* io : {&fx->on, &fx->off}) {
        Status l = io->io_label(IoKind::mem, 0, 0x100, Sensitivity::insensitive);
        (void)l;
        Status s = io->seal_labels();
        (void)s;
      }
      fx->on.set_checks(with(&SafetyChecks::bounds, true));
      fx->off.set_checks(with(&SafetyChecks::bounds, false));
      fx->h_on = fx->on.acquire_mem(0, 0x40).take();
      fx->h_off = fx->off.acquire_mem(0, 0x40).take();
      if (is_read) {
        return PreparedOps{[fx] {
                             auto r = fx->on.read_once(fx->h_on, 0, 4);
                             do_not_optimize(r.value());
                           },
                           [fx] {
                             auto r = fx->off.read_once(fx->h_off, 0, 4);
                             do_not_optimize(r.value());
                           },
                           fx};
      }
      return PreparedOps{[fx] {
                           auto st = fx->on.write_once(fx->h_on, 0, 4, fx->v++);
                           do_not_optimize(st.ok());
                         },
                         [fx] {
                           auto st = fx->off.write_once(fx->h_off, 0, 4, fx->v++);
                           do_not_optimize(st.ok());
                         },
                         fx};
    };
  };
  rows.push_back({"iomem_read_once_4", make_io_row(true)});
  rows.push_back({"iomem_write_once_4", make_io_row(false)});

  rows.push_back({"stack_new", [] {
                    struct Fx {
                      MemFixture on{256, with(&SafetyChecks::guard_pages, true), true};
                      MemFixture off{256, with(&SafetyChecks::guard_pages, false), true};
                    };
                    auto fx = std::make_shared<Fx>();
                    return PreparedOps{[fx] {
                                         auto s = KernelStack::create(*fx->on.slot, 4).take();
                                         do_not_optimize(&s);
                                       },
                                       [fx] {
                                         auto s = KernelStack::create(*fx->off.slot, 4).take();
                                         do_not_optimize(&s);
                                       },
                                       fx};
                  }});

  rows.push_back({"task_yield", [] {
                    struct Fx {
                      std::unique_ptr<SchedSim> on, off;
                    };
                    auto fx = std::make_shared<Fx>();
                    auto build = [](bool flag_check) {
                      auto sim = std::make_unique<SchedSim>(
                          SchedConfig{1, false, with(&SafetyChecks::running_flag, flag_check)});
                      Status st = sim->register_scheduler(
                          std::make_shared<services::VruntimeScheduler>(1));
                      (void)st;
                      auto a = sim->spawn({op_run(1u << 30)});
                      auto b = sim->spawn({op_run(1u << 30)});
                      do_not_optimize(a.ok() && b.ok());
                      sim->schedule(0);
                      return sim;
                    };
                    fx->on = build(true);
                    fx->off = build(false);
                    return PreparedOps{[fx] {
                                         auto rep = fx->on->yield(0);
                                         do_not_optimize(rep.to);
                                       },
                                       [fx] {
                                         auto rep = fx->off->yield(0);
                                         do_not_optimize(rep.to);
                                       },
                                       fx};
                  }});

  rows.push_back({"alloc_frames_1", [] {
                    struct Fx {
                      MemFixture on{1024, with(&SafetyChecks::claim_validation, true), true};
                      MemFixture off{1024, with(&SafetyChecks::claim_validation, false), true};
                    };
                    auto fx = std::make_shared<Fx>();
                    AllocLayout layout{4096, 4096};
                    return PreparedOps{[fx, layout] {
                                         auto s = fx->on.slot->alloc_frames(layout, fx->on.kind);
                                         do_not_optimize(s.value().addr().value);
                                       },
                                       [fx, layout] {
                                         auto s =
                                             fx->off.slot->alloc_frames(layout, fx->off.kind);
                                         do_not_optimize(s.value().addr().value);
                                       },
                                       fx};
                  }});

  rows.push_back({"heap_object_48", [] {
                    struct Fx {
                      MemFixture on{1024, with(&SafetyChecks::fit_check, true), true};
                      MemFixture off{1024, with(&SafetyChecks::fit_check, false), true};
                      std::unique_ptr<services::GlobalHeap> heap_on, heap_off;
                    };
                    auto fx = std::make_shared<Fx>();
                    fx->heap_on = std::make_unique<services::GlobalHeap>(*fx->on.slot);
                    fx->heap_off = std::make_unique<services::GlobalHeap>(*fx->off.slot);
                    Status s1 = fx->heap_on->register_size_classes({16, 32, 64, 128});
                    Status s2 = fx->heap_off->register_size_classes({16, 32, 64, 128});
                    (void)s1;
                    (void)s2;
                    return PreparedOps{[fx] {
                                         auto o = fx->heap_on->alloc(TypeTag{48, 8});
                                         do_not_optimize(o.value().addr().value);
                                       },
                                       [fx] {
                                         auto o = fx->heap_off->alloc(TypeTag{48, 8});
                                         do_not_optimize(o.value().addr().value);
                                       },
                                       fx};
                  }});

  return rows;
}

}  // namespace bench_detail

inline std::vector<BenchRow> run_bench(const BenchOptions& opt = {}) {
  std::vector<BenchRow> out;
  std::regex filter(opt.filter.empty() ? ".*" : opt.filter);
  for (auto& spec : bench_detail::row_specs()) {
    if (!std::regex_search(spec.name, filter)) continue;
    auto ops = spec.make();
    auto [checked, unchecked] = bench_detail::time_pair(ops, opt.iterations);
    out.push_back(BenchRow{spec.name, checked, unchecked});
  }
  return out;
}

inline std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "op" << std::right << std::setw(14) << "checked_ns"
      << std::setw(14) << "unchecked_ns" << std::setw(10) << "ratio" << "\n";
  for (const BenchRow& r : rows) {
    out << std::left << std::setw(20) << r.name << std::right << std::fixed
        << std::setprecision(2) << std::setw(14) << r.checked_ns << std::setw(14)
        << r.unchecked_ns << std::setw(9) << std::setprecision(1) << r.ratio() * 100 << "%\n";
  }
  return out.str();
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "op,checked_ns,unchecked_ns,ratio\n";
  for (const BenchRow& r : rows) {
    out << r.name << "," << r.checked_ns << "," << r.unchecked_ns << "," << r.ratio() << "\n";
  }
  return out.str();
}

}  // namespace fk
