#pragma once

#include <memory>
#include <string>

#include "frame_alloc.hpp"
#include "mem_model.hpp"
#include "privsep.hpp"
#include "sched.hpp"
#include "services/buddy.hpp"
#include "services/schedulers.hpp"

namespace fk {

// Bootstrap bundle: one simulated machine with its injected policies, the
// I/O spaces and the interrupt table. Scenario runs and demos build on
// this; tests that want finer control wire the pieces themselves.
struct SystemConfig {
  MemConfig mem;
  std::uint32_t cpus = 1;
  bool strict_guard = false;
  std::string scheduler = "round-robin";        // round-robin | vruntime | double-book | none
  std::string frame_allocator = "buddy";        // buddy | none
  std::uint64_t io_mem_bytes = 1 << 16;
  std::uint64_t io_port_bytes = 1 << 16;
};

class System {
 public:
  static Result<std::unique_ptr<System>> create(SystemConfig cfg) {
    if (cfg.cpus == 0) cfg.cpus = 1;
    if (cfg.mem.usable.empty()) {
      cfg.mem.usable = {Region{PhysAddr{0}, cfg.mem.frame_size * cfg.mem.frame_count}};
    }
    auto map = mem_init(cfg.mem);
    if (!map.ok()) return map.error();

    auto sys = std::unique_ptr<System>(new System());
    sys->map_ = map.take();
    sys->frames_ = std::make_unique<FrameAllocSlot>(*sys->map_);
    sys->sched_ = std::make_unique<SchedSim>(SchedConfig{cfg.cpus, cfg.strict_guard,
                                                         cfg.mem.checks});
    sys->io_ = std::make_unique<IoSpace>(cfg.io_mem_bytes, cfg.io_port_bytes);
    sys->io_->set_checks(cfg.mem.checks);
    sys->dma_ = std::make_unique<DmaEngine>(*sys->map_);
    sys->irq_ = std::make_unique<IrqTable>();

    if (cfg.scheduler == "round-robin") {
      Status st = sys->sched_->register_scheduler(
          std::make_shared<services::RoundRobinScheduler>(cfg.cpus));
      if (!st.ok()) return st.error();
    } else if (cfg.scheduler == "vruntime") {
      Status st = sys->sched_->register_scheduler(
          std::make_shared<services::VruntimeScheduler>(cfg.cpus));
      if (!st.ok()) return st.error();
    } else if (cfg.scheduler == "double-book") {
      Status st = sys->sched_->register_scheduler(
          std::make_shared<services::DoubleBookScheduler>(cfg.cpus));
      if (!st.ok()) return st.error();
    } else if (cfg.scheduler != "none") {
      return Error{Errc::parse_error, "unknown scheduler: " + cfg.scheduler};
    }

    if (cfg.frame_allocator == "buddy") {
      Status st = sys->frames_->register_allocator(
          std::make_shared<services::BuddyAllocator>(sys->map_->frame_size()));
      if (!st.ok()) return st.error();
    } else if (cfg.frame_allocator != "none") {
      return Error{Errc::parse_error, "unknown frame allocator: " + cfg.frame_allocator};
    }
    return sys;
  }

  MemoryMap& map() { return *map_; }
  FrameAllocSlot& frames() { return *frames_; }
  SchedSim& sched() { return *sched_; }
  IoSpace& io() { return *io_; }
  DmaEngine& dma() { return *dma_; }
  IrqTable& irq() { return *irq_; }

 private:
  System() = default;

  std::unique_ptr<MemoryMap> map_;
  std::unique_ptr<FrameAllocSlot> frames_;
  std::unique_ptr<SchedSim> sched_;
  std::unique_ptr<IoSpace> io_;
  std::unique_ptr<DmaEngine> dma_;
  std::unique_ptr<IrqTable> irq_;
};

}  // namespace fk
