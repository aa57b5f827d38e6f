#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mem_model.hpp"
#include "result.hpp"

namespace fk {

using TaskId = std::uint64_t;
inline constexpr TaskId kNoTask = 0;

// Scripted task behavior, consumed one event at a time by the step engine.
struct TaskScriptOp {
  enum class Kind { run, sleep, yield, exit };
  Kind kind = Kind::exit;
  std::uint32_t ticks = 0;  // run only
};

inline TaskScriptOp op_run(std::uint32_t ticks) { return {TaskScriptOp::Kind::run, ticks}; }
inline TaskScriptOp op_sleep() { return {TaskScriptOp::Kind::sleep, 0}; }
inline TaskScriptOp op_yield() { return {TaskScriptOp::Kind::yield, 0}; }
inline TaskScriptOp op_exit() { return {TaskScriptOp::Kind::exit, 0}; }

using TaskScript = std::vector<TaskScriptOp>;

// What an injected policy sees of a task: the id and the opaque scheduling
// attributes. The running flag is framework-private by construction.
struct TaskRef {
  TaskId id = kNoTask;
  std::shared_ptr<void> attrs;
};

// Per-CPU run-queue accessor implemented by the policy. The queue holds
// every runnable task assigned to the CPU, including the one currently
// running. The framework grants exclusive access for the duration of a
// local_rq_with call.
class RunQueue {
 public:
  virtual ~RunQueue() = default;
  // Accounting notification: `delta` logical ticks elapsed on this CPU
  // since the last update of `current`.
  virtual void update_curr(TaskId current, std::uint64_t delta) = 0;
  // The task that should occupy the CPU now. kNoTask parks the CPU;
  // returning `current` keeps it running.
  virtual TaskId pick_next(TaskId current) = 0;
  // The current task became unrunnable and leaves the queue.
  virtual void dequeue_curr(TaskId current) = 0;
};

class Scheduler {
 public:
  virtual ~Scheduler() = default;
  // A task became runnable (spawned or woken).
  virtual void enqueue(const TaskRef& task) = 0;
  // Exclusive access to one CPU's run queue.
  virtual void local_rq_with(std::uint32_t cpu, const std::function<void(RunQueue&)>& fn) = 0;
};

struct GuardViolation {
  std::uint32_t cpu = 0;
  TaskId task = kNoTask;
  std::uint64_t at_tick = 0;
  std::string note;
};

struct SwitchReport {
  enum class Outcome { kept, switched, idled, refused };
  Outcome outcome = Outcome::idled;
  TaskId from = kNoTask;
  TaskId to = kNoTask;
  bool guard_violation = false;
};

enum class SchedEvent { pick, tick, yield, sleep, exit_ };

struct SchedConfig {
  std::uint32_t cpus = 1;
  bool strict_guard = false;  // violations become fatal instead of reports
  SafetyChecks checks;
};

// Simulated CPUs plus the context-switch machinery around an injected
// scheduling policy. A task runs on at most one CPU at any time: the
// is_running flag is checked and set prior to a context switch and cleared
// on the previous task after switching. Violating picks are refused and
// reported; the policy never touches the flag.
class SchedSim {
 public:
  explicit SchedSim(SchedConfig cfg = {}) : cfg_(cfg) {
    cpus_.resize(cfg.cpus == 0 ? 1 : cfg.cpus);
    for (std::uint32_t i = 0; i < cpus_.size(); ++i) cpus_[i].cpu_id = i;
  }

  SchedSim(const SchedSim&) = delete;
  SchedSim& operator=(const SchedSim&) = delete;

  std::uint32_t cpu_count() const { return static_cast<std::uint32_t>(cpus_.size()); }

  Status register_scheduler(std::shared_ptr<Scheduler> policy) {
    std::lock_guard lock(mutex_);
    if (ever_spawned_) return Error{Errc::too_late, "tasks already exist"};
    if (policy_ != nullptr) return Error{Errc::already_registered};
    policy_ = std::move(policy);
    return ok_status();
  }

  bool registered() const {
    std::lock_guard lock(mutex_);
    return policy_ != nullptr;
  }

  Result<TaskId> spawn(TaskScript script, std::shared_ptr<void> attrs = nullptr) {
    std::lock_guard lock(mutex_);
    if (policy_ == nullptr) return Error{Errc::not_registered, "no scheduler"};
    ever_spawned_ = true;
    TaskId id = next_id_++;
    auto task = std::make_unique<Task>();
    task->id = id;
    task->attrs = std::move(attrs);
    task->script = std::move(script);
    tasks_.emplace(id, std::move(task));
    policy_->enqueue(TaskRef{id, tasks_[id]->attrs});
    return id;
  }

  SwitchReport schedule(std::uint32_t cpu, SchedEvent event = SchedEvent::pick) {
    std::lock_guard lock(mutex_);
    return schedule_locked(cpu, event);
  }

  // Timer tick: advances this CPU's logical clock and re-evaluates the pick.
  SwitchReport tick(std::uint32_t cpu) {
    std::lock_guard lock(mutex_);
    cpus_[cpu].tick += 1;
    return schedule_locked(cpu, SchedEvent::tick);
  }

  SwitchReport yield(std::uint32_t cpu) {
    std::lock_guard lock(mutex_);
    return schedule_locked(cpu, SchedEvent::yield);
  }

  SwitchReport sleep_current(std::uint32_t cpu) {
    std::lock_guard lock(mutex_);
    TaskId cur = cpus_[cpu].current;
    if (cur != kNoTask) tasks_[cur]->runnable = false;
    return schedule_locked(cpu, SchedEvent::sleep);
  }

  SwitchReport exit_current(std::uint32_t cpu) {
    std::lock_guard lock(mutex_);
    TaskId cur = cpus_[cpu].current;
    if (cur != kNoTask) {
      tasks_[cur]->runnable = false;
      tasks_[cur]->exited = true;
    }
    return schedule_locked(cpu, SchedEvent::exit_);
  }

  Status wake(TaskId id) {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    if (it == tasks_.end()) return Error{Errc::unknown_task};
    Task& t = *it->second;
    if (t.exited || t.runnable) {
      wake_log_.push_back("wake of runnable task " + std::to_string(id) + " ignored");
      return ok_status();
    }
    t.runnable = true;
    policy_->enqueue(TaskRef{id, t.attrs});
    return ok_status();
  }

  struct StepReport {
    enum class Did { scheduled, ran_tick, yielded, slept, exited, idle } did = Did::idle;
    TaskId task = kNoTask;
    SwitchReport sw;
  };

  // Drives one CPU by one event of its current task's script (or a pick
  // when idle). The deterministic engine behind scenarios and model checks.
  StepReport step(std::uint32_t cpu) {
    std::lock_guard lock(mutex_);
    StepReport rep;
    CpuState& c = cpus_[cpu];
    if (c.current == kNoTask) {
      rep.did = StepReport::Did::scheduled;
      rep.sw = schedule_locked(cpu, SchedEvent::pick);
      return rep;
    }
    Task& t = *tasks_[c.current];
    rep.task = t.id;
    if (t.pc >= t.script.size()) {
      rep.did = StepReport::Did::exited;
      t.exited = true;
      t.runnable = false;
      rep.sw = schedule_locked(cpu, SchedEvent::exit_);
      return rep;
    }
    TaskScriptOp op = t.script[t.pc];
    switch (op.kind) {
      case TaskScriptOp::Kind::run: {
        if (t.run_left == 0) t.run_left = op.ticks;
        if (t.run_left == 0) {
          t.pc += 1;  // zero-tick run
          rep.did = StepReport::Did::ran_tick;
          return rep;
        }
        t.run_left -= 1;
        if (t.run_left == 0) t.pc += 1;
        c.tick += 1;
        rep.did = StepReport::Did::ran_tick;
        rep.sw = schedule_locked(cpu, SchedEvent::tick);
        return rep;
      }
      case TaskScriptOp::Kind::yield:
        t.pc += 1;
        rep.did = StepReport::Did::yielded;
        rep.sw = schedule_locked(cpu, SchedEvent::yield);
        return rep;
      case TaskScriptOp::Kind::sleep:
        t.pc += 1;
        t.runnable = false;
        rep.did = StepReport::Did::slept;
        rep.sw = schedule_locked(cpu, SchedEvent::sleep);
        return rep;
      case TaskScriptOp::Kind::exit:
        t.exited = true;
        t.runnable = false;
        rep.did = StepReport::Did::exited;
        rep.sw = schedule_locked(cpu, SchedEvent::exit_);
        return rep;
    }
    return rep;
  }

  // --- observable state -------------------------------------------------

  TaskId current(std::uint32_t cpu) const {
    std::lock_guard lock(mutex_);
    return cpus_[cpu].current;
  }

  std::uint64_t cpu_tick(std::uint32_t cpu) const {
    std::lock_guard lock(mutex_);
    return cpus_[cpu].tick;
  }

  bool is_running(TaskId id) const {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    return it != tasks_.end() && it->second->is_running.load(std::memory_order_acquire);
  }

  bool runnable(TaskId id) const {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    return it != tasks_.end() && it->second->runnable;
  }

  bool exited(TaskId id) const {
    std::lock_guard lock(mutex_);
    auto it = tasks_.find(id);
    return it != tasks_.end() && it->second->exited;
  }

  std::vector<TaskId> task_ids() const {
    std::lock_guard lock(mutex_);
    std::vector<TaskId> ids;
    for (const auto& [id, t] : tasks_) ids.push_back(id);
    return ids;
  }

  std::vector<GuardViolation> guard_reports() const {
    std::lock_guard lock(mutex_);
    return guard_reports_;
  }

  std::vector<std::string> policy_reports() const {
    std::lock_guard lock(mutex_);
    return policy_reports_;
  }

  std::vector<std::string> wake_log() const {
    std::lock_guard lock(mutex_);
    return wake_log_;
  }

  bool fatal_guard_violation() const {
    std::lock_guard lock(mutex_);
    return fatal_;
  }

  // Single-run invariant probe: true when no task is current on two CPUs
  // and every running flag agrees with some CPU's current.
  bool consistent() const {
    std::lock_guard lock(mutex_);
    std::map<TaskId, int> homes;
    for (const CpuState& c : cpus_) {
      if (c.current != kNoTask) homes[c.current] += 1;
    }
    for (const auto& [id, n] : homes) {
      if (n > 1) return false;
    }
    for (const auto& [id, t] : tasks_) {
      bool flag = t->is_running.load(std::memory_order_acquire);
      bool is_current = homes.count(id) > 0;
      if (flag != is_current) return false;
    }
    return true;
  }

 private:
  struct Task {
    TaskId id = kNoTask;
    std::atomic<bool> is_running{false};
    bool runnable = true;
    bool exited = false;
    std::shared_ptr<void> attrs;
    TaskScript script;
    std::size_t pc = 0;
    std::uint32_t run_left = 0;
  };

  struct CpuState {
    std::uint32_t cpu_id = 0;
    TaskId current = kNoTask;
    std::uint64_t tick = 0;
    std::uint64_t last_update = 0;
  };

  SwitchReport schedule_locked(std::uint32_t cpu, SchedEvent event) {
    SwitchReport rep;
    CpuState& c = cpus_[cpu];
    TaskId prev = c.current;
    rep.from = prev;
    if (policy_ == nullptr) return rep;

    const bool leaving = event == SchedEvent::sleep || event == SchedEvent::exit_;
    TaskId picked = kNoTask;
    std::uint64_t delta = c.tick - c.last_update;
    policy_->local_rq_with(cpu, [&](RunQueue& rq) {
      if (prev != kNoTask) rq.update_curr(prev, delta);
      if (leaving && prev != kNoTask) rq.dequeue_curr(prev);
      picked = rq.pick_next(leaving ? kNoTask : prev);
    });
    c.last_update = c.tick;

    if (picked == prev && !leaving && picked != kNoTask) {
      rep.outcome = SwitchReport::Outcome::kept;
      rep.to = picked;
      return rep;
    }

    if (picked != kNoTask) {
      auto it = tasks_.find(picked);
      if (it == tasks_.end()) {
        policy_reports_.push_back("pick of unknown task " + std::to_string(picked));
        picked = kNoTask;
      } else if (!it->second->runnable) {
        policy_reports_.push_back("pick of unrunnable task " + std::to_string(picked));
        picked = kNoTask;
      }
    }

    // The single-run guard: check and set prior to the switch.
    if (picked != kNoTask && picked != prev) {
      Task& t = *tasks_[picked];
      if (cfg_.checks.running_flag) {
        if (t.is_running.exchange(true, std::memory_order_acq_rel)) {
          guard_reports_.push_back(
              {cpu, picked, c.tick, "picked task is running on another CPU"});
          if (cfg_.strict_guard) fatal_ = true;
          rep.guard_violation = true;
          picked = kNoTask;
        }
      } else {
        t.is_running.store(true, std::memory_order_relaxed);
      }
    }

    c.current = picked;
    // After switching, the previous task's flag is cleared.
    if (prev != kNoTask && prev != picked) {
      tasks_[prev]->is_running.store(false, std::memory_order_release);
    }
    rep.to = picked;
    if (rep.guard_violation) rep.outcome = SwitchReport::Outcome::refused;
    else if (picked == kNoTask) rep.outcome = SwitchReport::Outcome::idled;
    else if (picked == prev) rep.outcome = SwitchReport::Outcome::kept;
    else rep.outcome = SwitchReport::Outcome::switched;
    return rep;
  }

  SchedConfig cfg_;
  mutable std::mutex mutex_;
  std::vector<CpuState> cpus_;
  std::map<TaskId, std::unique_ptr<Task>> tasks_;
  std::shared_ptr<Scheduler> policy_;
  TaskId next_id_ = 1;
  bool ever_spawned_ = false;
  bool fatal_ = false;
  std::vector<GuardViolation> guard_reports_;
  std::vector<std::string> policy_reports_;
  std::vector<std::string> wake_log_;
};

}  // namespace fk
