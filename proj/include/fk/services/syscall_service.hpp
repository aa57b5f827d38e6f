#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "../privsep.hpp"
#include "../sched.hpp"
#include "../util.hpp"

namespace fk::services {

// The demo syscall table.
inline constexpr std::uint64_t kSysWrite = 0;  // (vaddr, len) -> kernel buffer
inline constexpr std::uint64_t kSysYield = 1;
inline constexpr std::uint64_t kSysExit = 2;

// Trap-granular syscall dispatch: tasks run scripted user programs until
// they trap, the service handles the trap (copying user bytes through the
// checked path), and scheduling decisions go back through the injected
// policy. Unknown syscalls and page faults terminate the task with a log
// entry.
class SyscallService {
 public:
  explicit SyscallService(SchedSim& sched) : sched_(&sched) {}

  Result<TaskId> add_user_task(VmSpace& space, std::vector<UserOp> program) {
    auto id = sched_->spawn(TaskScript{op_run(1)});
    if (!id.ok()) return id;
    auto state = std::make_unique<TaskState>();
    state->ctx = std::make_unique<UserContext>();
    state->um = std::make_unique<UserMode>(*state->ctx, space, std::move(program));
    state->space = &space;
    tasks_.emplace(id.value(), std::move(state));
    return id;
  }

  // Runs user tasks on one simulated CPU until they all exit (or the event
  // budget runs out, which counts as a scheduling bug in the scenario).
  Status run(std::uint32_t cpu, std::uint32_t max_events = 10000) {
    for (std::uint32_t e = 0; e < max_events; ++e) {
      TaskId cur = sched_->current(cpu);
      if (cur == kNoTask) {
        sched_->schedule(cpu);
        cur = sched_->current(cpu);
        if (cur == kNoTask) {
          return all_exited() ? ok_status()
                              : Status(Error{Errc::exhausted, "runnable tasks starved"});
        }
      }
      auto it = tasks_.find(cur);
      if (it == tasks_.end()) {
        // Not one of ours (mixed scenarios): let its script advance instead.
        sched_->step(cpu);
        continue;
      }
      dispatch(cpu, cur, *it->second);
      if (all_exited()) return ok_status();
    }
    return Error{Errc::exhausted, "event budget exceeded"};
  }

  const std::vector<std::string>& trap_log(TaskId id) const {
    static const std::vector<std::string> empty;
    auto it = tasks_.find(id);
    return it == tasks_.end() ? empty : it->second->log;
  }

  std::vector<std::uint8_t> output(TaskId id) const {
    auto it = tasks_.find(id);
    return it == tasks_.end() ? std::vector<std::uint8_t>{} : it->second->output;
  }

  bool exited(TaskId id) const { return sched_->exited(id); }

 private:
  struct TaskState {
    std::unique_ptr<UserContext> ctx;
    std::unique_ptr<UserMode> um;
    VmSpace* space = nullptr;
    std::vector<std::uint8_t> output;
    std::vector<std::string> log;
    bool done = false;
  };

  bool all_exited() const {
    for (const auto& [id, st] : tasks_) {
      if (!st->done) return false;
    }
    return true;
  }

  void terminate(std::uint32_t cpu, TaskState& st) {
    st.done = true;
    sched_->exit_current(cpu);
  }

  void dispatch(std::uint32_t cpu, TaskId id, TaskState& st) {
    (void)id;
    TrapReason trap = st.um->run();
    switch (trap.kind) {
      case TrapReason::Kind::syscall:
        handle_syscall(cpu, st, trap.value);
        break;
      case TrapReason::Kind::page_fault:
        st.log.push_back("page_fault " + std::to_string(trap.value));
        terminate(cpu, st);
        break;
      case TrapReason::Kind::exit:
        st.log.push_back("exit");
        terminate(cpu, st);
        break;
    }
  }

  void handle_syscall(std::uint32_t cpu, TaskState& st, std::uint64_t no) {
    switch (no) {
      case kSysWrite: {
        std::uint64_t vaddr = st.ctx->reg(Reg::a0);
        std::uint64_t len = st.ctx->reg(Reg::a1);
        auto bytes = st.space->read_user(vaddr, len);
        if (!bytes.ok()) {
          st.log.push_back("write fault: " + bytes.error().to_string());
          terminate(cpu, st);
          return;
        }
        st.output.insert(st.output.end(), bytes.value().begin(), bytes.value().end());
        st.log.push_back("write " + std::to_string(len) + " bytes");
        st.ctx->set_reg(Reg::rv, len);
        break;
      }
      case kSysYield:
        st.log.push_back("yield");
        sched_->yield(cpu);
        break;
      case kSysExit:
        st.log.push_back("exit");
        terminate(cpu, st);
        break;
      default:
        st.log.push_back("unknown syscall " + std::to_string(no));
        terminate(cpu, st);
        break;
    }
  }

  SchedSim* sched_;
  std::map<TaskId, std::unique_ptr<TaskState>> tasks_;
};

}  // namespace fk::services
