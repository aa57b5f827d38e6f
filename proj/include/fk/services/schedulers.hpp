#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "../sched.hpp"

namespace fk::services {

// FIFO round-robin with per-CPU queues. Every pick rotates the current task
// to the back, so the time slice is one scheduling event.
class RoundRobinScheduler final : public Scheduler {
 public:
  explicit RoundRobinScheduler(std::uint32_t cpus) : rqs_(cpus) {}

  void enqueue(const TaskRef& task) override {
    std::lock_guard lock(mutex_);
    std::size_t target = 0;
    for (std::size_t i = 1; i < rqs_.size(); ++i) {
      if (rqs_[i].order.size() < rqs_[target].order.size()) target = i;
    }
    rqs_[target].order.push_back(task.id);
  }

  void local_rq_with(std::uint32_t cpu, const std::function<void(RunQueue&)>& fn) override {
    std::lock_guard lock(mutex_);
    fn(rqs_[cpu]);
  }

  std::size_t queue_len(std::uint32_t cpu) const {
    std::lock_guard lock(mutex_);
    return rqs_[cpu].order.size();
  }

 private:
  struct Rq final : RunQueue {
    std::deque<TaskId> order;  // runnable tasks, including the current one

    void update_curr(TaskId, std::uint64_t) override {}

    TaskId pick_next(TaskId current) override {
      if (order.empty()) return kNoTask;
      if (current != kNoTask && order.front() == current) {
        order.pop_front();
        order.push_back(current);
      }
      return order.front();
    }

    void dequeue_curr(TaskId current) override {
      auto it = std::find(order.begin(), order.end(), current);
      if (it != order.end()) order.erase(it);
    }
  };

  mutable std::mutex mutex_;
  std::vector<Rq> rqs_;
};

// Scheduling attributes for the weighted-fair policy.
struct VruntimeAttrs {
  std::uint64_t weight = 1;
};

// Weighted fair scheduler: picks the runnable task with the minimum
// accumulated runtime/weight. Tasks rejoining after a sleep resume from at
// least the queue's minimum so sleepers cannot hoard the CPU.
class VruntimeScheduler final : public Scheduler {
 public:
  explicit VruntimeScheduler(std::uint32_t cpus) : rqs_(cpus) {}

  void enqueue(const TaskRef& task) override {
    std::lock_guard lock(mutex_);
    std::size_t target = 0;
    for (std::size_t i = 1; i < rqs_.size(); ++i) {
      if (rqs_[i].tasks.size() < rqs_[target].tasks.size()) target = i;
    }
    Rq& rq = rqs_[target];
    std::uint64_t weight = 1;
    if (task.attrs != nullptr) {
      weight = std::static_pointer_cast<VruntimeAttrs>(task.attrs)->weight;
      if (weight == 0) weight = 1;
    }
    std::uint64_t vr = rq.min_vruntime();
    auto parked = parked_.find(task.id);
    if (parked != parked_.end()) {
      vr = std::max(vr, parked->second);
      parked_.erase(parked);
    }
    rq.tasks[task.id] = Ent{vr, weight};
  }

  void local_rq_with(std::uint32_t cpu, const std::function<void(RunQueue&)>& fn) override {
    std::lock_guard lock(mutex_);
    rqs_[cpu].parked = &parked_;
    fn(rqs_[cpu]);
  }

 private:
  static constexpr std::uint64_t kScale = 1 << 20;

  struct Ent {
    std::uint64_t vruntime = 0;
    std::uint64_t weight = 1;
  };

  struct Rq final : RunQueue {
    std::map<TaskId, Ent> tasks;
    std::map<TaskId, std::uint64_t>* parked = nullptr;

    std::uint64_t min_vruntime() const {
      std::uint64_t vr = UINT64_MAX;
      for (const auto& [id, ent] : tasks) vr = std::min(vr, ent.vruntime);
      return vr == UINT64_MAX ? 0 : vr;
    }

    void update_curr(TaskId current, std::uint64_t delta) override {
      auto it = tasks.find(current);
      if (it == tasks.end() || delta == 0) return;
      it->second.vruntime += delta * kScale / it->second.weight;
    }

    TaskId pick_next(TaskId) override {
      TaskId best = kNoTask;
      std::uint64_t best_vr = UINT64_MAX;
      for (const auto& [id, ent] : tasks) {
        if (ent.vruntime < best_vr) {
          best = id;
          best_vr = ent.vruntime;
        }
      }
      return best;
    }

    void dequeue_curr(TaskId current) override {
      auto it = tasks.find(current);
      if (it == tasks.end()) return;
      (*parked)[current] = it->second.vruntime;
      tasks.erase(it);
    }
  };

  mutable std::mutex mutex_;
  std::vector<Rq> rqs_;
  std::map<TaskId, std::uint64_t> parked_;
};

// Deliberately buggy policy for guard demonstrations: every CPU is told to
// run the same task. Expressible in safe code, which is exactly why the
// framework checks the running flag itself.
class DoubleBookScheduler final : public Scheduler {
 public:
  explicit DoubleBookScheduler(std::uint32_t cpus) : rq_{this}, cpus_(cpus) {}

  void enqueue(const TaskRef& task) override {
    std::lock_guard lock(mutex_);
    all_.push_back(task.id);
  }

  void local_rq_with(std::uint32_t cpu, const std::function<void(RunQueue&)>& fn) override {
    (void)cpu;
    std::lock_guard lock(mutex_);
    fn(rq_);
  }

 private:
  struct Rq final : RunQueue {
    explicit Rq(DoubleBookScheduler* s) : self(s) {}
    DoubleBookScheduler* self;

    void update_curr(TaskId, std::uint64_t) override {}
    TaskId pick_next(TaskId) override {
      return self->all_.empty() ? kNoTask : self->all_.front();
    }
    void dequeue_curr(TaskId current) override {
      auto& all = self->all_;
      auto it = std::find(all.begin(), all.end(), current);
      if (it != all.end()) all.erase(it);
    }
  };

  mutable std::mutex mutex_;
  Rq rq_;
  std::uint32_t cpus_;
  std::vector<TaskId> all_;
};

}  // namespace fk::services
