#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "moesim/cache.hpp"
#include "moesim/gating.hpp"
#include "moesim/predictor.hpp"

namespace moesim {

enum class TaskKind : std::uint8_t { OnDemand, Prefetch };

inline const char* to_string(TaskKind k) { return k == TaskKind::OnDemand ? "demand" : "prefetch"; }

struct LoadTask {
  ExpertKey key;
  Precision precision = Precision::High;
  TaskKind kind = TaskKind::OnDemand;
  double enqueue_time = 0.0;
  // Global layer step (token * n_layers + layer) the task is meant for.
  std::int64_t target_step = 0;

  bool same_payload(const LoadTask& o) const { return key == o.key && precision == o.precision; }
};

inline Precision to_precision(Decision d) {
  return d == Decision::Low ? Precision::Low : Precision::High;
}

/// One task per non-skipped selection whose wanted precision misses the
/// cache, in rank order.
inline std::vector<LoadTask> on_miss_tasks(const GateOutcome& g, const PrecisionDecision& decision,
                                           const ExpertCache& cache, double now = 0.0,
                                           std::int64_t step = 0) {
  std::vector<LoadTask> tasks;
  for (std::size_t i = 0; i < g.ranked.size(); ++i) {
    if (decision.at(i) == Decision::Skip) continue;
    const Precision wanted = to_precision(decision[i]);
    if (cache.lookup(g.ranked[i].key, wanted).hit()) continue;
    tasks.push_back({g.ranked[i].key, wanted, TaskKind::OnDemand, now, step});
  }
  return tasks;
}

/// Prefetch tasks for the chosen lookahead layer: every precision version
/// of a predicted expert that is not cached, low before high.
inline std::vector<LoadTask> enqueue_prefetch(const LookaheadPrediction& pred,
                                              const ExpertCache& cache, double now = 0.0,
                                              std::int64_t origin_step = 0) {
  std::vector<LoadTask> tasks;
  const LookaheadLayer* chosen = pred.chosen();
  if (!chosen) return tasks;
  const std::int64_t step =
      origin_step + static_cast<std::int64_t>(chosen->layer - pred.origin_layer);
  for (const auto& k : chosen->experts) {
    if (!cache.has(k, Precision::Low) && !cache.has(k, Precision::High))
      tasks.push_back({k, Precision::Low, TaskKind::Prefetch, now, step});
    if (!cache.has(k, Precision::High))
      tasks.push_back({k, Precision::High, TaskKind::Prefetch, now, step});
  }
  return tasks;
}

struct Completion {
  LoadTask task;
  double start = 0.0;
  double finish = 0.0;
};

enum class EnqueueOutcome : std::uint8_t { Queued, Coalesced, Promoted };

/// Single non-preemptive transfer link. On-demand tasks go ahead of queued
/// prefetch tasks but never interrupt the transfer in flight. A task whose
/// payload is already queued or in flight is coalesced into it.
class TransferChannel {
 public:
  explicit TransferChannel(CostModel cost) : cost_(cost) {}

  EnqueueOutcome enqueue(LoadTask task) {
    if (in_flight_ && in_flight_->task.same_payload(task)) {
      if (task.kind == TaskKind::OnDemand && in_flight_->task.kind == TaskKind::Prefetch) {
        in_flight_->task.kind = TaskKind::OnDemand;
        in_flight_->task.target_step = task.target_step;
        return EnqueueOutcome::Promoted;
      }
      return EnqueueOutcome::Coalesced;
    }
    auto dup = std::find_if(queue_.begin(), queue_.end(),
                            [&](const LoadTask& q) { return q.same_payload(task); });
    if (dup != queue_.end()) {
      if (task.kind == TaskKind::OnDemand && dup->kind == TaskKind::Prefetch) {
        queue_.erase(dup);
        insert_on_demand(task);
        return EnqueueOutcome::Promoted;
      }
      return EnqueueOutcome::Coalesced;
    }
    if (task.kind == TaskKind::OnDemand)
      insert_on_demand(task);
    else
      queue_.push_back(task);
    return EnqueueOutcome::Queued;
  }

  /// Serves the queue up to time `until`. Prefetch tasks whose target step is
  /// not after `front_step` are dropped when they reach the head.
  std::vector<Completion> advance(double until, std::int64_t front_step) {
    std::vector<Completion> done;
    for (;;) {
      start_next(until, front_step);
      if (!in_flight_ || in_flight_->finish > until) break;
      finish_in_flight(done);
    }
    return done;
  }

  /// Runs the channel until every on-demand task has completed.
  std::vector<Completion> drain_on_demand(std::int64_t front_step) {
    std::vector<Completion> done;
    while (has_on_demand()) {
      start_next(std::numeric_limits<double>::infinity(), front_step);
      if (!in_flight_) break;
      finish_in_flight(done);
    }
    return done;
  }

  bool has_on_demand() const {
    if (in_flight_ && in_flight_->task.kind == TaskKind::OnDemand) return true;
    return std::any_of(queue_.begin(), queue_.end(),
                       [](const LoadTask& t) { return t.kind == TaskKind::OnDemand; });
  }

  bool idle() const { return !in_flight_ && queue_.empty(); }
  double free_at() const { return free_at_; }
  double busy_until() const { return in_flight_ ? in_flight_->finish : free_at_; }
  const std::optional<Completion>& in_flight() const { return in_flight_; }
  const std::deque<LoadTask>& queue() const { return queue_; }
  const std::vector<LoadTask>& dropped() const { return dropped_; }

 private:
  void insert_on_demand(const LoadTask& task) {
    auto pos = std::find_if(queue_.begin(), queue_.end(),
                            [](const LoadTask& q) { return q.kind == TaskKind::Prefetch; });
    queue_.insert(pos, task);
  }

  void start_next(double until, std::int64_t front_step) {
    while (!in_flight_ && !queue_.empty()) {
      LoadTask next = queue_.front();
      const double start = std::max(free_at_, next.enqueue_time);
      if (start > until) return;
      queue_.pop_front();
      if (next.kind == TaskKind::Prefetch && next.target_step <= front_step) {
        dropped_.push_back(next);
        continue;
      }
      in_flight_ = Completion{next, start, start + load_time(next.precision, cost_)};
    }
  }

  void finish_in_flight(std::vector<Completion>& done) {
    free_at_ = in_flight_->finish;
    done.push_back(*in_flight_);
    in_flight_.reset();
  }

  CostModel cost_;
  double free_at_ = 0.0;
  std::optional<Completion> in_flight_;
  std::deque<LoadTask> queue_;
  std::vector<LoadTask> dropped_;
};

}  // namespace moesim
