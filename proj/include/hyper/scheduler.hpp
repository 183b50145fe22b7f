#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyper/clock.hpp"
#include "hyper/workflow.hpp"

namespace hyper {

enum class EventKind {
  kWorkflowSubmitted,
  kNodeJoined,
  kNodeHeartbeat,
  kNodeDead,
  kTaskAssigned,
  kTaskFinished,
  kExperimentReleased,
  kWorkflowPhaseChanged,
};

std::string_view to_string(EventKind kind);
EventKind event_kind_from_string(std::string_view s);

// One entry of the append-only scheduler log. Scheduler state is exactly the
// fold of its events, which is what makes snapshot + replay recovery work.
struct SchedulerEvent {
  std::uint64_t seq = 0;  // 1-based, dense
  EventKind kind = EventKind::kNodeJoined;
  Millis at{0};
  json payload;

  json to_json() const;
  static SchedulerEvent from_json(const json& j);
  bool operator==(const SchedulerEvent& other) const;
};

// Newline-delimited JSON, one event per line.
std::string events_to_ndjson(std::span<const SchedulerEvent> events);
std::vector<SchedulerEvent> events_from_ndjson(std::string_view text);

struct SchedulerConfig {
  Millis heartbeat_interval{1000};
  Millis liveness_timeout{3000};
  int max_attempts_per_task = 3;
  bool reschedule_same_node = false;

  void validate() const;
  json to_json() const;
  static SchedulerConfig from_json(const json& j);
};

enum class NodeState { kJoining, kLive, kDead };
std::string_view to_string(NodeState state);

struct NodeRecord {
  std::string id;
  int capacity = 1;
  std::string profile = "default";
  bool spot = false;
  Millis last_heartbeat{0};
  NodeState state = NodeState::kJoining;
  // In-flight attempts, as booked by the scheduler.
  int load = 0;
  std::uint64_t heartbeat_seq = 0;

  int free_slots() const { return state == NodeState::kLive ? capacity - load : 0; }
};

struct Assignment {
  std::string workflow_id;
  std::string experiment;
  std::string task_id;
  std::string node_id;
  int attempt = 1;
  std::string command;
  bool operator==(const Assignment&) const = default;
};

struct WorkflowStatus {
  std::string workflow_id;
  Phase phase = Phase::kProvisioning;
  // Experiment name -> task state -> count, experiments in declaration order.
  std::vector<std::pair<std::string, std::map<TaskState, std::size_t>>> experiments;
  std::size_t live_nodes = 0;
  std::map<std::string, int> node_load;
  std::size_t event_count = 0;
  Millis started_at{0};
  std::optional<Millis> finished_at;

  std::size_t total_tasks() const;
  std::size_t count(TaskState state) const;
  json to_json() const;
  static WorkflowStatus from_json(const json& j);
  bool operator==(const WorkflowStatus&) const = default;
};

// Chooses a node for a task among candidates that have a free slot.
class PlacementPolicy {
 public:
  virtual ~PlacementPolicy() = default;
  // `candidates` is ordered by node id; returns an index into it.
  virtual std::size_t choose(const Task& task, std::span<const NodeRecord* const> candidates,
                             const SchedulerConfig& config) const = 0;
};

// Least-loaded node, ties to the lowest id; a retried task avoids the node
// of its previous attempt when another candidate exists, unless the config
// allows rescheduling onto the same node.
class LeastLoadedPolicy final : public PlacementPolicy {
 public:
  std::size_t choose(const Task& task, std::span<const NodeRecord* const> candidates,
                     const SchedulerConfig& config) const override;
};

// Single-writer workflow scheduler. Callers pass explicit timestamps; the
// class never reads a clock, so seeded simulations replay exactly.
class Scheduler {
 public:
  explicit Scheduler(SchedulerConfig config = {},
                     std::shared_ptr<const PlacementPolicy> policy = nullptr);

  const SchedulerConfig& config() const { return config_; }

  // Throws DuplicateWorkflow.
  std::string submit(Workflow workflow, Millis now);

  // Throws DuplicateNode for an id that was ever registered.
  void node_joined(const NodeRecord& node, Millis now);
  // Returns false for unknown or dead nodes (heartbeat ignored).
  bool heartbeat(const std::string& node_id, int reported_load, std::uint64_t seq, Millis now);
  // Declares every live node whose last heartbeat is at least
  // liveness_timeout old dead. Returns the ids declared dead.
  std::vector<std::string> check_liveness(Millis now);
  // In-flight tasks on the node become Rescheduled with a NodeLost attempt.
  void on_node_dead(const std::string& node_id, Millis now);

  std::vector<Assignment> next_assignments(Millis now);

  // Returns false, and changes nothing, for a report that does not match
  // the task's in-flight attempt (stale report from a node already
  // declared dead, duplicate, or unknown task).
  bool on_task_finished(const std::string& task_id, const std::string& node_id, int attempt,
                        const Outcome& outcome, Millis now);

  // Throws UnknownWorkflow.
  WorkflowStatus status(const std::string& workflow_id) const;
  const Workflow& workflow(const std::string& workflow_id) const;
  std::vector<std::string> workflow_ids() const;
  bool has_workflow(const std::string& workflow_id) const;
  const std::map<std::string, NodeRecord>& nodes() const { return nodes_; }
  std::size_t live_node_count() const;
  std::uint64_t stale_reports() const { return stale_reports_; }

  const std::vector<SchedulerEvent>& events() const { return log_; }
  // Called synchronously after each event is appended and applied.
  void set_event_listener(std::function<void(const SchedulerEvent&)> listener) {
    listener_ = std::move(listener);
  }

  // State at the current log offset, excluding the log itself.
  json snapshot() const;
  std::uint64_t last_seq() const { return next_seq_ - 1; }
  // Rebuilds from a snapshot and applies every event with seq > the
  // snapshot's offset. `events` may contain the already-covered prefix.
  static Scheduler restore(const json& snapshot, std::span<const SchedulerEvent> events,
                           std::shared_ptr<const PlacementPolicy> policy = nullptr);
  // Cold replay from an empty state.
  static Scheduler replay(const SchedulerConfig& config, std::span<const SchedulerEvent> events,
                          std::shared_ptr<const PlacementPolicy> policy = nullptr);

 private:
  struct WorkflowRecord {
    Workflow workflow;
    Millis submitted_at{0};
    std::optional<Millis> finished_at;
  };
  struct TaskRef {
    std::string workflow;
    std::size_t experiment;
    std::size_t index;
  };

  void emit(EventKind kind, Millis at, json payload);
  void apply(const SchedulerEvent& event);
  Task* find_task(const std::string& task_id);
  void index_tasks(const Workflow& wf);
  void change_phase(WorkflowRecord& record, Phase to, Millis now);
  void release_ready_experiments(WorkflowRecord& record, Millis now);

  SchedulerConfig config_;
  std::shared_ptr<const PlacementPolicy> policy_;
  std::map<std::string, WorkflowRecord> workflows_;
  std::map<std::string, TaskRef> task_index_;
  std::map<std::string, NodeRecord> nodes_;
  std::vector<SchedulerEvent> log_;
  std::uint64_t next_seq_ = 1;
  // Log offset covered by the snapshot this instance was restored from.
  std::uint64_t base_seq_ = 0;
  std::uint64_t stale_reports_ = 0;
  std::function<void(const SchedulerEvent&)> listener_;
};

}  // namespace hyper
