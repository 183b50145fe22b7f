#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyper/clock.hpp"
#include "hyper/paramgrid.hpp"
#include "hyper/recipe.hpp"

namespace hyper {

using json = nlohmann::json;

// Lifecycle order; Failed is reachable from every non-terminal phase.
enum class Phase { kProvisioning, kOrchestrating, kExecuting, kMonitoringComplete, kFailed };

enum class TaskState { kPending, kAssigned, kRunning, kSucceeded, kFailed, kRescheduled };

std::string_view to_string(Phase phase);
std::string_view to_string(TaskState state);
Phase phase_from_string(std::string_view s);
TaskState task_state_from_string(std::string_view s);

bool is_terminal(Phase phase);
// True when a task in `state` may be handed to a node.
bool is_assignable(TaskState state);

struct Outcome {
  enum class Kind { kSuccess, kFailure, kNodeLost };
  Kind kind = Kind::kSuccess;
  int exit_code = 0;

  static Outcome success() { return {Kind::kSuccess, 0}; }
  static Outcome failure(int code) { return {Kind::kFailure, code}; }
  static Outcome node_lost() { return {Kind::kNodeLost, -1}; }

  bool ok() const { return kind == Kind::kSuccess; }
  bool operator==(const Outcome&) const = default;
};

// Exit code reported when a task process could not be started at all.
inline constexpr int kSpawnErrorExitCode = 127;

struct TaskAttempt {
  int number = 1;
  std::string node_id;
  Millis started_at{0};
  std::optional<Millis> ended_at;
  // Empty while the attempt is in flight.
  std::optional<Outcome> outcome;

  bool in_flight() const { return !outcome.has_value(); }
  bool operator==(const TaskAttempt&) const = default;
};

struct Task {
  // "<workflow>/<experiment>/<index>"; unique across all workflows of a master.
  std::string id;
  std::size_t experiment = 0;
  std::size_t index = 0;
  paramgrid::ParameterAssignment assignment;
  std::string command;
  TaskState state = TaskState::kPending;
  std::vector<TaskAttempt> attempts;

  const TaskAttempt* in_flight_attempt() const;
  // Program failures only; NodeLost attempts are not counted.
  int failed_attempts() const;
  bool operator==(const Task&) const = default;
};

struct Experiment {
  std::size_t id = 0;
  std::string name;
  ExperimentSpec spec;
  std::vector<Task> tasks;
  // Release sequence number; empty until every dependency has succeeded.
  std::optional<std::uint64_t> released_seq;

  bool all_succeeded() const;
  bool operator==(const Experiment&) const = default;
};

struct Workflow {
  std::string id;
  std::vector<Experiment> experiments;
  // (dependency, dependent) experiment ids.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  Phase phase = Phase::kProvisioning;

  std::vector<std::size_t> dependencies_of(std::size_t experiment) const;
  std::size_t task_count() const;
  // Moves forward only; returns false (and leaves the phase alone) for
  // backward or repeated transitions.
  bool advance(Phase next);

  bool operator==(const Workflow&) const = default;
};

// One Experiment per spec, tasks expanded from params with a seed derived
// from (seed, experiment index); all tasks Pending, phase Provisioning.
Workflow build_workflow(const Recipe& recipe, std::uint64_t seed, std::string id = "wf");

// Kahn ordering of experiment ids; throws Validation on a cycle.
std::vector<std::size_t> topological_order(const Workflow& workflow);

json to_json(const Outcome& outcome);
Outcome outcome_from_json(const json& j);
json to_json(const Workflow& workflow);
Workflow workflow_from_json(const json& j);

}  // namespace hyper
