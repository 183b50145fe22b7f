#include "hyper/scheduler.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>

#include "hyper/error.hpp"

namespace hyper {
namespace {

constexpr std::array<std::string_view, 8> kEventNames = {
    "WorkflowSubmitted", "NodeJoined",         "NodeHeartbeat",       "NodeDead",
    "TaskAssigned",      "TaskFinished",       "ExperimentReleased", "WorkflowPhaseChanged"};

json node_to_json(const NodeRecord& n) {
  return {{"id", n.id},
          {"capacity", n.capacity},
          {"profile", n.profile},
          {"spot", n.spot},
          {"last_heartbeat", n.last_heartbeat.count()},
          {"state", to_string(n.state)},
          {"load", n.load},
          {"heartbeat_seq", n.heartbeat_seq}};
}

NodeRecord node_from_json(const json& j) {
  NodeRecord n;
  n.id = j.at("id").get<std::string>();
  n.capacity = j.at("capacity").get<int>();
  n.profile = j.at("profile").get<std::string>();
  n.spot = j.at("spot").get<bool>();
  n.last_heartbeat = Millis{j.at("last_heartbeat").get<long long>()};
  const auto state = j.at("state").get<std::string>();
  n.state = state == "Live" ? NodeState::kLive : state == "Dead" ? NodeState::kDead : NodeState::kJoining;
  n.load = j.at("load").get<int>();
  n.heartbeat_seq = j.at("heartbeat_seq").get<std::uint64_t>();
  return n;
}

}  // namespace

std::string_view to_string(EventKind kind) { return kEventNames[static_cast<std::size_t>(kind)]; }

EventKind event_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == s) return static_cast<EventKind>(i);
  }
  throw Error(ErrorCode::kProtocol, "unknown event kind '" + std::string(s) + "'");
}

std::string_view to_string(NodeState state) {
  switch (state) {
    case NodeState::kJoining: return "Joining";
    case NodeState::kLive: return "Live";
    case NodeState::kDead: return "Dead";
  }
  return "Unknown";
}

json SchedulerEvent::to_json() const {
  return {{"seq", seq}, {"kind", to_string(kind)}, {"at", at.count()}, {"payload", payload}};
}

SchedulerEvent SchedulerEvent::from_json(const json& j) {
  return {j.at("seq").get<std::uint64_t>(), event_kind_from_string(j.at("kind").get<std::string>()),
          Millis{j.at("at").get<long long>()}, j.at("payload")};
}

bool SchedulerEvent::operator==(const SchedulerEvent& other) const {
  return seq == other.seq && kind == other.kind && at == other.at && payload == other.payload;
}

std::string events_to_ndjson(std::span<const SchedulerEvent> events) {
  std::string out;
  for (const auto& e : events) {
    out += e.to_json().dump();
    out += '\n';
  }
  return out;
}

std::vector<SchedulerEvent> events_from_ndjson(std::string_view text) {
  std::vector<SchedulerEvent> events;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      events.push_back(SchedulerEvent::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kProtocol, std::string("bad event log line: ") + e.what());
    }
  }
  return events;
}

void SchedulerConfig::validate() const {
  if (heartbeat_interval.count() <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "heartbeat_interval must be positive");
  }
  if (liveness_timeout <= heartbeat_interval) {
    throw Error(ErrorCode::kInvalidArgument, "liveness_timeout must exceed heartbeat_interval");
  }
  if (max_attempts_per_task < 1) {
    throw Error(ErrorCode::kInvalidArgument, "max_attempts_per_task must be at least 1");
  }
}

json SchedulerConfig::to_json() const {
  return {{"heartbeat_interval_ms", heartbeat_interval.count()},
          {"liveness_timeout_ms", liveness_timeout.count()},
          {"max_attempts_per_task", max_attempts_per_task},
          {"reschedule_same_node", reschedule_same_node}};
}

SchedulerConfig SchedulerConfig::from_json(const json& j) {
  SchedulerConfig c;
  c.heartbeat_interval = Millis{j.at("heartbeat_interval_ms").get<long long>()};
  c.liveness_timeout = Millis{j.at("liveness_timeout_ms").get<long long>()};
  c.max_attempts_per_task = j.at("max_attempts_per_task").get<int>();
  c.reschedule_same_node = j.at("reschedule_same_node").get<bool>();
  return c;
}

std::size_t WorkflowStatus::total_tasks() const {
  std::size_t n = 0;
  for (const auto& [name, counts] : experiments) {
    for (const auto& [state, c] : counts) n += c;
  }
  return n;
}

std::size_t WorkflowStatus::count(TaskState state) const {
  std::size_t n = 0;
  for (const auto& [name, counts] : experiments) {
    if (const auto it = counts.find(state); it != counts.end()) n += it->second;
  }
  return n;
}

json WorkflowStatus::to_json() const {
  json exps = json::array();
  for (const auto& [name, counts] : experiments) {
    json c = json::object();
    for (auto s : {TaskState::kPending, TaskState::kAssigned, TaskState::kRunning,
                   TaskState::kSucceeded, TaskState::kFailed, TaskState::kRescheduled}) {
      const auto it = counts.find(s);
      c[std::string(hyper::to_string(s))] = it == counts.end() ? 0 : it->second;
    }
    exps.push_back({{"name", name}, {"tasks", c}});
  }
  return {{"workflow_id", workflow_id},
          {"phase", hyper::to_string(phase)},
          {"experiments", exps},
          {"live_nodes", live_nodes},
          {"node_load", node_load},
          {"event_count", event_count},
          {"started_at", started_at.count()},
          {"finished_at", finished_at ? json(finished_at->count()) : json(nullptr)}};
}

WorkflowStatus WorkflowStatus::from_json(const json& j) {
  WorkflowStatus s;
  s.workflow_id = j.at("workflow_id").get<std::string>();
  s.phase = phase_from_string(j.at("phase").get<std::string>());
  for (const auto& e : j.at("experiments")) {
    std::map<TaskState, std::size_t> counts;
    for (const auto& [state, c] : e.at("tasks").items()) {
      if (c.get<std::size_t>() > 0) counts[task_state_from_string(state)] = c.get<std::size_t>();
    }
    s.experiments.emplace_back(e.at("name").get<std::string>(), counts);
  }
  s.live_nodes = j.at("live_nodes").get<std::size_t>();
  s.node_load = j.at("node_load").get<std::map<std::string, int>>();
  s.event_count = j.at("event_count").get<std::size_t>();
  s.started_at = Millis{j.at("started_at").get<long long>()};
  if (!j.at("finished_at").is_null()) s.finished_at = Millis{j.at("finished_at").get<long long>()};
  return s;
}

std::size_t LeastLoadedPolicy::choose(const Task& task,
                                      std::span<const NodeRecord* const> candidates,
                                      const SchedulerConfig& config) const {
  const std::string* avoid = nullptr;
  if (!config.reschedule_same_node && !task.attempts.empty()) avoid = &task.attempts.back().node_id;
  std::optional<std::size_t> best;
  std::optional<std::size_t> fallback;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const NodeRecord* n = candidates[i];
    auto better = [&](const std::optional<std::size_t>& cur) {
      return !cur || n->load < candidates[*cur]->load;
    };
    if (avoid != nullptr && n->id == *avoid) {
      if (better(fallback)) fallback = i;
    } else if (better(best)) {
      best = i;
    }
  }
  return best ? *best : *fallback;
}

Scheduler::Scheduler(SchedulerConfig config, std::shared_ptr<const PlacementPolicy> policy)
    : config_(config),
      policy_(policy ? std::move(policy) : std::make_shared<LeastLoadedPolicy>()) {
  config_.validate();
}

void Scheduler::emit(EventKind kind, Millis at, json payload) {
  SchedulerEvent event{next_seq_, kind, at, std::move(payload)};
  apply(event);
  log_.push_back(std::move(event));
  if (listener_) listener_(log_.back());
}

Task* Scheduler::find_task(const std::string& task_id) {
  const auto it = task_index_.find(task_id);
  if (it == task_index_.end()) return nullptr;
  auto& wf = workflows_.at(it->second.workflow).workflow;
  return &wf.experiments[it->second.experiment].tasks[it->second.index];
}

void Scheduler::index_tasks(const Workflow& wf) {
  for (const auto& e : wf.experiments) {
    for (const auto& t : e.tasks) task_index_[t.id] = {wf.id, e.id, t.index};
  }
}

// The only place state changes. Every branch must be a pure function of
// (state, event) so that replay reproduces the original run.
void Scheduler::apply(const SchedulerEvent& event) {
  const json& p = event.payload;
  switch (event.kind) {
    case EventKind::kWorkflowSubmitted: {
      Workflow wf = workflow_from_json(p.at("workflow"));
      index_tasks(wf);
      const std::string id = wf.id;
      workflows_[id] = WorkflowRecord{std::move(wf), event.at, std::nullopt};
      break;
    }
    case EventKind::kNodeJoined: {
      NodeRecord n;
      n.id = p.at("node").get<std::string>();
      n.capacity = p.at("capacity").get<int>();
      n.profile = p.at("profile").get<std::string>();
      n.spot = p.at("spot").get<bool>();
      n.last_heartbeat = event.at;
      n.state = NodeState::kLive;
      nodes_[n.id] = n;
      break;
    }
    case EventKind::kNodeHeartbeat: {
      auto& n = nodes_.at(p.at("node").get<std::string>());
      n.last_heartbeat = event.at;
      n.heartbeat_seq = p.at("seq").get<std::uint64_t>();
      for (auto& [id, record] : workflows_) {
        for (auto& e : record.workflow.experiments) {
          for (auto& t : e.tasks) {
            if (t.state == TaskState::kAssigned && t.attempts.back().node_id == n.id) {
              t.state = TaskState::kRunning;
            }
          }
        }
      }
      break;
    }
    case EventKind::kNodeDead: {
      auto& n = nodes_.at(p.at("node").get<std::string>());
      n.state = NodeState::kDead;
      n.load = 0;
      for (auto& [id, record] : workflows_) {
        for (auto& e : record.workflow.experiments) {
          for (auto& t : e.tasks) {
            if (!t.attempts.empty() && t.attempts.back().in_flight() &&
                t.attempts.back().node_id == n.id) {
              t.attempts.back().outcome = Outcome::node_lost();
              t.attempts.back().ended_at = event.at;
              t.state = TaskState::kRescheduled;
            }
          }
        }
      }
      break;
    }
    case EventKind::kTaskAssigned: {
      Task* t = find_task(p.at("task").get<std::string>());
      t->attempts.push_back({p.at("attempt").get<int>(), p.at("node").get<std::string>(), event.at,
                             std::nullopt, std::nullopt});
      t->state = TaskState::kAssigned;
      nodes_.at(t->attempts.back().node_id).load += 1;
      break;
    }
    case EventKind::kTaskFinished: {
      Task* t = find_task(p.at("task").get<std::string>());
      auto& attempt = t->attempts.back();
      attempt.outcome = outcome_from_json(p.at("outcome"));
      attempt.ended_at = event.at;
      nodes_.at(attempt.node_id).load -= 1;
      if (attempt.outcome->ok()) {
        t->state = TaskState::kSucceeded;
      } else if (t->failed_attempts() >= config_.max_attempts_per_task) {
        t->state = TaskState::kFailed;
      } else {
        t->state = TaskState::kPending;
      }
      break;
    }
    case EventKind::kExperimentReleased: {
      auto& record = workflows_.at(p.at("workflow").get<std::string>());
      record.workflow.experiments.at(p.at("experiment").get<std::size_t>()).released_seq = event.seq;
      break;
    }
    case EventKind::kWorkflowPhaseChanged: {
      auto& record = workflows_.at(p.at("workflow").get<std::string>());
      record.workflow.advance(phase_from_string(p.at("to").get<std::string>()));
      if (is_terminal(record.workflow.phase)) record.finished_at = event.at;
      break;
    }
  }
  next_seq_ = event.seq + 1;
}

void Scheduler::change_phase(WorkflowRecord& record, Phase to, Millis now) {
  Workflow probe;
  probe.phase = record.workflow.phase;
  if (!probe.advance(to)) return;
  emit(EventKind::kWorkflowPhaseChanged, now,
       {{"workflow", record.workflow.id},
        {"from", to_string(record.workflow.phase)},
        {"to", to_string(to)}});
}

void Scheduler::release_ready_experiments(WorkflowRecord& record, Millis now) {
  Workflow& wf = record.workflow;
  if (is_terminal(wf.phase)) return;
  for (auto& e : wf.experiments) {
    if (e.released_seq) continue;
    const auto deps = wf.dependencies_of(e.id);
    const bool ready = std::all_of(deps.begin(), deps.end(), [&](std::size_t d) {
      return wf.experiments[d].all_succeeded();
    });
    if (ready) {
      emit(EventKind::kExperimentReleased, now,
           {{"workflow", wf.id}, {"experiment", e.id}, {"name", e.name}});
    }
  }
}

std::string Scheduler::submit(Workflow workflow, Millis now) {
  if (workflows_.count(workflow.id)) {
    throw Error(ErrorCode::kDuplicateWorkflow, "workflow " + workflow.id + " already submitted");
  }
  for (const auto& e : workflow.experiments) {
    for (const auto& t : e.tasks) {
      if (task_index_.count(t.id)) {
        throw Error(ErrorCode::kDuplicateWorkflow, "task id " + t.id + " already in use");
      }
    }
  }
  topological_order(workflow);
  const std::string id = workflow.id;
  emit(EventKind::kWorkflowSubmitted, now, {{"workflow", to_json(workflow)}});
  auto& record = workflows_.at(id);
  if (live_node_count() > 0) change_phase(record, Phase::kOrchestrating, now);
  release_ready_experiments(record, now);
  return id;
}

void Scheduler::node_joined(const NodeRecord& node, Millis now) {
  if (node.id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty node id");
  if (node.capacity < 1) throw Error(ErrorCode::kInvalidArgument, "node capacity must be >= 1");
  if (nodes_.count(node.id)) {
    throw Error(ErrorCode::kDuplicateNode, "node id " + node.id + " already registered");
  }
  emit(EventKind::kNodeJoined, now,
       {{"node", node.id}, {"capacity", node.capacity}, {"profile", node.profile}, {"spot", node.spot}});
  for (auto& [id, record] : workflows_) {
    if (record.workflow.phase == Phase::kProvisioning) {
      change_phase(record, Phase::kOrchestrating, now);
    }
  }
}

bool Scheduler::heartbeat(const std::string& node_id, int reported_load, std::uint64_t seq,
                          Millis now) {
  const auto it = nodes_.find(node_id);
  if (it == nodes_.end() || it->second.state != NodeState::kLive) return false;
  emit(EventKind::kNodeHeartbeat, now, {{"node", node_id}, {"load", reported_load}, {"seq", seq}});
  return true;
}

std::vector<std::string> Scheduler::check_liveness(Millis now) {
  std::vector<std::string> dead;
  for (const auto& [id, n] : nodes_) {
    if (n.state == NodeState::kLive && now - n.last_heartbeat >= config_.liveness_timeout) {
      dead.push_back(id);
    }
  }
  for (const auto& id : dead) on_node_dead(id, now);
  return dead;
}

void Scheduler::on_node_dead(const std::string& node_id, Millis now) {
  const auto it = nodes_.find(node_id);
  if (it == nodes_.end() || it->second.state == NodeState::kDead) return;
  emit(EventKind::kNodeDead, now, {{"node", node_id}});
}

std::vector<Assignment> Scheduler::next_assignments(Millis now) {
  std::vector<Assignment> out;
  struct Released {
    std::uint64_t seq;
    WorkflowRecord* record;
    std::size_t experiment;
  };
  std::vector<Released> released;
  for (auto& [id, record] : workflows_) {
    if (is_terminal(record.workflow.phase)) continue;
    for (const auto& e : record.workflow.experiments) {
      if (e.released_seq) released.push_back({*e.released_seq, &record, e.id});
    }
  }
  std::sort(released.begin(), released.end(),
            [](const Released& a, const Released& b) { return a.seq < b.seq; });

  std::vector<const NodeRecord*> candidates;
  auto refresh_candidates = [&] {
    candidates.clear();
    for (const auto& [id, n] : nodes_) {
      if (n.free_slots() > 0) candidates.push_back(&n);
    }
  };
  refresh_candidates();

  for (const auto& r : released) {
    WorkflowRecord& record = *r.record;
    auto& exp = record.workflow.experiments[r.experiment];
    for (std::size_t i = 0; i < exp.tasks.size(); ++i) {
      if (candidates.empty()) return out;
      const Task& task = exp.tasks[i];
      if (!is_assignable(task.state)) continue;
      const NodeRecord* node = candidates[policy_->choose(task, candidates, config_)];
      if (record.workflow.phase == Phase::kProvisioning) {
        change_phase(record, Phase::kOrchestrating, now);
      }
      change_phase(record, Phase::kExecuting, now);
      const int attempt = static_cast<int>(task.attempts.size()) + 1;
      const std::string node_id = node->id;
      emit(EventKind::kTaskAssigned, now,
           {{"workflow", record.workflow.id},
            {"task", task.id},
            {"node", node_id},
            {"attempt", attempt},
            {"command", task.command}});
      out.push_back({record.workflow.id, exp.name, task.id, node_id, attempt, task.command});
      refresh_candidates();
    }
  }
  return out;
}

bool Scheduler::on_task_finished(const std::string& task_id, const std::string& node_id,
                                 int attempt, const Outcome& outcome, Millis now) {
  Task* task = find_task(task_id);
  const TaskAttempt* in_flight = task ? task->in_flight_attempt() : nullptr;
  if (in_flight == nullptr || in_flight->node_id != node_id || in_flight->number != attempt ||
      outcome.kind == Outcome::Kind::kNodeLost) {
    ++stale_reports_;
    return false;
  }
  const TaskRef ref = task_index_.at(task_id);
  emit(EventKind::kTaskFinished, now,
       {{"workflow", ref.workflow},
        {"task", task_id},
        {"node", node_id},
        {"attempt", attempt},
        {"outcome", to_json(outcome)}});

  auto& record = workflows_.at(ref.workflow);
  if (is_terminal(record.workflow.phase)) return true;
  const Task& after = record.workflow.experiments[ref.experiment].tasks[ref.index];
  if (after.state == TaskState::kFailed) {
    change_phase(record, Phase::kFailed, now);
    return true;
  }
  if (after.state == TaskState::kSucceeded &&
      record.workflow.experiments[ref.experiment].all_succeeded()) {
    release_ready_experiments(record, now);
    const auto& exps = record.workflow.experiments;
    if (std::all_of(exps.begin(), exps.end(), [](const Experiment& e) { return e.all_succeeded(); })) {
      change_phase(record, Phase::kMonitoringComplete, now);
    }
  }
  return true;
}

WorkflowStatus Scheduler::status(const std::string& workflow_id) const {
  const auto it = workflows_.find(workflow_id);
  if (it == workflows_.end()) {
    throw Error(ErrorCode::kUnknownWorkflow, "no workflow " + workflow_id);
  }
  const auto& record = it->second;
  WorkflowStatus s;
  s.workflow_id = workflow_id;
  s.phase = record.workflow.phase;
  for (const auto& e : record.workflow.experiments) {
    std::map<TaskState, std::size_t> counts;
    for (const auto& t : e.tasks) ++counts[t.state];
    s.experiments.emplace_back(e.name, std::move(counts));
  }
  for (const auto& [id, n] : nodes_) {
    if (n.state == NodeState::kLive) {
      ++s.live_nodes;
      s.node_load[id] = n.load;
    }
  }
  s.event_count = last_seq();
  s.started_at = record.submitted_at;
  s.finished_at = record.finished_at;
  return s;
}

const Workflow& Scheduler::workflow(const std::string& workflow_id) const {
  const auto it = workflows_.find(workflow_id);
  if (it == workflows_.end()) throw Error(ErrorCode::kUnknownWorkflow, "no workflow " + workflow_id);
  return it->second.workflow;
}

std::vector<std::string> Scheduler::workflow_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, r] : workflows_) ids.push_back(id);
  return ids;
}

bool Scheduler::has_workflow(const std::string& workflow_id) const {
  return workflows_.count(workflow_id) > 0;
}

std::size_t Scheduler::live_node_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const auto& kv) {
    return kv.second.state == NodeState::kLive;
  }));
}

json Scheduler::snapshot() const {
  json workflows = json::array();
  for (const auto& [id, r] : workflows_) {
    workflows.push_back({{"workflow", to_json(r.workflow)},
                         {"submitted_at", r.submitted_at.count()},
                         {"finished_at", r.finished_at ? json(r.finished_at->count()) : json(nullptr)}});
  }
  json nodes = json::array();
  for (const auto& [id, n] : nodes_) nodes.push_back(node_to_json(n));
  return {{"format", 1},
          {"seq", last_seq()},
          {"config", config_.to_json()},
          {"workflows", workflows},
          {"nodes", nodes}};
}

Scheduler Scheduler::restore(const json& snapshot, std::span<const SchedulerEvent> events,
                             std::shared_ptr<const PlacementPolicy> policy) {
  Scheduler s(SchedulerConfig::from_json(snapshot.at("config")), std::move(policy));
  for (const auto& jw : snapshot.at("workflows")) {
    WorkflowRecord r;
    r.workflow = workflow_from_json(jw.at("workflow"));
    r.submitted_at = Millis{jw.at("submitted_at").get<long long>()};
    if (!jw.at("finished_at").is_null()) r.finished_at = Millis{jw.at("finished_at").get<long long>()};
    s.index_tasks(r.workflow);
    const std::string id = r.workflow.id;
    s.workflows_[id] = std::move(r);
  }
  for (const auto& jn : snapshot.at("nodes")) {
    NodeRecord n = node_from_json(jn);
    s.nodes_[n.id] = n;
  }
  s.base_seq_ = snapshot.at("seq").get<std::uint64_t>();
  s.next_seq_ = s.base_seq_ + 1;
  for (const auto& e : events) {
    if (e.seq <= s.base_seq_) {
      s.log_.push_back(e);
      continue;
    }
    if (e.seq != s.next_seq_) {
      throw Error(ErrorCode::kCorruptSnapshot,
                  "event log gap: expected seq " + std::to_string(s.next_seq_) + ", got " +
                      std::to_string(e.seq));
    }
    s.apply(e);
    s.log_.push_back(e);
  }
  return s;
}

Scheduler Scheduler::replay(const SchedulerConfig& config, std::span<const SchedulerEvent> events,
                            std::shared_ptr<const PlacementPolicy> policy) {
  Scheduler empty(config, policy);
  return restore(empty.snapshot(), events, std::move(policy));
}

}  // namespace hyper
