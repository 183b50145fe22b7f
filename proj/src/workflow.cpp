#include "hyper/workflow.hpp"

#include <algorithm>
#include <array>

#include "hyper/error.hpp"
#include "hyper/rng.hpp"

namespace hyper {
namespace {

constexpr std::array<std::string_view, 5> kPhaseNames = {
    "Provisioning", "Orchestrating", "Executing", "Monitoring-Complete", "Failed"};
constexpr std::array<std::string_view, 6> kTaskStateNames = {
    "Pending", "Assigned", "Running", "Succeeded", "Failed", "Rescheduled"};

json assignment_to_json(const paramgrid::ParameterAssignment& a) {
  json out = json::array();
  for (const auto& [name, value] : a.bindings) {
    if (const auto* s = std::get_if<std::string>(&value)) {
      out.push_back(json::array({name, *s}));
    } else {
      out.push_back(json::array({name, std::get<double>(value)}));
    }
  }
  return out;
}

paramgrid::ParameterAssignment assignment_from_json(const json& j) {
  paramgrid::ParameterAssignment a;
  for (const auto& pair : j) {
    const auto& v = pair.at(1);
    if (v.is_string()) {
      a.bindings.emplace_back(pair.at(0).get<std::string>(), v.get<std::string>());
    } else {
      a.bindings.emplace_back(pair.at(0).get<std::string>(), v.get<double>());
    }
  }
  return a;
}

json spec_to_json(const ExperimentSpec& s) {
  json params = json::array();
  for (const auto& [name, p] : s.params) {
    if (p.is_discrete()) {
      params.push_back({{"name", name}, {"values", p.as_discrete().values}});
    } else {
      params.push_back(
          {{"name", name}, {"range", {p.as_continuous().lo, p.as_continuous().hi}}});
    }
  }
  return {{"name", s.name},
          {"image", s.image},
          {"workers", s.workers},
          {"hardware", {{"profile", s.hardware.profile}, {"spot", s.hardware.spot}}},
          {"command", s.command},
          {"params", params},
          {"samples", s.samples},
          {"depends_on", s.depends_on},
          {"dataset", s.dataset}};
}

ExperimentSpec spec_from_json(const json& j) {
  ExperimentSpec s;
  s.name = j.at("name").get<std::string>();
  s.image = j.at("image").get<std::string>();
  s.workers = j.at("workers").get<int>();
  s.hardware.profile = j.at("hardware").at("profile").get<std::string>();
  s.hardware.spot = j.at("hardware").at("spot").get<bool>();
  s.command = j.at("command").get<std::string>();
  s.dataset = j.value("dataset", "");
  for (const auto& p : j.at("params")) {
    if (p.contains("values")) {
      s.params.emplace_back(p.at("name").get<std::string>(),
                            paramgrid::ParameterSpec::discrete(
                                p.at("values").get<std::vector<std::string>>()));
    } else {
      s.params.emplace_back(p.at("name").get<std::string>(),
                            paramgrid::ParameterSpec::continuous(
                                p.at("range").at(0).get<double>(),
                                p.at("range").at(1).get<double>()));
    }
  }
  s.samples = j.at("samples").get<std::size_t>();
  s.depends_on = j.at("depends_on").get<std::vector<std::string>>();
  return s;
}

json attempt_to_json(const TaskAttempt& a) {
  json j = {{"number", a.number}, {"node", a.node_id}, {"started_at", a.started_at.count()}};
  j["ended_at"] = a.ended_at ? json(a.ended_at->count()) : json(nullptr);
  j["outcome"] = a.outcome ? to_json(*a.outcome) : json(nullptr);
  return j;
}

TaskAttempt attempt_from_json(const json& j) {
  TaskAttempt a;
  a.number = j.at("number").get<int>();
  a.node_id = j.at("node").get<std::string>();
  a.started_at = Millis{j.at("started_at").get<long long>()};
  if (!j.at("ended_at").is_null()) a.ended_at = Millis{j.at("ended_at").get<long long>()};
  if (!j.at("outcome").is_null()) a.outcome = outcome_from_json(j.at("outcome"));
  return a;
}

}  // namespace

std::string_view to_string(Phase phase) { return kPhaseNames[static_cast<std::size_t>(phase)]; }

std::string_view to_string(TaskState state) {
  return kTaskStateNames[static_cast<std::size_t>(state)];
}

Phase phase_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i) {
    if (kPhaseNames[i] == s) return static_cast<Phase>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown phase '" + std::string(s) + "'");
}

TaskState task_state_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kTaskStateNames.size(); ++i) {
    if (kTaskStateNames[i] == s) return static_cast<TaskState>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task state '" + std::string(s) + "'");
}

bool is_terminal(Phase phase) {
  return phase == Phase::kMonitoringComplete || phase == Phase::kFailed;
}

bool is_assignable(TaskState state) {
  return state == TaskState::kPending || state == TaskState::kRescheduled;
}

const TaskAttempt* Task::in_flight_attempt() const {
  if (!attempts.empty() && attempts.back().in_flight()) return &attempts.back();
  return nullptr;
}

int Task::failed_attempts() const {
  return static_cast<int>(std::count_if(attempts.begin(), attempts.end(), [](const auto& a) {
    return a.outcome && a.outcome->kind == Outcome::Kind::kFailure;
  }));
}

bool Experiment::all_succeeded() const {
  return std::all_of(tasks.begin(), tasks.end(),
                     [](const Task& t) { return t.state == TaskState::kSucceeded; });
}

std::vector<std::size_t> Workflow::dependencies_of(std::size_t experiment) const {
  std::vector<std::size_t> deps;
  for (const auto& [from, to] : edges) {
    if (to == experiment) deps.push_back(from);
  }
  return deps;
}

std::size_t Workflow::task_count() const {
  std::size_t n = 0;
  for (const auto& e : experiments) n += e.tasks.size();
  return n;
}

bool Workflow::advance(Phase next) {
  if (is_terminal(phase)) return false;
  if (next == Phase::kFailed || static_cast<int>(next) > static_cast<int>(phase)) {
    phase = next;
    return true;
  }
  return false;
}

Workflow build_workflow(const Recipe& recipe, std::uint64_t seed, std::string id) {
  Workflow wf;
  wf.id = std::move(id);
  for (std::size_t i = 0; i < recipe.experiments.size(); ++i) {
    const auto& spec = recipe.experiments[i];
    Experiment exp;
    exp.id = i;
    exp.name = spec.name;
    exp.spec = spec;
    const auto assignments = paramgrid::expand(spec.params, spec.samples, derive_seed(seed, i));
    exp.tasks.reserve(assignments.size());
    for (std::size_t t = 0; t < assignments.size(); ++t) {
      Task task;
      task.id = wf.id + "/" + spec.name + "/" + std::to_string(t);
      task.experiment = i;
      task.index = t;
      task.assignment = assignments[t];
      task.command = paramgrid::render(spec.command, task.assignment);
      exp.tasks.push_back(std::move(task));
    }
    wf.experiments.push_back(std::move(exp));
  }
  for (std::size_t i = 0; i < recipe.experiments.size(); ++i) {
    for (const auto& dep : recipe.experiments[i].depends_on) {
      for (std::size_t u = 0; u < recipe.experiments.size(); ++u) {
        if (recipe.experiments[u].name == dep) wf.edges.emplace_back(u, i);
      }
    }
  }
  return wf;
}

std::vector<std::size_t> topological_order(const Workflow& workflow) {
  const std::size_t n = workflow.experiments.size();
  std::vector<std::size_t> indegree(n, 0);
  for (const auto& [from, to] : workflow.edges) ++indegree[to];
  std::vector<std::size_t> order;
  std::vector<std::size_t> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indegree[v] == 0) ready.push_back(v);
  }
  while (!ready.empty()) {
    const std::size_t v = ready.front();
    ready.erase(ready.begin());
    order.push_back(v);
    for (const auto& [from, to] : workflow.edges) {
      if (from == v && --indegree[to] == 0) ready.push_back(to);
    }
  }
  if (order.size() != n) throw Error(ErrorCode::kValidation, "workflow edges contain a cycle");
  return order;
}

json to_json(const Outcome& outcome) {
  switch (outcome.kind) {
    case Outcome::Kind::kSuccess: return {{"kind", "Success"}, {"code", 0}};
    case Outcome::Kind::kFailure: return {{"kind", "Failure"}, {"code", outcome.exit_code}};
    case Outcome::Kind::kNodeLost: return {{"kind", "NodeLost"}, {"code", outcome.exit_code}};
  }
  return {};
}

Outcome outcome_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const int code = j.value("code", 0);
  if (kind == "Success") return Outcome::success();
  if (kind == "Failure") return Outcome::failure(code);
  if (kind == "NodeLost") return Outcome::node_lost();
  throw Error(ErrorCode::kProtocol, "unknown outcome kind '" + kind + "'");
}

json to_json(const Workflow& workflow) {
  json experiments = json::array();
  for (const auto& e : workflow.experiments) {
    json tasks = json::array();
    for (const auto& t : e.tasks) {
      json attempts = json::array();
      for (const auto& a : t.attempts) attempts.push_back(attempt_to_json(a));
      tasks.push_back({{"id", t.id},
                       {"index", t.index},
                       {"assignment", assignment_to_json(t.assignment)},
                       {"command", t.command},
                       {"state", to_string(t.state)},
                       {"attempts", attempts}});
    }
    experiments.push_back({{"id", e.id},
                           {"name", e.name},
                           {"spec", spec_to_json(e.spec)},
                           {"released_seq", e.released_seq ? json(*e.released_seq) : json()},
                           {"tasks", tasks}});
  }
  json edges = json::array();
  for (const auto& [from, to] : workflow.edges) edges.push_back({from, to});
  return {{"id", workflow.id},
          {"phase", to_string(workflow.phase)},
          {"experiments", experiments},
          {"edges", edges}};
}

Workflow workflow_from_json(const json& j) {
  Workflow wf;
  wf.id = j.at("id").get<std::string>();
  wf.phase = phase_from_string(j.at("phase").get<std::string>());
  for (const auto& je : j.at("experiments")) {
    Experiment e;
    e.id = je.at("id").get<std::size_t>();
    e.name = je.at("name").get<std::string>();
    e.spec = spec_from_json(je.at("spec"));
    if (!je.at("released_seq").is_null()) e.released_seq = je.at("released_seq").get<std::uint64_t>();
    for (const auto& jt : je.at("tasks")) {
      Task t;
      t.id = jt.at("id").get<std::string>();
      t.experiment = e.id;
      t.index = jt.at("index").get<std::size_t>();
      t.assignment = assignment_from_json(jt.at("assignment"));
      t.command = jt.at("command").get<std::string>();
      t.state = task_state_from_string(jt.at("state").get<std::string>());
      for (const auto& ja : jt.at("attempts")) t.attempts.push_back(attempt_from_json(ja));
      e.tasks.push_back(std::move(t));
    }
    wf.experiments.push_back(std::move(e));
  }
  for (const auto& edge : j.at("edges")) {
    wf.edges.emplace_back(edge.at(0).get<std::size_t>(), edge.at(1).get<std::size_t>());
  }
  return wf;
}

}  // namespace hyper
