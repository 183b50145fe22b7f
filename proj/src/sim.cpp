#include "hyper/sim.hpp"

#include <algorithm>
#include <charconv>

#include "hyper/error.hpp"

namespace hyper {
namespace {

json over_the_wire(const json& message) {
  protocol::FrameDecoder d;
  d.feed(protocol::encode_frame(message));
  json out = *d.next();
  protocol::validate(out);
  return out;
}

std::string trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return std::string(s);
}

}  // namespace

Outcome simulated_outcome(const std::string& command) {
  const std::string c = trim(command);
  if (c == "false") return Outcome::failure(1);
  if (c.starts_with("exit ")) {
    int code = 0;
    const std::string arg = trim(std::string_view(c).substr(5));
    const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), code);
    if (ec == std::errc() && code != 0) return Outcome::failure(code);
    if (ec == std::errc()) return Outcome::success();
  }
  return Outcome::success();
}

std::vector<std::string> simulated_output(const std::string& command) {
  const std::string c = trim(command);
  if (c.starts_with("echo ")) return {trim(std::string_view(c).substr(5))};
  return {};
}

SimCluster::SimCluster(SimConfig config, std::shared_ptr<ObjectStore> store,
                       std::shared_ptr<EventJournal> journal)
    : config_(config),
      store_(store ? std::move(store) : std::make_shared<MemoryStore>()),
      journal_(journal ? std::move(journal) : std::make_shared<MemoryJournal>()),
      rng_(derive_seed(config.seed, 1)) {
  if (config_.task_max < config_.task_min) {
    throw Error(ErrorCode::kInvalidArgument, "task_max must be >= task_min");
  }
  master_config_.scheduler.heartbeat_interval = config_.heartbeat_interval;
  master_config_.scheduler.liveness_timeout = config_.liveness_timeout;
  master_config_.scheduler.max_attempts_per_task = config_.max_attempts;
  master_config_.snapshot_interval = config_.snapshot_interval;
  master_ = std::make_unique<Master>(master_config_, store_, journal_);
  for (std::size_t i = 0; i < config_.nodes; ++i) start_node(Millis{0});
  schedule(Millis{0}, Kind::kTick);
}

void SimCluster::schedule(Millis at, Kind kind, std::size_t agent, TaskSpec task) {
  queue_.push(Event{at, order_++, kind, agent, std::move(task)});
}

void SimCluster::start_node(Millis at) {
  const std::size_t index = agents_.size();
  NodeOptions o;
  o.node_id = "sim-" + std::to_string(index);
  o.capacity = config_.capacity;
  o.spot = config_.kill_probability > 0;
  o.fault = config_.kill_probability > 0
                ? FaultPlan::kill_with_probability(config_.kill_probability,
                                                   derive_seed(config_.seed, 1000 + index))
                : FaultPlan::none();
  agents_.emplace_back(o);
  agent_index_[o.node_id] = index;
  schedule(at, Kind::kJoin, index);
}

void SimCluster::to_master(const json& message) {
  for (const auto& out : master_->on_node_message(over_the_wire(message), now())) to_node(out);
}

void SimCluster::to_node(const Master::Outbound& out) {
  const auto it = agent_index_.find(out.node_id);
  if (it == agent_index_.end()) return;
  NodeAgent& agent = agents_[it->second];
  if (agent.dead()) return;
  const json m = over_the_wire(out.message);
  const std::string type = m.at("type").get<std::string>();
  if (type == "RegisterAck") {
    agent.on_register_ack(m);
  } else if (type == "Assign") {
    TaskSpec task = agent.accept(m);
    const auto span = static_cast<std::uint64_t>((config_.task_max - config_.task_min).count());
    const Millis duration = config_.task_min + Millis{static_cast<long long>(rng_.below(span + 1))};
    schedule(now() + duration, Kind::kFinish, it->second, std::move(task));
  }
}

std::string SimCluster::submit(const std::string& yaml, std::uint64_t seed) {
  return master_->submit_recipe(yaml, seed, now());
}

bool SimCluster::step() {
  if (queue_.empty()) return false;
  Event e = queue_.top();
  queue_.pop();
  clock_.set(e.at);
  ++steps_;
  switch (e.kind) {
    case Kind::kTick:
      for (const auto& out : master_->tick(now())) to_node(out);
      schedule(now() + config_.tick_interval, Kind::kTick);
      break;
    case Kind::kJoin: {
      NodeAgent& agent = agents_[e.agent];
      to_master(agent.register_message());
      schedule(now() + config_.heartbeat_interval, Kind::kBeat, e.agent);
      break;
    }
    case Kind::kBeat: {
      NodeAgent& agent = agents_[e.agent];
      auto beat = agent.beat(now(), json{{"load", agent.load()}}.dump());
      if (!beat) {
        if (config_.replace_dead) start_node(now() + config_.replace_delay);
        break;
      }
      to_master(beat->heartbeat);
      to_master(protocol::log(beat->utilization.to_json()));
      schedule(now() + config_.heartbeat_interval, Kind::kBeat, e.agent);
      break;
    }
    case Kind::kFinish: {
      NodeAgent& agent = agents_[e.agent];
      if (agent.dead()) break;
      for (const auto& line : simulated_output(e.task.command)) {
        to_master(protocol::log(
            LogRecord{LogSource::kApplication, agent.id(), e.task.task_id, e.task.attempt, now(), line}
                .to_json()));
      }
      to_master(agent.finish(e.task, simulated_outcome(e.task.command)));
      break;
    }
  }
  return true;
}

bool SimCluster::all_terminal() const {
  const auto& s = master_->scheduler();
  for (const auto& id : s.workflow_ids()) {
    if (!is_terminal(s.workflow(id).phase)) return false;
  }
  return true;
}

bool SimCluster::run() {
  while (!all_terminal()) {
    if (now() > config_.time_limit || !step()) return false;
  }
  return true;
}

void SimCluster::crash_and_recover() {
  master_.reset();
  master_ = Master::recover(master_config_, store_, journal_);
}

std::size_t SimCluster::live_agents() const {
  return static_cast<std::size_t>(
      std::count_if(agents_.begin(), agents_.end(), [](const NodeAgent& a) { return !a.dead(); }));
}

int SimCluster::peak_node_load() const {
  int peak = 0;
  for (const auto& a : agents_) peak = std::max(peak, a.peak_load());
  return peak;
}

}  // namespace hyper
