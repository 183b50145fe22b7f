#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <queue>
#include <string>
#include <vector>

#include "hyper/clock.hpp"
#include "hyper/cluster.hpp"
#include "hyper/master.hpp"

namespace hyper {

struct SimConfig {
  std::size_t nodes = 8;
  int capacity = 1;
  double kill_probability = 0.0;
  std::uint64_t seed = 1;
  Millis heartbeat_interval{100};
  Millis liveness_timeout{300};
  Millis tick_interval{25};
  int max_attempts = 3;
  Millis snapshot_interval{1000};
  // Task durations are uniform in [task_min, task_max].
  Millis task_min{20};
  Millis task_max{250};
  // A killed node is replaced by a fresh node id after replace_delay.
  bool replace_dead = true;
  Millis replace_delay{50};
  Millis time_limit{24 * 3600 * 1000};
};

// Deterministic outcome of a simulated command: "exit N" and "false" fail,
// everything else succeeds. "echo X" prints X.
Outcome simulated_outcome(const std::string& command);
std::vector<std::string> simulated_output(const std::string& command);

// Discrete-event cluster on a simulated clock: one Master and a pool of
// NodeAgents exchanging wire-encoded messages in virtual time. Identical
// config and seed give identical event logs.
class SimCluster {
 public:
  explicit SimCluster(SimConfig config, std::shared_ptr<ObjectStore> store = nullptr,
                      std::shared_ptr<EventJournal> journal = nullptr);

  std::string submit(const std::string& yaml, std::uint64_t seed);
  // Processes one pending event; false when nothing is pending.
  bool step();
  // Runs until every workflow is terminal; false when the time limit hit.
  bool run();
  // Drops the master and rebuilds it from the store and journal.
  void crash_and_recover();

  Millis now() const { return clock_.now(); }
  Master& master() { return *master_; }
  const SimConfig& config() const { return config_; }
  std::size_t nodes_started() const { return agents_.size(); }
  std::size_t live_agents() const;
  // Largest concurrent load any node observed.
  int peak_node_load() const;
  std::uint64_t steps() const { return steps_; }
  bool all_terminal() const;

 private:
  enum class Kind { kTick, kBeat, kFinish, kJoin };
  struct Event {
    Millis at;
    std::uint64_t order;
    Kind kind;
    std::size_t agent;
    TaskSpec task;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.order > b.order;
    }
  };

  void schedule(Millis at, Kind kind, std::size_t agent = 0, TaskSpec task = {});
  void start_node(Millis at);
  void to_master(const json& message);
  void to_node(const Master::Outbound& out);

  SimConfig config_;
  SimClock clock_;
  std::shared_ptr<ObjectStore> store_;
  std::shared_ptr<EventJournal> journal_;
  MasterConfig master_config_;
  std::unique_ptr<Master> master_;
  std::vector<NodeAgent> agents_;
  std::map<std::string, std::size_t> agent_index_;
  Xoshiro256 rng_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t order_ = 0;
  std::uint64_t steps_ = 0;
};

}  // namespace hyper
