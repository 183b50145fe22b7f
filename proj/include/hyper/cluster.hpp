#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hyper/clock.hpp"
#include "hyper/objectstore.hpp"
#include "hyper/rng.hpp"
#include "hyper/transport.hpp"
#include "hyper/workflow.hpp"

namespace hyper {

// Spot-termination injector, consulted once per heartbeat.
struct FaultPlan {
  enum class Mode { kNone, kKillAt, kKillWithProbability };
  Mode mode = Mode::kNone;
  Millis kill_at{0};
  double probability = 0.0;
  std::uint64_t seed = 0;

  static FaultPlan none() { return {}; }
  static FaultPlan kill_at_time(Millis t) { return {Mode::kKillAt, t, 0.0, 0}; }
  static FaultPlan kill_with_probability(double p, std::uint64_t seed) {
    return {Mode::kKillWithProbability, Millis{0}, p, seed};
  }
  // Throws InvalidArgument unless 0 <= p <= 1.
  void validate() const;
};

enum class LogSource { kApplication, kUtilization, kSystem };
std::string_view to_string(LogSource source);
LogSource log_source_from_string(std::string_view s);

struct LogRecord {
  LogSource source = LogSource::kApplication;
  std::string node_id;
  std::string task_id;  // empty for node-level records
  int attempt = 0;
  Millis timestamp{0};
  std::string line;

  json to_json() const;
  static LogRecord from_json(const json& j);
  bool operator==(const LogRecord&) const = default;
};

struct LogFilter {
  std::optional<std::string> node_id;
  std::optional<std::string> task_id;
  std::optional<LogSource> source;

  bool matches(const LogRecord& r) const;
};

// Thread-safe sink for records arriving from all nodes.
class LogStore {
 public:
  void append(LogRecord record);
  // Records whose task belongs to `workflow_id`, plus node-level records
  // when `include_node_records`; ordered by timestamp, ties by arrival.
  std::vector<LogRecord> collect(const std::string& workflow_id, const LogFilter& filter,
                                 bool include_node_records = true) const;
  std::vector<LogRecord> all() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<LogRecord> records_;
};

// Ordered merge of per-source record lists by (timestamp, list index,
// position within list).
std::vector<LogRecord> merge_logs(const std::vector<std::vector<LogRecord>>& streams);

struct TaskSpec {
  std::string task_id;
  std::string experiment;
  int attempt = 1;
  std::string command;
  std::map<std::string, std::string> env;
};

// Called once per captured output line.
using LineSink = std::function<void(const std::string& line)>;

class TaskRunner {
 public:
  virtual ~TaskRunner() = default;
  // Runs to completion; never throws for program failures.
  virtual Outcome run(const TaskSpec& task, const std::filesystem::path& workdir,
                      const LineSink& sink) = 0;
  // Abruptly terminates everything this runner has started.
  virtual void kill_all() {}
};

// `/bin/sh -c <command>` in its own process group, with the task env added
// to the inherited environment. stdout and stderr are captured line by
// line. A process killed by signal s reports Failure(128 + s); a failed
// spawn reports Failure(kSpawnErrorExitCode).
class SubprocessRunner final : public TaskRunner {
 public:
  Outcome run(const TaskSpec& task, const std::filesystem::path& workdir,
              const LineSink& sink) override;
  void kill_all() override;

 private:
  std::mutex mu_;
  std::set<int> running_;
  bool killed_ = false;
};

struct NodeOptions {
  std::string node_id;
  int capacity = 1;
  std::string profile = "default";
  bool spot = false;
  FaultPlan fault;
};

// Node-side protocol state shared by real and simulated nodes. Holds no
// threads and reads no clock.
class NodeAgent {
 public:
  explicit NodeAgent(NodeOptions options);

  const NodeOptions& options() const { return options_; }
  const std::string& id() const { return options_.node_id; }
  json register_message() const;
  // Throws DuplicateNode when the master rejected the registration.
  void on_register_ack(const json& ack);

  struct Beat {
    json heartbeat;
    LogRecord utilization;
  };
  // Consults the fault plan first; returns nullopt and marks the node dead
  // when it fires.
  std::optional<Beat> beat(Millis now, const std::string& utilization_line = {});
  bool dead() const { return dead_; }
  std::uint64_t beats() const { return beat_seq_; }

  // Throws InvalidArgument when the node has no free slot.
  TaskSpec accept(const json& assign);
  // Frees the slot and builds the Result message.
  json finish(const TaskSpec& task, const Outcome& outcome);
  int load() const { return static_cast<int>(running_.size()); }
  int peak_load() const { return peak_load_; }

 private:
  NodeOptions options_;
  Xoshiro256 fault_rng_;
  std::uint64_t beat_seq_ = 0;
  bool dead_ = false;
  std::set<std::pair<std::string, int>> running_;
  int peak_load_ = 0;
};

// Real node: talks to the master over a channel, runs tasks on threads
// (one per slot) and heartbeats on its own thread.
class NodeServer {
 public:
  struct Config {
    NodeOptions node;
    Millis heartbeat_interval{1000};
    std::filesystem::path workdir;
    // Used to materialize HYPER_DATASET into HYPER_DATASET_ROOT; may be null.
    std::shared_ptr<ObjectStore> store;
    // When the fault plan fires: true exits the process immediately,
    // false kills children, drops the connection and returns from run().
    bool exit_process_on_kill = false;
  };

  NodeServer(Config config, std::shared_ptr<Channel> channel, std::shared_ptr<TaskRunner> runner,
             const Clock& clock);
  ~NodeServer();

  // Registers, then serves until the channel closes, stop() is called or
  // the fault plan fires. Throws DuplicateNode when registration fails.
  void run();
  void stop();
  bool killed() const { return killed_; }
  int peak_load() const;

 private:
  void heartbeat_loop();
  void execute(TaskSpec task);
  std::filesystem::path dataset_root(const std::string& dataset);
  void send(const json& m);
  void log(LogSource source, const std::string& task_id, int attempt, const std::string& line);

  Config config_;
  std::shared_ptr<Channel> channel_;
  std::shared_ptr<TaskRunner> runner_;
  const Clock& clock_;
  mutable std::mutex mu_;
  NodeAgent agent_;
  std::map<std::string, std::filesystem::path> datasets_;
  std::mutex dataset_mu_;
  std::vector<std::thread> workers_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> killed_{false};
};

std::string utilization_sample(int load);

}  // namespace hyper
