#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hyper/chunkfs.hpp"
#include "hyper/cluster.hpp"
#include "hyper/objectstore.hpp"
#include "hyper/scheduler.hpp"
#include "hyper/transport.hpp"

namespace hyper {

// Durable append-only home of the scheduler event log.
class EventJournal {
 public:
  virtual ~EventJournal() = default;
  virtual void append(const SchedulerEvent& event) = 0;
  virtual std::vector<SchedulerEvent> read_all() const = 0;
};

class MemoryJournal final : public EventJournal {
 public:
  void append(const SchedulerEvent& event) override;
  std::vector<SchedulerEvent> read_all() const override;

 private:
  mutable std::mutex mu_;
  std::vector<SchedulerEvent> events_;
};

// Newline-delimited JSON file, flushed per event. A torn final line left
// by a crash is dropped on read.
class FileJournal final : public EventJournal {
 public:
  explicit FileJournal(std::filesystem::path path);
  void append(const SchedulerEvent& event) override;
  std::vector<SchedulerEvent> read_all() const override;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::ofstream out_;
};

// In-memory key-value mirror of master state:
//   workflow/<id>  serialized workflow
//   nodes          node registry
//   log/offset     last applied event seq
class StateStore {
 public:
  void put(const std::string& key, std::string value) { kv_[key] = std::move(value); }
  std::optional<std::string> get(const std::string& key) const;
  std::vector<std::string> keys(std::string_view prefix = {}) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Snapshot object bytes: one line of canonical JSON, then
// "sha256:<hex digest of that line>\n". Throws CorruptSnapshot.
std::string encode_snapshot(const json& document);
json decode_snapshot(std::string_view bytes);

struct MasterConfig {
  SchedulerConfig scheduler;
  Millis snapshot_interval{10000};
  std::string state_bucket = "_master";
};

// Stable per-task summary used to compare runs: final state and every
// attempt's node, command and outcome.
json task_ledger(const Scheduler& scheduler);

// Control-plane core. Not thread-safe: one event loop owns it.
class Master {
 public:
  struct Outbound {
    std::string node_id;
    json message;
  };

  Master(MasterConfig config, std::shared_ptr<ObjectStore> store,
         std::shared_ptr<EventJournal> journal);
  // Latest snapshot in the store (if any) plus the journal suffix.
  // Throws CorruptSnapshot when the newest snapshot fails its digest.
  static std::unique_ptr<Master> recover(MasterConfig config, std::shared_ptr<ObjectStore> store,
                                         std::shared_ptr<EventJournal> journal);

  // Surfaces recipe errors unchanged; nothing is recorded on failure.
  std::string submit_recipe(std::string_view yaml, std::uint64_t seed, Millis now);
  WorkflowStatus get_status(const std::string& workflow_id) const;
  std::vector<LogRecord> get_logs(const std::string& workflow_id, const LogFilter& filter) const;
  chunkfs::UploadStats upload_dataset(const std::filesystem::path& root, const std::string& dataset,
                                      std::uint64_t chunk_target);
  ObjectKey snapshot(Millis now);

  std::vector<Outbound> on_node_message(const json& message, Millis now);
  // Liveness check, assignments and periodic snapshots.
  std::vector<Outbound> tick(Millis now);
  // Dispatches a client API request; errors become error responses.
  json handle_request(const json& request, Millis now);

  const Scheduler& scheduler() const { return scheduler_; }
  const StateStore& state() const { return state_; }
  LogStore& logs() { return logs_; }
  ObjectStore& store() { return *store_; }
  Millis last_snapshot_at() const { return last_snapshot_at_; }

 private:
  void attach_journal();
  void sync_state();

  MasterConfig config_;
  std::shared_ptr<ObjectStore> store_;
  std::shared_ptr<EventJournal> journal_;
  Scheduler scheduler_;
  StateStore state_;
  LogStore logs_;
  Millis last_snapshot_at_{0};
  std::set<std::string> dirty_;
};

// TCP front end: accepts node and client connections and feeds one event
// loop thread that owns the Master.
class MasterServer {
 public:
  MasterServer(std::unique_ptr<Master> master, const Endpoint& listen, const Clock& clock,
               Millis tick_interval = Millis{50});
  ~MasterServer();

  std::uint16_t port() const { return listener_.port(); }
  void start();
  void stop();
  // Blocks until stop() or a Shutdown request.
  void wait();
  bool running() const { return running_; }

 private:
  struct Inbound {
    std::size_t conn;
    std::optional<json> message;  // nullopt: connection closed
  };

  void accept_loop();
  void read_loop(std::size_t conn, std::shared_ptr<Channel> channel);
  void event_loop();
  void deliver(const std::vector<Master::Outbound>& out);
  void push(Inbound in);

  std::unique_ptr<Master> master_;
  TcpListener listener_;
  const Clock& clock_;
  Millis tick_interval_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::thread loop_;
  std::mutex readers_mu_;
  std::vector<std::thread> readers_;
  std::map<std::size_t, std::shared_ptr<Channel>> conns_;
  std::map<std::string, std::size_t> node_conn_;
  std::size_t next_conn_ = 0;
  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Inbound> queue_;
  std::mutex done_mu_;
  std::condition_variable done_cv_;
  bool done_ = false;
};

}  // namespace hyper
