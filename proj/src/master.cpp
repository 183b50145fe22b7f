#include "hyper/master.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "hyper/digest.hpp"
#include "hyper/error.hpp"
#include "hyper/recipe.hpp"

namespace hyper {
namespace {

std::string snapshot_name(std::uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snapshots/%020llu", static_cast<unsigned long long>(seq));
  return buf;
}

// Workflows touched by an event. Node-level events can change task states
// of every workflow.
std::optional<std::string> event_workflow(const SchedulerEvent& e) {
  if (e.kind == EventKind::kWorkflowSubmitted) return e.payload.at("workflow").at("id").get<std::string>();
  if (const auto it = e.payload.find("workflow"); it != e.payload.end() && it->is_string()) {
    return it->get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

void MemoryJournal::append(const SchedulerEvent& event) {
  std::lock_guard lock(mu_);
  events_.push_back(event);
}

std::vector<SchedulerEvent> MemoryJournal::read_all() const {
  std::lock_guard lock(mu_);
  return events_;
}

FileJournal::FileJournal(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  // Drop a torn tail so appends start on a line boundary.
  if (std::filesystem::exists(path_)) {
    const auto events = read_all();
    std::ofstream rewrite(path_, std::ios::binary | std::ios::trunc);
    rewrite << events_to_ndjson(events);
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::kIo, "cannot open journal " + path_.string());
}

void FileJournal::append(const SchedulerEvent& event) {
  std::lock_guard lock(mu_);
  out_ << event.to_json().dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::kIo, "journal write failed: " + path_.string());
}

std::vector<SchedulerEvent> FileJournal::read_all() const {
  std::lock_guard lock(mu_);
  std::ifstream in(path_, std::ios::binary);
  std::vector<SchedulerEvent> events;
  std::string line;
  while (std::getline(in, line)) {
    if (in.eof()) break;  // no trailing newline: torn write
    if (line.empty()) continue;
    events.push_back(SchedulerEvent::from_json(json::parse(line)));
  }
  return events;
}

std::optional<std::string> StateStore::get(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> StateStore::keys(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_) {
    if (k.starts_with(prefix)) out.push_back(k);
  }
  return out;
}

std::string encode_snapshot(const json& document) {
  const std::string body = document.dump();
  return body + "\nsha256:" + sha256_hex(body) + "\n";
}

json decode_snapshot(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw Error(ErrorCode::kCorruptSnapshot, "missing digest trailer");
  const std::string_view body = bytes.substr(0, nl);
  const std::string expected = "sha256:" + sha256_hex(body) + "\n";
  if (bytes.substr(nl + 1) != expected) throw Error(ErrorCode::kCorruptSnapshot, "digest mismatch");
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || doc.value("format", 0) != 1) {
    throw Error(ErrorCode::kCorruptSnapshot, "unreadable snapshot body");
  }
  return doc;
}

json task_ledger(const Scheduler& scheduler) {
  json ledger = json::object();
  for (const auto& id : scheduler.workflow_ids()) {
    for (const auto& e : scheduler.workflow(id).experiments) {
      for (const auto& t : e.tasks) {
        json attempts = json::array();
        for (const auto& a : t.attempts) {
          attempts.push_back({{"number", a.number},
                              {"node", a.node_id},
                              {"outcome", a.outcome ? to_json(*a.outcome) : json(nullptr)}});
        }
        ledger[t.id] = {{"state", to_string(t.state)}, {"command", t.command}, {"attempts", attempts}};
      }
    }
  }
  return ledger;
}

Master::Master(MasterConfig config, std::shared_ptr<ObjectStore> store,
               std::shared_ptr<EventJournal> journal)
    : config_(std::move(config)),
      store_(store ? std::move(store) : std::make_shared<MemoryStore>()),
      journal_(journal ? std::move(journal) : std::make_shared<MemoryJournal>()),
      scheduler_(config_.scheduler) {
  attach_journal();
}

void Master::attach_journal() {
  scheduler_.set_event_listener([this](const SchedulerEvent& e) {
    journal_->append(e);
    if (const auto wf = event_workflow(e)) {
      dirty_.insert(*wf);
    } else {
      for (const auto& id : scheduler_.workflow_ids()) dirty_.insert(id);
    }
    dirty_.insert("");
  });
}

std::unique_ptr<Master> Master::recover(MasterConfig config, std::shared_ptr<ObjectStore> store,
                                        std::shared_ptr<EventJournal> journal) {
  auto m = std::make_unique<Master>(config, store, journal);
  const auto events = m->journal_->read_all();
  const auto snaps = m->store_->list(config.state_bucket, "snapshots/");
  if (snaps.empty()) {
    m->scheduler_ = Scheduler::replay(config.scheduler, events);
  } else {
    const json doc = decode_snapshot(as_string_view(m->store_->get(snaps.back())));
    m->scheduler_ = Scheduler::restore(doc.at("scheduler"), events);
    m->last_snapshot_at_ = Millis{doc.at("taken_at").get<long long>()};
  }
  m->attach_journal();
  for (const auto& id : m->scheduler_.workflow_ids()) m->dirty_.insert(id);
  m->dirty_.insert("");
  m->sync_state();
  return m;
}

void Master::sync_state() {
  for (const auto& id : dirty_) {
    if (!id.empty()) state_.put("workflow/" + id, to_json(scheduler_.workflow(id)).dump());
  }
  if (dirty_.count("")) {
    json nodes = json::array();
    for (const auto& [id, n] : scheduler_.nodes()) {
      nodes.push_back({{"id", id}, {"state", to_string(n.state)}, {"capacity", n.capacity},
                       {"load", n.load}});
    }
    state_.put("nodes", nodes.dump());
    state_.put("log/offset", std::to_string(scheduler_.last_seq()));
  }
  dirty_.clear();
}

std::string Master::submit_recipe(std::string_view yaml, std::uint64_t seed, Millis now) {
  const Recipe recipe = parse_recipe(yaml);
  const std::string id = "wf-" + std::to_string(scheduler_.workflow_ids().size() + 1);
  scheduler_.submit(build_workflow(recipe, seed, id), now);
  sync_state();
  return id;
}

WorkflowStatus Master::get_status(const std::string& workflow_id) const {
  return scheduler_.status(workflow_id);
}

std::vector<LogRecord> Master::get_logs(const std::string& workflow_id, const LogFilter& filter) const {
  if (!scheduler_.has_workflow(workflow_id)) {
    throw Error(ErrorCode::kUnknownWorkflow, "no workflow " + workflow_id);
  }
  return logs_.collect(workflow_id, filter);
}

chunkfs::UploadStats Master::upload_dataset(const std::filesystem::path& root,
                                            const std::string& dataset, std::uint64_t chunk_target) {
  chunkfs::UploadStats stats;
  chunkfs::upload_tree(root, dataset, chunk_target, *store_, &stats);
  return stats;
}

ObjectKey Master::snapshot(Millis now) {
  sync_state();
  const json doc = {{"format", 1},
                    {"seq", scheduler_.last_seq()},
                    {"taken_at", now.count()},
                    {"scheduler", scheduler_.snapshot()},
                    {"kv", state_.entries()}};
  const ObjectKey key{config_.state_bucket, snapshot_name(scheduler_.last_seq())};
  store_->put(key, to_bytes(encode_snapshot(doc)));
  last_snapshot_at_ = now;
  return key;
}

std::vector<Master::Outbound> Master::on_node_message(const json& message, Millis now) {
  protocol::validate(message);
  const std::string type = message.at("type").get<std::string>();
  std::vector<Outbound> out;
  if (type == "Register") {
    NodeRecord n;
    n.id = message.at("node_id").get<std::string>();
    n.capacity = message.at("capacity").get<int>();
    n.profile = message.at("profile").get<std::string>();
    n.spot = message.at("spot").get<bool>();
    try {
      scheduler_.node_joined(n, now);
      out.push_back({n.id, protocol::register_ack(true)});
    } catch (const Error& e) {
      out.push_back({n.id, protocol::register_ack(false, e.detail())});
    }
  } else if (type == "Heartbeat") {
    scheduler_.heartbeat(message.at("node_id").get<std::string>(), message.at("load").get<int>(),
                         message.at("seq").get<std::uint64_t>(), now);
  } else if (type == "Result") {
    scheduler_.on_task_finished(message.at("task_id").get<std::string>(),
                                message.at("node_id").get<std::string>(),
                                message.at("attempt").get<int>(),
                                outcome_from_json(message.at("outcome")), now);
  } else if (type == "Log") {
    logs_.append(LogRecord::from_json(message.at("record")));
  } else {
    throw Error(ErrorCode::kProtocol, "unexpected node message " + type);
  }
  return out;
}

std::vector<Master::Outbound> Master::tick(Millis now) {
  scheduler_.check_liveness(now);
  std::vector<Outbound> out;
  for (const auto& a : scheduler_.next_assignments(now)) {
    std::map<std::string, std::string> env = {{"HYPER_TASK_ID", a.task_id},
                                              {"HYPER_EXPERIMENT", a.experiment},
                                              {"HYPER_WORKFLOW_ID", a.workflow_id},
                                              {"HYPER_ATTEMPT", std::to_string(a.attempt)}};
    for (const auto& e : scheduler_.workflow(a.workflow_id).experiments) {
      if (e.name == a.experiment && !e.spec.dataset.empty()) env["HYPER_DATASET"] = e.spec.dataset;
    }
    out.push_back({a.node_id, protocol::assign(a.task_id, a.experiment, a.attempt, a.command, env)});
  }
  if (now - last_snapshot_at_ >= config_.snapshot_interval) snapshot(now);
  sync_state();
  return out;
}

json Master::handle_request(const json& request, Millis now) {
  try {
    protocol::validate(request);
    const std::string type = request.at("type").get<std::string>();
    if (type == "SubmitRecipe") {
      const auto yaml = request.at("yaml").get<std::string>();
      const auto warnings = parse_recipe(yaml).warnings;
      const auto id = submit_recipe(yaml, request.at("seed").get<std::uint64_t>(), now);
      return protocol::ok_response({{"workflow_id", id}, {"warnings", warnings}});
    }
    if (type == "GetStatus") {
      return protocol::ok_response(get_status(request.at("workflow_id").get<std::string>()).to_json());
    }
    if (type == "GetLogs") {
      LogFilter f;
      if (request.contains("task")) f.task_id = request.at("task").get<std::string>();
      if (request.contains("node")) f.node_id = request.at("node").get<std::string>();
      if (request.contains("source")) {
        f.source = log_source_from_string(request.at("source").get<std::string>());
      }
      json records = json::array();
      for (const auto& r : get_logs(request.at("workflow_id").get<std::string>(), f)) {
        records.push_back(r.to_json());
      }
      return protocol::ok_response({{"records", records}});
    }
    if (type == "UploadDataset") {
      const auto target = request.at("chunk_target").get<std::int64_t>();
      if (target < 1) throw Error(ErrorCode::kInvalidArgument, "chunk_target must be >= 1");
      const auto stats = upload_dataset(request.at("path").get<std::string>(),
                                        request.at("dataset").get<std::string>(),
                                        static_cast<std::uint64_t>(target));
      return protocol::ok_response({{"chunks_written", stats.chunks_written},
                                    {"chunks_skipped", stats.chunks_skipped},
                                    {"manifest_written", stats.manifest_written}});
    }
    if (type == "Snapshot") {
      const ObjectKey key = snapshot(now);
      return protocol::ok_response({{"key", key.str()}, {"seq", scheduler_.last_seq()}});
    }
    if (type == "ListNodes") {
      json nodes = json::array();
      for (const auto& [id, n] : scheduler_.nodes()) {
        nodes.push_back({{"id", id}, {"state", to_string(n.state)}, {"capacity", n.capacity},
                         {"load", n.load}, {"spot", n.spot}});
      }
      return protocol::ok_response({{"nodes", nodes}, {"live", scheduler_.live_node_count()}});
    }
    if (type == "ListWorkflows") {
      return protocol::ok_response({{"workflows", scheduler_.workflow_ids()}});
    }
    throw Error(ErrorCode::kProtocol, "unsupported request " + type);
  } catch (const Error& e) {
    return protocol::error_response(e);
  } catch (const std::exception& e) {
    return protocol::error_response(Error(ErrorCode::kProtocol, e.what()));
  }
}

MasterServer::MasterServer(std::unique_ptr<Master> master, const Endpoint& listen,
                           const Clock& clock, Millis tick_interval)
    : master_(std::move(master)), listener_(listen), clock_(clock), tick_interval_(tick_interval) {}

MasterServer::~MasterServer() { stop(); }

void MasterServer::start() {
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  loop_ = std::thread([this] { event_loop(); });
}

void MasterServer::stop() {
  running_ = false;
  listener_.close();
  queue_cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  if (loop_.joinable()) loop_.join();
  std::vector<std::thread> readers;
  {
    std::lock_guard lock(readers_mu_);
    for (auto& [id, ch] : conns_) ch->close();
    readers.swap(readers_);
  }
  for (auto& r : readers) r.join();
  std::lock_guard lock(done_mu_);
  done_ = true;
  done_cv_.notify_all();
}

void MasterServer::wait() {
  {
    std::unique_lock lock(done_mu_);
    done_cv_.wait(lock, [&] { return done_ || !running_; });
  }
  stop();
}

void MasterServer::push(Inbound in) {
  std::lock_guard lock(queue_mu_);
  queue_.push_back(std::move(in));
  queue_cv_.notify_one();
}

void MasterServer::accept_loop() {
  while (running_) {
    auto ch = listener_.accept(Millis{100});
    if (!ch) continue;
    std::lock_guard lock(readers_mu_);
    const std::size_t id = next_conn_++;
    conns_[id] = ch;
    readers_.emplace_back([this, id, ch] { read_loop(id, ch); });
  }
}

void MasterServer::read_loop(std::size_t conn, std::shared_ptr<Channel> channel) {
  while (running_) {
    std::optional<json> m;
    try {
      m = channel->receive(Millis{100});
    } catch (const Error&) {
      channel->close();
    }
    if (m) {
      push({conn, std::move(m)});
    } else if (channel->closed()) {
      break;
    }
  }
  push({conn, std::nullopt});
}

void MasterServer::deliver(const std::vector<Master::Outbound>& out) {
  for (const auto& o : out) {
    const auto it = node_conn_.find(o.node_id);
    if (it == node_conn_.end()) continue;
    std::shared_ptr<Channel> ch;
    {
      std::lock_guard lock(readers_mu_);
      if (const auto c = conns_.find(it->second); c != conns_.end()) ch = c->second;
    }
    if (!ch) continue;
    try {
      ch->send(o.message);
    } catch (const Error&) {
      // The node's heartbeats will stop and liveness takes over.
    }
  }
}

void MasterServer::event_loop() {
  auto next_tick = std::chrono::steady_clock::now();
  while (running_) {
    std::deque<Inbound> batch;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait_until(lock, next_tick, [&] { return !queue_.empty() || !running_; });
      batch.swap(queue_);
    }
    for (auto& in : batch) {
      std::shared_ptr<Channel> ch;
      {
        std::lock_guard lock(readers_mu_);
        if (const auto c = conns_.find(in.conn); c != conns_.end()) ch = c->second;
        if (!in.message) conns_.erase(in.conn);
      }
      if (!in.message) {
        std::erase_if(node_conn_, [&](const auto& kv) { return kv.second == in.conn; });
        continue;
      }
      const json& m = *in.message;
      const std::string type = m.value("type", "");
      const Millis now = clock_.now();
      try {
        if (type == "Register" || type == "Heartbeat" || type == "Result" || type == "Log") {
          const auto out = master_->on_node_message(m, now);
          if (type == "Register" && !out.empty()) {
            if (out[0].message.at("ok").get<bool>()) node_conn_[out[0].node_id] = in.conn;
            if (ch) ch->send(out[0].message);
          }
        } else if (type == "Shutdown") {
          if (ch) ch->send(protocol::ok_response());
          running_ = false;
        } else if (ch) {
          ch->send(master_->handle_request(m, now));
        }
      } catch (const Error& e) {
        if (ch && type != "Heartbeat" && type != "Log" && type != "Result") {
          try {
            ch->send(protocol::error_response(e));
          } catch (const Error&) {
          }
        }
      }
    }
    if (std::chrono::steady_clock::now() >= next_tick) {
      deliver(master_->tick(clock_.now()));
      next_tick = std::chrono::steady_clock::now() + tick_interval_;
    }
  }
  listener_.close();
  std::lock_guard lock(done_mu_);
  done_ = true;
  done_cv_.notify_all();
}

}  // namespace hyper
