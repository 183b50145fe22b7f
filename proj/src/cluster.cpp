#include "hyper/cluster.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdlib>

#include "hyper/chunkfs.hpp"
#include "hyper/error.hpp"

extern char** environ;

namespace hyper {
namespace {

constexpr std::array<std::string_view, 3> kSourceNames = {"Application", "Utilization", "System"};

std::string sanitize(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    if (c == '/' || c == '\\' || c == ':') c = '_';
  }
  return out;
}

}  // namespace

void FaultPlan::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "kill probability must be in [0, 1]");
  }
}

std::string_view to_string(LogSource source) { return kSourceNames[static_cast<std::size_t>(source)]; }

LogSource log_source_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == s) return static_cast<LogSource>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown log source '" + std::string(s) + "'");
}

json LogRecord::to_json() const {
  return {{"source", to_string(source)}, {"node_id", node_id}, {"task_id", task_id},
          {"attempt", attempt},          {"timestamp", timestamp.count()}, {"line", line}};
}

LogRecord LogRecord::from_json(const json& j) {
  LogRecord r;
  try {
    r.source = log_source_from_string(j.at("source").get<std::string>());
    r.node_id = j.at("node_id").get<std::string>();
    r.task_id = j.value("task_id", "");
    r.attempt = j.value("attempt", 0);
    r.timestamp = Millis{j.at("timestamp").get<long long>()};
    r.line = j.at("line").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kProtocol, std::string("bad log record: ") + e.what());
  }
  return r;
}

bool LogFilter::matches(const LogRecord& r) const {
  return (!node_id || r.node_id == *node_id) && (!task_id || r.task_id == *task_id) &&
         (!source || r.source == *source);
}

void LogStore::append(LogRecord record) {
  std::lock_guard lock(mu_);
  records_.push_back(std::move(record));
}

std::vector<LogRecord> LogStore::collect(const std::string& workflow_id, const LogFilter& filter,
                                         bool include_node_records) const {
  const std::string prefix = workflow_id + "/";
  std::vector<LogRecord> out;
  {
    std::lock_guard lock(mu_);
    for (const auto& r : records_) {
      const bool mine = r.task_id.empty() ? include_node_records : r.task_id.starts_with(prefix);
      if (mine && filter.matches(r)) out.push_back(r);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LogRecord& a, const LogRecord& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::vector<LogRecord> LogStore::all() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t LogStore::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::vector<LogRecord> merge_logs(const std::vector<std::vector<LogRecord>>& streams) {
  std::vector<LogRecord> out;
  for (const auto& s : streams) out.insert(out.end(), s.begin(), s.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const LogRecord& a, const LogRecord& b) { return a.timestamp < b.timestamp; });
  return out;
}

Outcome SubprocessRunner::run(const TaskSpec& task, const std::filesystem::path& workdir,
                              const LineSink& sink) {
  std::error_code ec;
  std::filesystem::create_directories(workdir, ec);
  if (ec) return Outcome::failure(kSpawnErrorExitCode);

  // Everything the child needs is prepared before fork.
  std::vector<std::string> env_storage;
  for (char** e = environ; *e != nullptr; ++e) {
    const std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (eq != std::string_view::npos && task.env.count(std::string(kv.substr(0, eq)))) continue;
    env_storage.emplace_back(kv);
  }
  for (const auto& [k, v] : task.env) env_storage.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_storage) envp.push_back(s.data());
  envp.push_back(nullptr);
  const std::string dir = workdir.string();
  const char* argv[] = {"sh", "-c", task.command.c_str(), nullptr};

  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) return Outcome::failure(kSpawnErrorExitCode);
  const int devnull = ::open("/dev/null", O_RDONLY | O_CLOEXEC);

  std::unique_lock lock(mu_);
  if (killed_) {
    ::close(fds[0]);
    ::close(fds[1]);
    if (devnull >= 0) ::close(devnull);
    return Outcome::failure(128 + SIGKILL);
  }
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::setpgid(0, 0);
    if (devnull >= 0) ::dup2(devnull, 0);
    ::dup2(fds[1], 1);
    ::dup2(fds[1], 2);
    if (::chdir(dir.c_str()) != 0) ::_exit(kSpawnErrorExitCode);
    ::execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
    ::_exit(kSpawnErrorExitCode);
  }
  ::close(fds[1]);
  if (devnull >= 0) ::close(devnull);
  if (pid < 0) {
    ::close(fds[0]);
    return Outcome::failure(kSpawnErrorExitCode);
  }
  ::setpgid(pid, pid);
  running_.insert(pid);
  lock.unlock();

  std::string pending;
  char buf[4096];
  for (;;) {
    const ssize_t n = ::read(fds[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    pending.append(buf, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
      sink(pending.substr(start, nl - start));
    }
    pending.erase(0, start);
  }
  if (!pending.empty()) sink(pending);
  ::close(fds[0]);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  lock.lock();
  running_.erase(pid);
  lock.unlock();
  if (WIFEXITED(status)) {
    const int code = WEXITSTATUS(status);
    return code == 0 ? Outcome::success() : Outcome::failure(code);
  }
  if (WIFSIGNALED(status)) return Outcome::failure(128 + WTERMSIG(status));
  return Outcome::failure(kSpawnErrorExitCode);
}

void SubprocessRunner::kill_all() {
  std::lock_guard lock(mu_);
  killed_ = true;
  for (const int pid : running_) ::kill(-pid, SIGKILL);
}

NodeAgent::NodeAgent(NodeOptions options)
    : options_(std::move(options)), fault_rng_(options_.fault.seed) {
  options_.fault.validate();
  if (options_.capacity < 1) throw Error(ErrorCode::kInvalidArgument, "capacity must be >= 1");
  if (options_.node_id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty node id");
}

json NodeAgent::register_message() const {
  return protocol::register_node(options_.node_id, options_.capacity, options_.spot,
                                 options_.profile);
}

void NodeAgent::on_register_ack(const json& ack) {
  protocol::validate(ack);
  if (ack.at("type") != "RegisterAck") {
    throw Error(ErrorCode::kProtocol, "expected RegisterAck, got " + ack.at("type").get<std::string>());
  }
  if (!ack.at("ok").get<bool>()) {
    throw Error(ErrorCode::kDuplicateNode, ack.at("reason").get<std::string>());
  }
}

std::optional<NodeAgent::Beat> NodeAgent::beat(Millis now, const std::string& utilization_line) {
  if (dead_) return std::nullopt;
  switch (options_.fault.mode) {
    case FaultPlan::Mode::kNone: break;
    case FaultPlan::Mode::kKillAt: dead_ = now >= options_.fault.kill_at; break;
    case FaultPlan::Mode::kKillWithProbability:
      dead_ = fault_rng_.chance(options_.fault.probability);
      break;
  }
  if (dead_) return std::nullopt;
  ++beat_seq_;
  LogRecord util{LogSource::kUtilization, options_.node_id, "", 0, now,
                 utilization_line.empty() ? utilization_sample(load()) : utilization_line};
  return Beat{protocol::heartbeat(options_.node_id, load(), beat_seq_), std::move(util)};
}

TaskSpec NodeAgent::accept(const json& assign) {
  protocol::validate(assign);
  if (load() >= options_.capacity) {
    throw Error(ErrorCode::kInvalidArgument,
                "node " + options_.node_id + " has no free slot for " +
                    assign.at("task_id").get<std::string>());
  }
  TaskSpec t;
  t.task_id = assign.at("task_id").get<std::string>();
  t.experiment = assign.at("experiment").get<std::string>();
  t.attempt = assign.at("attempt").get<int>();
  t.command = assign.at("command").get<std::string>();
  t.env = assign.at("env").get<std::map<std::string, std::string>>();
  running_.insert({t.task_id, t.attempt});
  peak_load_ = std::max(peak_load_, load());
  return t;
}

json NodeAgent::finish(const TaskSpec& task, const Outcome& outcome) {
  running_.erase({task.task_id, task.attempt});
  return protocol::result(task.task_id, options_.node_id, task.attempt, outcome);
}

std::string utilization_sample(int load) {
  rusage self{};
  rusage children{};
  getrusage(RUSAGE_SELF, &self);
  getrusage(RUSAGE_CHILDREN, &children);
  auto ms = [](const timeval& t) { return t.tv_sec * 1000LL + t.tv_usec / 1000; };
  const long long cpu = ms(self.ru_utime) + ms(self.ru_stime) + ms(children.ru_utime) +
                        ms(children.ru_stime);
  return json{{"load", load}, {"cpu_ms", cpu}, {"max_rss_kb", std::max(self.ru_maxrss, children.ru_maxrss)}}
      .dump();
}

NodeServer::NodeServer(Config config, std::shared_ptr<Channel> channel,
                       std::shared_ptr<TaskRunner> runner, const Clock& clock)
    : config_(std::move(config)),
      channel_(std::move(channel)),
      runner_(std::move(runner)),
      clock_(clock),
      agent_(config_.node) {}

NodeServer::~NodeServer() {
  stop();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
}

void NodeServer::send(const json& m) {
  if (killed_) return;
  try {
    channel_->send(m);
  } catch (const Error&) {
    // Connection loss is reported by the receive loop.
  }
}

void NodeServer::log(LogSource source, const std::string& task_id, int attempt,
                     const std::string& line) {
  send(protocol::log(LogRecord{source, agent_.id(), task_id, attempt, clock_.now(), line}.to_json()));
}

int NodeServer::peak_load() const {
  std::lock_guard lock(mu_);
  return agent_.peak_load();
}

void NodeServer::stop() { stopping_ = true; }

void NodeServer::run() {
  channel_->send(agent_.register_message());
  const auto ack = channel_->receive(Millis{10000});
  if (!ack) throw Error(ErrorCode::kTransport, "no registration reply from master");
  agent_.on_register_ack(*ack);

  std::thread beats([this] { heartbeat_loop(); });
  while (!stopping_ && !killed_) {
    auto m = channel_->receive(Millis{100});
    if (!m) {
      if (channel_->closed()) break;
      continue;
    }
    if (m->value("type", "") != "Assign") continue;
    std::lock_guard lock(mu_);
    if (killed_) break;
    TaskSpec task = agent_.accept(*m);
    workers_.emplace_back([this, task = std::move(task)]() mutable { execute(std::move(task)); });
  }
  stopping_ = true;
  beats.join();
  runner_->kill_all();
  for (auto& w : workers_) w.join();
  workers_.clear();
  channel_->close();
}

void NodeServer::heartbeat_loop() {
  auto next = std::chrono::steady_clock::now();
  while (!stopping_) {
    next += config_.heartbeat_interval;
    while (!stopping_ && std::chrono::steady_clock::now() < next) {
      std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
          Millis{20}, next - std::chrono::steady_clock::now()));
    }
    if (stopping_) return;
    std::optional<NodeAgent::Beat> beat;
    {
      std::lock_guard lock(mu_);
      beat = agent_.beat(clock_.now(), utilization_sample(agent_.load()));
      if (!beat) killed_ = true;
    }
    if (!beat) {
      // Spot termination: no goodbye, children die with the node.
      runner_->kill_all();
      if (config_.exit_process_on_kill) std::_Exit(137);
      channel_->close();
      return;
    }
    send(beat->heartbeat);
    send(protocol::log(beat->utilization.to_json()));
  }
}

std::filesystem::path NodeServer::dataset_root(const std::string& dataset) {
  std::lock_guard lock(dataset_mu_);
  if (const auto it = datasets_.find(dataset); it != datasets_.end()) return it->second;
  if (!config_.store) throw Error(ErrorCode::kNotFound, "node has no object store for datasets");
  const auto dest = config_.workdir / "datasets" / sanitize(dataset);
  std::filesystem::remove_all(dest);
  chunkfs::open_dataset(dataset, config_.store, 16)->materialize(dest);
  datasets_[dataset] = dest;
  return dest;
}

void NodeServer::execute(TaskSpec task) {
  const auto dir = config_.workdir / "tasks" / sanitize(task.task_id) /
                   ("attempt-" + std::to_string(task.attempt));
  log(LogSource::kSystem, task.task_id, task.attempt, "start attempt " + std::to_string(task.attempt));
  Outcome outcome = Outcome::failure(kSpawnErrorExitCode);
  try {
    if (const auto it = task.env.find("HYPER_DATASET"); it != task.env.end() && !it->second.empty()) {
      task.env["HYPER_DATASET_ROOT"] = dataset_root(it->second).string();
    }
    outcome = runner_->run(task, dir, [&](const std::string& line) {
      log(LogSource::kApplication, task.task_id, task.attempt, line);
    });
  } catch (const std::exception& e) {
    log(LogSource::kSystem, task.task_id, task.attempt, std::string("spawn failed: ") + e.what());
  }
  log(LogSource::kSystem, task.task_id, task.attempt,
      "exit " + std::to_string(outcome.exit_code));
  json result;
  {
    std::lock_guard lock(mu_);
    result = agent_.finish(task, outcome);
  }
  send(result);
}

}  // namespace hyper
