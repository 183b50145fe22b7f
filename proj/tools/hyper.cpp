// hyper: command-line client, master, node and local cluster launcher.
//
// Exit codes: 0 ok, 1 workflow failed, 2 usage or validation error,
// 3 not found, 4 transport error.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "hyper/bench.hpp"
#include "hyper/chunkfs.hpp"
#include "hyper/cluster.hpp"
#include "hyper/error.hpp"
#include "hyper/master.hpp"
#include "hyper/recipe.hpp"
#include "hyper/sim.hpp"

namespace {

using namespace hyper;
using namespace std::chrono_literals;

constexpr int kExitOk = 0;
constexpr int kExitWorkflowFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNotFound = 3;
constexpr int kExitTransport = 4;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSyntax:
    case ErrorCode::kValidation:
    case ErrorCode::kEmptyDomain:
    case ErrorCode::kBadRange:
    case ErrorCode::kUnboundPlaceholder:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidKey:
    case ErrorCode::kDuplicateNode:
      return kExitUsage;
    case ErrorCode::kNotFound:
    case ErrorCode::kUnknownWorkflow:
    case ErrorCode::kFileNotInManifest:
      return kExitNotFound;
    case ErrorCode::kTransport:
    case ErrorCode::kStoreUnavailable:
      return kExitTransport;
    default:
      return kExitWorkflowFailed;
  }
}

int report(const Error& e) {
  std::cerr << "error: " << to_string(e.code());
  if (!e.path().empty() && !e.detail().starts_with(e.path())) std::cerr << " at " << e.path();
  std::cerr << ": " << e.detail() << "\n";
  return exit_code_for(e.code());
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : fallback;
}

Endpoint master_endpoint(const std::string& flag) {
  const std::string text = flag.empty() ? env_or("HYPER_MASTER", "127.0.0.1:7070") : flag;
  return parse_endpoint(text);
}

std::shared_ptr<ObjectStore> store_at(const std::string& flag) {
  const std::string root = flag.empty() ? env_or("HYPER_STORE_ROOT", "") : flag;
  if (root.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no object store: pass --store or set HYPER_STORE_ROOT");
  }
  return open_store(root);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json remote(const Endpoint& ep, const json& request) {
  return protocol::unwrap_response(call(ep, request));
}

void print_status(const WorkflowStatus& st, std::ostream& out) {
  out << "workflow " << st.workflow_id << "  phase " << to_string(st.phase) << "  live nodes "
      << st.live_nodes << "  events " << st.event_count << "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %8s %8s %8s %9s %7s %11s\n", "experiment", "Pending",
                "Assigned", "Running", "Succeeded", "Failed", "Rescheduled");
  out << line;
  for (const auto& [name, counts] : st.experiments) {
    auto c = [&](TaskState s) {
      const auto it = counts.find(s);
      return it == counts.end() ? std::size_t{0} : it->second;
    };
    std::snprintf(line, sizeof line, "%-20s %8zu %8zu %8zu %9zu %7zu %11zu\n", name.c_str(),
                  c(TaskState::kPending), c(TaskState::kAssigned), c(TaskState::kRunning),
                  c(TaskState::kSucceeded), c(TaskState::kFailed), c(TaskState::kRescheduled));
    out << line;
  }
}

// Polls until the workflow reaches a terminal phase.
int wait_for(const Endpoint& ep, const std::string& id, Millis poll) {
  std::string last;
  for (;;) {
    const auto st = WorkflowStatus::from_json(remote(ep, protocol::request("GetStatus", {{"workflow_id", id}})));
    std::ostringstream line;
    line << id << " " << to_string(st.phase) << " succeeded " << st.count(TaskState::kSucceeded)
         << "/" << st.total_tasks() << " live nodes " << st.live_nodes;
    if (line.str() != last) std::cerr << line.str() << "\n";
    last = line.str();
    if (st.phase == Phase::kMonitoringComplete) return kExitOk;
    if (st.phase == Phase::kFailed) return kExitWorkflowFailed;
    if (g_interrupted) return kExitWorkflowFailed;
    std::this_thread::sleep_for(poll);
  }
}

struct MasterFlags {
  std::string listen = "127.0.0.1:7070";
  std::string store;
  std::string journal;
  std::string port_file;
  int heartbeat_ms = 1000;
  int liveness_ms = 3000;
  int snapshot_ms = 10000;
  int max_attempts = 3;
};

MasterConfig master_config(const MasterFlags& f) {
  MasterConfig c;
  c.scheduler.heartbeat_interval = Millis{f.heartbeat_ms};
  c.scheduler.liveness_timeout = Millis{f.liveness_ms};
  c.scheduler.max_attempts_per_task = f.max_attempts;
  c.snapshot_interval = Millis{f.snapshot_ms};
  c.scheduler.validate();
  return c;
}

void write_port_file(const std::string& path, std::uint16_t port) {
  if (path.empty()) return;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    out << port << "\n";
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<MasterServer> start_master(const MasterFlags& f, const Clock& clock,
                                           std::shared_ptr<ObjectStore> store) {
  std::shared_ptr<EventJournal> journal;
  if (!f.journal.empty()) {
    journal = std::make_shared<FileJournal>(f.journal);
  } else if (!f.store.empty() || !env_or("HYPER_STORE_ROOT", "").empty()) {
    const std::string root = f.store.empty() ? env_or("HYPER_STORE_ROOT", "") : f.store;
    if (!root.starts_with("mem:")) journal = std::make_shared<FileJournal>(std::filesystem::path(root) / "_master-events.ndjson");
  }
  auto master = Master::recover(master_config(f), store, journal);
  auto server = std::make_unique<MasterServer>(std::move(master), parse_endpoint(f.listen), clock,
                                               Millis{std::max(5, f.heartbeat_ms / 10)});
  server->start();
  write_port_file(f.port_file, server->port());
  return server;
}

int cmd_master(const MasterFlags& f) {
  install_signal_handlers();
  SystemClock clock;
  std::shared_ptr<ObjectStore> store;
  const std::string root = f.store.empty() ? env_or("HYPER_STORE_ROOT", "") : f.store;
  store = root.empty() ? std::make_shared<MemoryStore>() : open_store(root);
  auto server = start_master(f, clock, store);
  std::cout << "master 127.0.0.1:" << server->port() << std::endl;
  while (server->running() && !g_interrupted) std::this_thread::sleep_for(50ms);
  server->stop();
  return kExitOk;
}

struct NodeFlags {
  std::string master;
  std::string id;
  int capacity = 1;
  std::string profile = "default";
  double kill_prob = 0.0;
  long long kill_at_ms = -1;
  std::uint64_t seed = 0;
  std::string workdir;
  std::string store;
  int heartbeat_ms = 1000;
  int connect_timeout_ms = 10000;
};

int cmd_node(const NodeFlags& f) {
  install_signal_handlers();
  SystemClock clock;
  NodeServer::Config c;
  c.node.node_id = f.id.empty() ? "node-" + std::to_string(::getpid()) : f.id;
  c.node.capacity = f.capacity;
  c.node.profile = f.profile;
  c.node.spot = f.kill_prob > 0 || f.kill_at_ms >= 0;
  if (f.kill_at_ms >= 0) {
    c.node.fault = FaultPlan::kill_at_time(clock.now() + Millis{f.kill_at_ms});
  } else if (f.kill_prob > 0) {
    c.node.fault = FaultPlan::kill_with_probability(f.kill_prob, f.seed);
  }
  c.node.fault.validate();
  c.heartbeat_interval = Millis{f.heartbeat_ms};
  c.workdir = f.workdir.empty() ? std::filesystem::temp_directory_path() / ("hyper-" + c.node.node_id)
                                : std::filesystem::path(f.workdir);
  const std::string root = f.store.empty() ? env_or("HYPER_STORE_ROOT", "") : f.store;
  if (!root.empty()) c.store = open_store(root);
  c.exit_process_on_kill = true;
  auto channel = connect_tcp_retry(master_endpoint(f.master), Millis{f.connect_timeout_ms});
  NodeServer node(c, channel, std::make_shared<SubprocessRunner>(), clock);
  std::thread watcher([&] {
    while (!g_interrupted && !node.killed()) std::this_thread::sleep_for(50ms);
    node.stop();
  });
  try {
    node.run();
  } catch (...) {
    g_interrupted = true;
    watcher.join();
    throw;
  }
  g_interrupted = true;
  watcher.join();
  return kExitOk;
}

int cmd_up(const std::string& recipe_path, std::uint64_t seed, bool wait, const std::string& master,
           int poll_ms) {
  install_signal_handlers();
  const std::string yaml = read_text(recipe_path);
  // Validate locally first so field paths reach the user even when no
  // master is running.
  const Recipe r = parse_recipe(yaml);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const Endpoint ep = master_endpoint(master);
  const json body = remote(ep, protocol::request("SubmitRecipe", {{"yaml", yaml}, {"seed", seed}}));
  const std::string id = body.at("workflow_id");
  std::cout << id << std::endl;
  if (!wait) return kExitOk;
  return wait_for(ep, id, Millis{poll_ms});
}

int cmd_status(const std::string& id, bool as_json, const std::string& master) {
  const json body = remote(master_endpoint(master), protocol::request("GetStatus", {{"workflow_id", id}}));
  if (as_json) {
    std::cout << body.dump() << "\n";
  } else {
    print_status(WorkflowStatus::from_json(body), std::cout);
  }
  return kExitOk;
}

int cmd_logs(const std::string& id, const std::string& task, const std::string& source,
             const std::string& node, bool as_json, const std::string& master) {
  json req = {{"workflow_id", id}};
  if (!task.empty()) req["task"] = task;
  if (!node.empty()) req["node"] = node;
  if (!source.empty()) req["source"] = std::string(to_string(log_source_from_string(source)));
  const json body = remote(master_endpoint(master), protocol::request("GetLogs", req));
  for (const auto& r : body.at("records")) {
    if (as_json) {
      std::cout << r.dump() << "\n";
    } else {
      const auto rec = LogRecord::from_json(r);
      std::cout << rec.timestamp.count() << " " << to_string(rec.source) << " " << rec.node_id
                << " " << (rec.task_id.empty() ? "-" : rec.task_id) << " " << rec.line << "\n";
    }
  }
  return kExitOk;
}

int cmd_data_put(const std::string& dir, const std::string& dataset, long long chunk_size,
                 const std::string& store_flag, bool as_json) {
  if (chunk_size < 1) throw Error(ErrorCode::kInvalidArgument, "--chunk-size must be >= 1");
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kNotFound, "no directory " + dir);
  auto store = store_at(store_flag);
  chunkfs::UploadStats stats;
  const auto manifest =
      chunkfs::upload_tree(dir, dataset, static_cast<std::uint64_t>(chunk_size), *store, &stats);
  const auto puts = stats.chunks_written + (stats.manifest_written ? 1 : 0);
  if (as_json) {
    std::cout << json{{"dataset", dataset},
                      {"files", manifest.files.size()},
                      {"chunks", manifest.chunks.size()},
                      {"bytes", manifest.total_bytes()},
                      {"chunks_written", stats.chunks_written},
                      {"chunks_skipped", stats.chunks_skipped},
                      {"manifest_written", stats.manifest_written},
                      {"puts", puts}}
                     .dump()
              << "\n";
  } else {
    std::cout << dataset << ": " << manifest.files.size() << " files, " << manifest.chunks.size()
              << " chunks, " << stats.chunks_written << " written, " << stats.chunks_skipped
              << " skipped\n";
  }
  return kExitOk;
}

int cmd_data_ls(const std::string& dataset, const std::string& store_flag, bool as_json) {
  auto store = store_at(store_flag);
  const auto handle = chunkfs::open_dataset(dataset, store, 1);
  const auto& m = handle->manifest();
  if (as_json) {
    json files = json::array();
    for (const auto& f : m.files) files.push_back({{"path", f.path}, {"size", f.size}});
    std::cout << json{{"dataset", dataset}, {"chunk_target", m.chunk_target},
                      {"chunks", m.chunks.size()}, {"files", files}}
                     .dump()
              << "\n";
  } else {
    for (const auto& f : m.files) std::cout << f.path << "\t" << f.size << "\n";
  }
  return kExitOk;
}

struct SimFlags {
  std::size_t nodes = 3;
  int capacity = 1;
  double kill_prob = 0.0;
  std::uint64_t seed = 1;
  std::string recipe;
  bool sim_clock = false;
  std::string event_log;
  std::string listen = "127.0.0.1:0";
  std::string port_file;
  int heartbeat_ms = 200;
  std::string store;
  std::string workdir;
  bool as_json = false;
};

int finish_sim_report(const WorkflowStatus& st, bool as_json) {
  if (as_json) {
    std::cout << st.to_json().dump() << "\n";
  } else {
    print_status(st, std::cout);
  }
  return st.phase == Phase::kMonitoringComplete ? kExitOk : kExitWorkflowFailed;
}

int cmd_sim_clock(const SimFlags& f) {
  if (f.recipe.empty()) throw Error(ErrorCode::kInvalidArgument, "--sim-clock needs --recipe");
  SimConfig c;
  c.nodes = f.nodes;
  c.capacity = f.capacity;
  c.kill_probability = f.kill_prob;
  c.seed = f.seed;
  c.heartbeat_interval = Millis{f.heartbeat_ms};
  c.liveness_timeout = Millis{f.heartbeat_ms * 3};
  c.tick_interval = Millis{std::max(1, f.heartbeat_ms / 4)};
  c.task_min = Millis{f.heartbeat_ms / 5};
  c.task_max = Millis{f.heartbeat_ms * 5 / 2};
  FaultPlan{FaultPlan::Mode::kKillWithProbability, {}, f.kill_prob, 0}.validate();
  SimCluster sim(c);
  const std::string id = sim.submit(read_text(f.recipe), f.seed);
  std::cerr << "workflow " << id << "\n";
  const bool finished = sim.run();
  if (!f.event_log.empty()) {
    std::ofstream out(f.event_log, std::ios::binary | std::ios::trunc);
    out << events_to_ndjson(sim.master().scheduler().events());
  }
  if (!finished) std::cerr << "simulation hit its time limit\n";
  return finish_sim_report(sim.master().get_status(id), f.as_json);
}

pid_t spawn_node(const SimFlags& f, std::uint16_t port, const std::string& id, std::size_t index,
                 const std::string& store_root) {
  std::vector<std::string> args = {"hyper", "node", "--master", "127.0.0.1:" + std::to_string(port),
                                   "--id", id, "--capacity", std::to_string(f.capacity),
                                   "--heartbeat-ms", std::to_string(f.heartbeat_ms)};
  if (f.kill_prob > 0) {
    args.insert(args.end(), {"--spot-kill-prob", std::to_string(f.kill_prob), "--seed",
                             std::to_string(derive_seed(f.seed, 1000 + index))});
  }
  if (!store_root.empty()) args.insert(args.end(), {"--store", store_root});
  if (!f.workdir.empty()) args.insert(args.end(), {"--workdir", (std::filesystem::path(f.workdir) / id).string()});
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::execv("/proc/self/exe", argv.data());
    ::_exit(127);
  }
  return pid;
}

int cmd_sim(const SimFlags& f) {
  if (f.nodes < 1 || f.capacity < 1) throw Error(ErrorCode::kInvalidArgument, "--nodes and --capacity must be >= 1");
  if (f.kill_prob < 0 || f.kill_prob > 1) throw Error(ErrorCode::kInvalidArgument, "--spot-kill-prob must be in [0, 1]");
  if (f.sim_clock) return cmd_sim_clock(f);
  install_signal_handlers();
  SystemClock clock;
  const std::string store_root = f.store.empty() ? env_or("HYPER_STORE_ROOT", "") : f.store;
  auto store = store_root.empty() ? std::make_shared<MemoryStore>() : open_store(store_root);
  MasterFlags mf;
  mf.listen = f.listen;
  mf.port_file = f.port_file;
  mf.heartbeat_ms = f.heartbeat_ms;
  mf.liveness_ms = f.heartbeat_ms * 3;
  mf.store = store_root;
  auto server = start_master(mf, clock, store);
  const std::uint16_t port = server->port();
  std::cout << "master 127.0.0.1:" << port << std::endl;

  std::map<pid_t, std::string> children;
  std::size_t started = 0;
  auto launch = [&] {
    const std::string id = "node-" + std::to_string(started);
    children[spawn_node(f, port, id, started, store_root)] = id;
    std::cout << "node " << id << std::endl;
    ++started;
  };
  for (std::size_t i = 0; i < f.nodes; ++i) launch();

  std::optional<std::string> workflow;
  if (!f.recipe.empty()) {
    const Endpoint ep{"127.0.0.1", port};
    const json body = remote(ep, protocol::request("SubmitRecipe", {{"yaml", read_text(f.recipe)}, {"seed", f.seed}}));
    workflow = body.at("workflow_id").get<std::string>();
    std::cout << "workflow " << *workflow << std::endl;
  }
  int rc = kExitOk;
  while (server->running() && !g_interrupted) {
    int status = 0;
    for (pid_t pid; (pid = ::waitpid(-1, &status, WNOHANG)) > 0;) {
      children.erase(pid);
      // Spot nodes that died are replaced under fresh ids.
      if (!g_interrupted && server->running()) launch();
    }
    if (workflow) {
      const auto st = WorkflowStatus::from_json(
          remote({"127.0.0.1", port}, protocol::request("GetStatus", {{"workflow_id", *workflow}})));
      if (is_terminal(st.phase)) {
        rc = finish_sim_report(st, f.as_json);
        break;
      }
    }
    std::this_thread::sleep_for(50ms);
  }
  for (const auto& [pid, id] : children) ::kill(pid, SIGTERM);
  for (const auto& [pid, id] : children) ::waitpid(pid, nullptr, 0);
  server->stop();
  return rc;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      const long long v = std::stoll(item);
      if (v < 1) throw std::out_of_range("non-positive");
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "bad list item '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyper: recipe-driven workflow orchestration with a chunked dataset layer"};
  app.require_subcommand(1);
  int rc = kExitOk;
  std::function<int()> action;

  MasterFlags mf;
  auto* master = app.add_subcommand("master", "Run the master service");
  master->add_option("--listen", mf.listen, "host:port to bind");
  master->add_option("--store", mf.store, "Object store root (default HYPER_STORE_ROOT, else memory)");
  master->add_option("--journal", mf.journal, "Event journal path");
  master->add_option("--port-file", mf.port_file, "Write the bound port here");
  master->add_option("--heartbeat-ms", mf.heartbeat_ms)->check(CLI::PositiveNumber);
  master->add_option("--liveness-ms", mf.liveness_ms)->check(CLI::PositiveNumber);
  master->add_option("--snapshot-ms", mf.snapshot_ms)->check(CLI::PositiveNumber);
  master->add_option("--max-attempts", mf.max_attempts)->check(CLI::PositiveNumber);
  master->callback([&] { action = [&] { return cmd_master(mf); }; });

  NodeFlags nf;
  auto* node = app.add_subcommand("node", "Run a worker node");
  node->add_option("--master", nf.master, "Master host:port (default HYPER_MASTER)");
  node->add_option("--id", nf.id, "Node id");
  node->add_option("--capacity", nf.capacity, "Concurrent task slots")->check(CLI::PositiveNumber);
  node->add_option("--profile", nf.profile, "Hardware profile label");
  node->add_option("--spot-kill-prob", nf.kill_prob, "Kill probability per heartbeat")->check(CLI::Range(0.0, 1.0));
  node->add_option("--kill-at-ms", nf.kill_at_ms, "Die this many ms after start");
  node->add_option("--seed", nf.seed, "Fault injector seed");
  node->add_option("--workdir", nf.workdir, "Task sandbox root");
  node->add_option("--store", nf.store, "Object store root for datasets (default HYPER_STORE_ROOT)");
  node->add_option("--heartbeat-ms", nf.heartbeat_ms)->check(CLI::PositiveNumber);
  node->add_option("--connect-timeout-ms", nf.connect_timeout_ms)->check(CLI::PositiveNumber);
  node->callback([&] { action = [&] { return cmd_node(nf); }; });

  std::string recipe_path, up_master;
  std::uint64_t up_seed = 0;
  bool up_wait = false;
  int poll_ms = 200;
  auto* up = app.add_subcommand("up", "Submit a recipe");
  up->add_option("recipe", recipe_path, "Recipe YAML file")->required();
  up->add_option("--seed", up_seed, "Sampling seed");
  up->add_flag("--wait", up_wait, "Wait for a terminal phase");
  up->add_option("--master", up_master, "Master host:port (default HYPER_MASTER)");
  up->add_option("--poll-ms", poll_ms)->check(CLI::PositiveNumber);
  up->callback([&] { action = [&] { return cmd_up(recipe_path, up_seed, up_wait, up_master, poll_ms); }; });

  std::string wf_id, q_master;
  bool as_json = false;
  auto* status = app.add_subcommand("status", "Show workflow status");
  status->add_option("workflow", wf_id)->required();
  status->add_flag("--json", as_json);
  status->add_option("--master", q_master);
  status->callback([&] { action = [&] { return cmd_status(wf_id, as_json, q_master); }; });

  std::string log_task, log_source, log_node;
  auto* logs = app.add_subcommand("logs", "Show workflow logs");
  logs->add_option("workflow", wf_id)->required();
  logs->add_option("--task", log_task);
  logs->add_option("--source", log_source)->check(CLI::IsMember({"Application", "Utilization", "System"}));
  logs->add_option("--node", log_node);
  logs->add_flag("--json", as_json, "One JSON record per line");
  logs->add_option("--master", q_master);
  logs->callback([&] { action = [&] { return cmd_logs(wf_id, log_task, log_source, log_node, as_json, q_master); }; });

  std::string data_dir, dataset, store_flag;
  long long chunk_size = static_cast<long long>(chunkfs::kDefaultChunkTarget);
  auto* data = app.add_subcommand("data", "Dataset upload and listing");
  data->require_subcommand(1);
  auto* put = data->add_subcommand("put", "Upload a directory");
  put->add_option("dir", data_dir)->required();
  put->add_option("dataset", dataset)->required();
  put->add_option("--chunk-size", chunk_size, "Chunk target in bytes");
  put->add_option("--store", store_flag);
  put->add_flag("--json", as_json);
  put->callback([&] { action = [&] { return cmd_data_put(data_dir, dataset, chunk_size, store_flag, as_json); }; });
  auto* ls = data->add_subcommand("ls", "List dataset files");
  ls->add_option("dataset", dataset)->required();
  ls->add_option("--store", store_flag);
  ls->add_flag("--json", as_json);
  ls->callback([&] { action = [&] { return cmd_data_ls(dataset, store_flag, as_json); }; });

  SimFlags sf;
  auto* sim = app.add_subcommand("sim", "Run a local cluster");
  sim->add_option("--nodes", sf.nodes, "Node count")->required();
  sim->add_option("--capacity", sf.capacity, "Slots per node")->required();
  sim->add_option("--spot-kill-prob", sf.kill_prob, "Kill probability per heartbeat");
  sim->add_option("--seed", sf.seed);
  sim->add_option("--recipe", sf.recipe, "Submit this recipe and exit when it finishes");
  sim->add_flag("--sim-clock", sf.sim_clock, "Discrete-event simulation, no processes");
  sim->add_option("--event-log", sf.event_log, "Write the event log (--sim-clock)");
  sim->add_option("--listen", sf.listen);
  sim->add_option("--port-file", sf.port_file);
  sim->add_option("--heartbeat-ms", sf.heartbeat_ms)->check(CLI::PositiveNumber);
  sim->add_option("--store", sf.store);
  sim->add_option("--workdir", sf.workdir);
  sim->add_flag("--json", sf.as_json, "Final status as JSON");
  sim->callback([&] { action = [&] { return cmd_sim(sf); }; });

  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  std::string chunk_list = "65536,262144,1048576", par_list = "1,2,4,10", depth_list = "0,2",
              compute_list = "25,0";
  double latency_ms = 10, bench_bw = 0;
  std::size_t max_parallel = 0, files = 100, file_size = 65536;
  bool csv = false;
  auto* bchunks = bench->add_subcommand("chunks", "Throughput by chunk size and parallelism");
  bchunks->add_option("--chunk-sizes", chunk_list);
  bchunks->add_option("--parallelism", par_list);
  bchunks->add_option("--latency-ms", latency_ms)->check(CLI::NonNegativeNumber);
  bchunks->add_option("--bandwidth", bench_bw, "Bytes/second, 0 = unlimited")->check(CLI::NonNegativeNumber);
  bchunks->add_option("--max-parallel", max_parallel);
  bchunks->add_option("--files", files)->check(CLI::PositiveNumber);
  bchunks->add_option("--file-size", file_size)->check(CLI::PositiveNumber);
  bchunks->add_flag("--csv", csv);
  bchunks->callback([&] {
    action = [&] {
      bench::ChunkBenchConfig c;
      c.chunk_targets = parse_u64_list(chunk_list);
      c.parallelism.clear();
      for (auto p : parse_u64_list(par_list)) c.parallelism.push_back(static_cast<int>(p));
      c.perf.get_latency = std::chrono::microseconds{static_cast<long long>(latency_ms * 1000)};
      c.perf.bandwidth = static_cast<std::uint64_t>(bench_bw);
      c.perf.max_parallel = max_parallel;
      c.files = files;
      c.file_size = file_size;
      const auto r = bench::bench_chunks(c);
      std::cout << (csv ? r.csv() : r.table());
      return kExitOk;
    };
  });
  auto* bstream = bench->add_subcommand("stream", "Streaming versus local training loop");
  std::uint64_t stream_chunk = 256 << 10;
  std::size_t stream_files = 40, stream_size = 64 << 10, stream_parallel = 1;
  double stream_latency = 20;
  bstream->add_option("--chunk-size", stream_chunk)->check(CLI::PositiveNumber);
  bstream->add_option("--files", stream_files)->check(CLI::PositiveNumber);
  bstream->add_option("--file-size", stream_size)->check(CLI::PositiveNumber);
  bstream->add_option("--latency-ms", stream_latency)->check(CLI::NonNegativeNumber);
  bstream->add_option("--bandwidth", bench_bw)->check(CLI::NonNegativeNumber);
  bstream->add_option("--max-parallel", stream_parallel);
  bstream->add_option("--compute-ms", compute_list, "Per-item compute times");
  bstream->add_option("--depths", depth_list, "Prefetch depths");
  bstream->add_flag("--csv", csv);
  bstream->callback([&] {
    action = [&] {
      bench::StreamBenchConfig c;
      c.chunk_target = stream_chunk;
      c.files = stream_files;
      c.file_size = stream_size;
      c.perf.get_latency = std::chrono::microseconds{static_cast<long long>(stream_latency * 1000)};
      c.perf.bandwidth = static_cast<std::uint64_t>(bench_bw);
      c.perf.max_parallel = stream_parallel;
      c.compute_ms.clear();
      std::stringstream ss(compute_list);
      for (std::string item; std::getline(ss, item, ',');) c.compute_ms.push_back(std::stod(item));
      c.prefetch_depths.clear();
      std::stringstream ds(depth_list);
      for (std::string item; std::getline(ds, item, ',');) c.prefetch_depths.push_back(std::stoi(item));
      const auto r = bench::bench_stream_vs_local(c);
      std::cout << (csv ? r.csv() : r.table());
      return kExitOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  try {
    rc = action ? action() : kExitUsage;
  } catch (const Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitWorkflowFailed;
  }
  return rc;
}
