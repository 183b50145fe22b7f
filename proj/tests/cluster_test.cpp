#include "hyper/cluster.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "hyper/chunkfs.hpp"
#include "hyper/error.hpp"
#include "test_util.hpp"

namespace hyper {
namespace {

using namespace std::chrono_literals;
using testing::TempDir;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(Framing, BigEndianLengthPrefix) {
  const json m = protocol::heartbeat("n1", 2, 7);
  const std::string frame = protocol::encode_frame(m);
  const std::string payload = R"({"load":2,"node_id":"n1","seq":7,"type":"Heartbeat"})";
  ASSERT_EQ(frame.size(), 4 + payload.size());
  EXPECT_EQ(static_cast<unsigned char>(frame[0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(frame[1]), 0);
  EXPECT_EQ(static_cast<unsigned char>(frame[2]), 0);
  EXPECT_EQ(static_cast<unsigned char>(frame[3]), payload.size());
  EXPECT_EQ(frame.substr(4), payload);
}

TEST(Framing, DecoderHandlesArbitrarySplits) {
  Xoshiro256 gen(5);
  std::vector<json> sent;
  std::string stream;
  for (int i = 0; i < 50; ++i) {
    json m = protocol::log(LogRecord{LogSource::kApplication, "n", "wf/A/0", 1, Millis{i},
                                     std::string(gen.below(300), 'x')}
                               .to_json());
    stream += protocol::encode_frame(m);
    sent.push_back(m);
  }
  protocol::FrameDecoder d;
  std::vector<json> got;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::min<std::size_t>(1 + gen.below(40), stream.size() - pos);
    d.feed(std::string_view(stream).substr(pos, n));
    pos += n;
    while (auto m = d.next()) got.push_back(*m);
  }
  EXPECT_EQ(got, sent);
  EXPECT_EQ(d.buffered(), 0u);
}

TEST(Framing, RejectsOversizedAndNonObjectFrames) {
  protocol::FrameDecoder d;
  d.feed(std::string("\x7f\xff\xff\xff", 4));
  EXPECT_EQ(code_of([&] { d.next(); }), ErrorCode::kProtocol);
  protocol::FrameDecoder d2;
  d2.feed(std::string("\0\0\0\x02[]", 6));
  EXPECT_EQ(code_of([&] { d2.next(); }), ErrorCode::kProtocol);
}

TEST(Messages, ValidateChecksRequiredFields) {
  EXPECT_NO_THROW(protocol::validate(protocol::register_node("n1", 2, true, "gpu")));
  EXPECT_NO_THROW(protocol::validate(protocol::result("t", "n", 1, Outcome::failure(3))));
  json m = protocol::heartbeat("n1", 0, 1);
  m.erase("seq");
  EXPECT_EQ(code_of([&] { protocol::validate(m); }), ErrorCode::kProtocol);
  m = protocol::heartbeat("n1", 0, 1);
  m["load"] = "zero";
  EXPECT_EQ(code_of([&] { protocol::validate(m); }), ErrorCode::kProtocol);
  EXPECT_EQ(code_of([&] { protocol::validate(json{{"type", "Bogus"}}); }), ErrorCode::kProtocol);
}

TEST(Messages, ErrorResponseRoundTrip) {
  const json r = protocol::error_response(Error(ErrorCode::kValidation, "bad", "experiments.A"));
  try {
    protocol::unwrap_response(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
    EXPECT_EQ(e.detail(), "bad");
    EXPECT_EQ(e.path(), "experiments.A");
  }
  EXPECT_EQ(protocol::unwrap_response(protocol::ok_response({{"x", 1}}))["x"], 1);
}

TEST(MemoryChannel, OrderedAndClosable) {
  auto [a, b] = make_memory_channel_pair();
  for (int i = 0; i < 10; ++i) a->send(protocol::heartbeat("n", 0, i));
  for (int i = 0; i < 10; ++i) EXPECT_EQ((*b->receive(10ms))["seq"], i);
  EXPECT_FALSE(b->receive(5ms));
  EXPECT_FALSE(b->closed());
  a->close();
  EXPECT_FALSE(b->receive(5ms));
  EXPECT_TRUE(b->closed());
  EXPECT_EQ(code_of([&] { b->send(protocol::heartbeat("n", 0, 0)); }), ErrorCode::kTransport);
}

TEST(SocketChannel, ExchangesMessagesBothWays) {
  TcpListener listener(parse_endpoint("127.0.0.1:0"));
  ASSERT_GT(listener.port(), 0);
  std::shared_ptr<Channel> server;
  std::thread t([&] { server = listener.accept(2000ms); });
  auto client = connect_tcp({"127.0.0.1", listener.port()});
  t.join();
  ASSERT_TRUE(server);
  const std::string big(1 << 20, 'z');
  client->send(protocol::log(LogRecord{LogSource::kSystem, "n", "", 0, 5ms, big}.to_json()));
  const auto got = server->receive(2000ms);
  ASSERT_TRUE(got);
  EXPECT_EQ(LogRecord::from_json(got->at("record")).line, big);
  server->send(protocol::register_ack(false, "dup"));
  EXPECT_EQ((*client->receive(2000ms))["reason"], "dup");
  client->close();
  EXPECT_FALSE(server->receive(2000ms));
  EXPECT_TRUE(server->closed());
}

TEST(SocketChannel, UnreachableIsTransportError) {
  std::uint16_t port;
  {
    TcpListener l(parse_endpoint(":0"));
    port = l.port();
  }
  EXPECT_EQ(code_of([&] { connect_tcp({"127.0.0.1", port}); }), ErrorCode::kTransport);
  EXPECT_EQ(code_of([&] { connect_tcp_retry({"127.0.0.1", port}, 100ms, 20ms); }),
            ErrorCode::kTransport);
  EXPECT_EQ(code_of([] { parse_endpoint("nohostport"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { parse_endpoint("h:99999"); }), ErrorCode::kInvalidArgument);
}

NodeAgent agent(const std::string& id, FaultPlan plan, int capacity = 1) {
  NodeOptions o;
  o.node_id = id;
  o.capacity = capacity;
  o.fault = plan;
  return NodeAgent(o);
}

TEST(FaultPlan, ZeroAndOneProbability) {
  auto never = agent("a", FaultPlan::kill_with_probability(0.0, 1));
  for (int i = 0; i < 1000; ++i) ASSERT_TRUE(never.beat(Millis{i}));
  auto always = agent("b", FaultPlan::kill_with_probability(1.0, 1));
  EXPECT_FALSE(always.beat(0ms));
  EXPECT_TRUE(always.dead());
  EXPECT_FALSE(always.beat(1ms));
  EXPECT_THROW(agent("c", FaultPlan::kill_with_probability(1.5, 1)), Error);
}

TEST(FaultPlan, KillAtStopsHeartbeats) {
  auto a = agent("a", FaultPlan::kill_at_time(350ms));
  int beats = 0;
  for (Millis t{100}; t <= 1000ms; t += 100ms) beats += a.beat(t) ? 1 : 0;
  EXPECT_EQ(beats, 3);
}

TEST(FaultPlan, SurvivorsFollowGeometricDecay) {
  constexpr int kNodes = 100;
  constexpr double kP = 0.05;
  std::vector<NodeAgent> nodes;
  for (int i = 0; i < kNodes; ++i) {
    nodes.push_back(agent("n" + std::to_string(i), FaultPlan::kill_with_probability(kP, derive_seed(99, i))));
  }
  for (int k = 1; k <= 40; ++k) {
    int alive = 0;
    for (auto& n : nodes) alive += n.beat(Millis{k}) ? 1 : 0;
    if (k % 5 == 0) {
      const double q = std::pow(1 - kP, k);
      const double mean = kNodes * q;
      const double sd = std::sqrt(kNodes * q * (1 - q));
      EXPECT_LE(std::abs(alive - mean), 4 * sd + 0.5) << "after " << k << " beats";
    }
  }
}

TEST(NodeAgent, EnforcesCapacity) {
  auto a = agent("a", FaultPlan::none(), 2);
  a.accept(protocol::assign("t1", "E", 1, "true", {}));
  a.accept(protocol::assign("t2", "E", 1, "true", {}));
  EXPECT_EQ(code_of([&] { a.accept(protocol::assign("t3", "E", 1, "true", {})); }),
            ErrorCode::kInvalidArgument);
  const json r = a.finish({"t1", "E", 1, "true", {}}, Outcome::failure(4));
  EXPECT_EQ(r["outcome"]["code"], 4);
  EXPECT_EQ(a.load(), 1);
  EXPECT_EQ(a.peak_load(), 2);
  const auto beat = a.beat(5ms);
  ASSERT_TRUE(beat);
  EXPECT_EQ(beat->heartbeat["load"], 1);
  EXPECT_EQ(beat->utilization.source, LogSource::kUtilization);
}

TEST(NodeAgent, RejectedRegistrationIsDuplicateNode) {
  auto a = agent("a", FaultPlan::none());
  EXPECT_EQ(code_of([&] { a.on_register_ack(protocol::register_ack(false, "taken")); }),
            ErrorCode::kDuplicateNode);
  EXPECT_NO_THROW(a.on_register_ack(protocol::register_ack(true)));
}

struct Captured {
  Outcome outcome;
  std::vector<std::string> lines;
};

Captured run_cmd(const std::string& cmd, const std::filesystem::path& dir,
                 std::map<std::string, std::string> env = {}) {
  SubprocessRunner r;
  Captured c;
  c.outcome = r.run({"wf/E/0", "E", 1, cmd, std::move(env)}, dir,
                    [&](const std::string& line) { c.lines.push_back(line); });
  return c;
}

TEST(SubprocessRunner, ExitCodesPropagate) {
  TempDir tmp;
  EXPECT_TRUE(run_cmd("true", tmp.path()).outcome.ok());
  EXPECT_EQ(run_cmd("exit 3", tmp.path()).outcome, Outcome::failure(3));
  EXPECT_EQ(run_cmd("no-such-binary-xyz", tmp.path()).outcome, Outcome::failure(127));
  EXPECT_EQ(run_cmd("kill -9 $$", tmp.path()).outcome, Outcome::failure(128 + 9));
}

TEST(SubprocessRunner, CapturesLinesEnvAndWorkdir) {
  TempDir tmp;
  const auto c = run_cmd("echo one; echo two >&2; printf 'three'; pwd; echo $HYPER_TASK_ID",
                         tmp.path() / "sandbox", {{"HYPER_TASK_ID", "wf/E/0"}});
  ASSERT_TRUE(c.outcome.ok());
  ASSERT_EQ(c.lines.size(), 4u);
  EXPECT_EQ(c.lines[0], "one");
  EXPECT_EQ(c.lines[1], "two");
  EXPECT_EQ(c.lines[2], "three" + std::filesystem::canonical(tmp.path() / "sandbox").string());
  EXPECT_EQ(c.lines[3], "wf/E/0");
}

TEST(SubprocessRunner, UnusableWorkdirIsSpawnError) {
  TempDir tmp;
  testing::write_file(tmp.path() / "file", {1});
  EXPECT_EQ(run_cmd("true", tmp.path() / "file" / "sub").outcome, Outcome::failure(kSpawnErrorExitCode));
}

TEST(SubprocessRunner, KillAllTerminatesProcessGroup) {
  TempDir tmp;
  SubprocessRunner r;
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  std::thread t([&] { out = r.run({"t", "E", 1, "sleep 30 & sleep 30", {}}, tmp.path(), [](const std::string&) {}); });
  std::this_thread::sleep_for(200ms);
  r.kill_all();
  t.join();
  EXPECT_EQ(out, Outcome::failure(128 + 9));
  EXPECT_LT(testing::elapsed_ms(start), 5000);
}

TEST(Logs, MergeFollowsGlobalTimestampOrder) {
  std::vector<LogRecord> a, b;
  for (int t : {1, 4, 4, 9}) a.push_back({LogSource::kApplication, "n1", "wf/E/0", 1, Millis{t}, "a" + std::to_string(t)});
  for (int t : {0, 4, 5}) b.push_back({LogSource::kApplication, "n2", "wf/E/1", 1, Millis{t}, "b" + std::to_string(t)});
  const auto m = merge_logs({a, b});
  std::vector<std::string> lines;
  for (const auto& r : m) lines.push_back(r.line);
  EXPECT_EQ(lines, (std::vector<std::string>{"b0", "a1", "a4", "a4", "b4", "b5", "a9"}));
}

TEST(Logs, CollectScopesAndFilters) {
  LogStore s;
  s.append({LogSource::kApplication, "n1", "wf-1/E/0", 1, 5ms, "x"});
  s.append({LogSource::kUtilization, "n1", "", 0, 3ms, "{\"load\":1}"});
  s.append({LogSource::kApplication, "n2", "wf-2/E/0", 1, 1ms, "other"});
  s.append({LogSource::kSystem, "n2", "wf-1/E/1", 1, 5ms, "exit 0"});
  const auto all = s.collect("wf-1", {});
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].source, LogSource::kUtilization);
  LogFilter util;
  util.source = LogSource::kUtilization;
  EXPECT_EQ(s.collect("wf-1", util).size(), 1u);
  LogFilter task;
  task.task_id = "wf-1/E/1";
  const auto t = s.collect("wf-1", task);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].line, "exit 0");
  EXPECT_EQ(LogRecord::from_json(all[1].to_json()), all[1]);
}

// Plays the master's side of the protocol on the other end of a channel.
struct FakeMaster {
  std::shared_ptr<Channel> ch;
  std::vector<json> received;

  json expect(const std::string& type, Millis timeout = 5000ms) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      auto m = ch->receive(50ms);
      if (!m) continue;
      received.push_back(*m);
      if ((*m)["type"] == type) return *m;
    }
    ADD_FAILURE() << "no " << type << " message";
    return {};
  }
};

struct RunningNode {
  SystemClock clock;
  std::unique_ptr<NodeServer> server;
  std::thread thread;
  std::exception_ptr error;

  RunningNode(NodeServer::Config cfg, std::shared_ptr<Channel> ch) {
    server = std::make_unique<NodeServer>(std::move(cfg), std::move(ch),
                                          std::make_shared<SubprocessRunner>(), clock);
    thread = std::thread([this] {
      try {
        server->run();
      } catch (...) {
        error = std::current_exception();
      }
    });
  }
  ~RunningNode() {
    server->stop();
    thread.join();
  }
};

TEST(NodeServer, RegistersRunsTasksAndReports) {
  TempDir tmp;
  auto [master_end, node_end] = make_memory_channel_pair();
  NodeServer::Config cfg;
  cfg.node.node_id = "n1";
  cfg.node.capacity = 2;
  cfg.heartbeat_interval = 50ms;
  cfg.workdir = tmp.path();
  FakeMaster m{master_end, {}};
  RunningNode node(cfg, node_end);
  const json reg = m.expect("Register");
  EXPECT_EQ(reg["capacity"], 2);
  m.ch->send(protocol::register_ack(true));
  m.expect("Heartbeat");
  m.ch->send(protocol::assign("wf/E/0", "E", 1, "echo a; echo b; echo c", {{"HYPER_TASK_ID", "wf/E/0"}}));
  m.ch->send(protocol::assign("wf/E/1", "E", 2, "exit 5", {}));
  std::map<std::string, json> results;
  while (results.size() < 2) {
    const json r = m.expect("Result");
    results[r["task_id"]] = r;
  }
  EXPECT_EQ(results["wf/E/0"]["outcome"]["kind"], "Success");
  EXPECT_EQ(results["wf/E/1"]["outcome"]["code"], 5);
  EXPECT_EQ(results["wf/E/1"]["attempt"], 2);
  std::vector<std::string> app;
  for (const auto& msg : m.received) {
    if (msg["type"] != "Log") continue;
    const auto r = LogRecord::from_json(msg["record"]);
    if (r.source == LogSource::kApplication && r.task_id == "wf/E/0") app.push_back(r.line);
  }
  EXPECT_EQ(app, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_LE(node.server->peak_load(), 2);
}

TEST(NodeServer, KillAtGoesSilent) {
  TempDir tmp;
  auto [master_end, node_end] = make_memory_channel_pair();
  NodeServer::Config cfg;
  cfg.node.node_id = "spot";
  cfg.node.fault = FaultPlan::kill_at_time(SystemClock().now() + 150ms);
  cfg.heartbeat_interval = 40ms;
  cfg.workdir = tmp.path();
  FakeMaster m{master_end, {}};
  RunningNode node(cfg, node_end);
  m.expect("Register");
  m.ch->send(protocol::register_ack(true));
  m.ch->send(protocol::assign("wf/E/0", "E", 1, "sleep 30", {}));
  const auto start = std::chrono::steady_clock::now();
  while (!m.ch->closed() && testing::elapsed_ms(start) < 5000) {
    if (auto msg = m.ch->receive(20ms)) m.received.push_back(*msg);
  }
  EXPECT_TRUE(node.server->killed());
  int beats = 0;
  for (const auto& msg : m.received) {
    beats += msg["type"] == "Heartbeat" ? 1 : 0;
    EXPECT_NE(msg["type"], "Result");
  }
  EXPECT_GE(beats, 1);
  EXPECT_LE(beats, 4);
}

TEST(NodeServer, DuplicateRegistrationSurfaces) {
  TempDir tmp;
  auto [master_end, node_end] = make_memory_channel_pair();
  NodeServer::Config cfg;
  cfg.node.node_id = "dup";
  cfg.workdir = tmp.path();
  FakeMaster m{master_end, {}};
  RunningNode node(cfg, node_end);
  m.expect("Register");
  m.ch->send(protocol::register_ack(false, "node id dup already registered"));
  node.thread.join();
  node.thread = std::thread([] {});
  ASSERT_TRUE(node.error);
  try {
    std::rethrow_exception(node.error);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateNode);
  }
}

TEST(NodeServer, TaskReadsDatasetThroughHyperDatasetRoot) {
  TempDir tmp;
  Xoshiro256 gen(21);
  const auto files = testing::write_random_tree(tmp.path() / "src", gen, 12, 5000);
  auto store = std::make_shared<DiskStore>(tmp.path() / "store");
  chunkfs::upload_tree(tmp.path() / "src", "images", 4096, *store);

  auto [master_end, node_end] = make_memory_channel_pair();
  NodeServer::Config cfg;
  cfg.node.node_id = "n1";
  cfg.workdir = tmp.path() / "node";
  cfg.store = store;
  FakeMaster m{master_end, {}};
  RunningNode node(cfg, node_end);
  m.expect("Register");
  m.ch->send(protocol::register_ack(true));
  std::string cmd = "set -e";
  for (const auto& [rel, data] : files) {
    cmd += "; cmp \"$HYPER_DATASET_ROOT/" + rel + "\" \"" + (tmp.path() / "src" / rel).string() + "\"";
  }
  cmd += "; echo verified";
  m.ch->send(protocol::assign("wf/E/0", "E", 1, cmd, {{"HYPER_DATASET", "images"}}));
  const json r = m.expect("Result");
  EXPECT_EQ(r["outcome"]["kind"], "Success") << r.dump();
}

}  // namespace
}  // namespace hyper
