#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "hyper/clock.hpp"
#include "hyper/protocol.hpp"

namespace hyper {

// Bidirectional, ordered message pipe. send() is safe to call from several
// threads; receive() from one.
class Channel {
 public:
  virtual ~Channel() = default;
  // Validates the message; throws Transport once the channel is closed.
  virtual void send(const json& message) = 0;
  // Blocks until a message arrives, the timeout passes, or the peer closes.
  // Returns nullopt on timeout or close; check closed() to tell them apart.
  virtual std::optional<json> receive(std::optional<Millis> timeout = std::nullopt) = 0;
  virtual void close() = 0;
  virtual bool closed() const = 0;
};

// Two connected in-process endpoints. Messages go through the same frame
// encoding as the socket transport.
std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_memory_channel_pair();

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

// "host:port" or ":port". Throws InvalidArgument.
Endpoint parse_endpoint(const std::string& text);

class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd);
  ~SocketChannel() override;
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;

  void send(const json& message) override;
  std::optional<json> receive(std::optional<Millis> timeout = std::nullopt) override;
  void close() override;
  bool closed() const override;

 private:
  int fd_;
  mutable std::mutex send_mu_;
  protocol::FrameDecoder decoder_;
  std::atomic<bool> closed_{false};
};

// Throws Transport when the connection cannot be made.
std::shared_ptr<Channel> connect_tcp(const Endpoint& endpoint);
// Retries with exponential backoff (capped at `max_delay`) until `deadline`
// has elapsed.
std::shared_ptr<Channel> connect_tcp_retry(const Endpoint& endpoint, Millis deadline,
                                           Millis max_delay = Millis{1000});

class TcpListener {
 public:
  // Port 0 picks a free port.
  explicit TcpListener(const Endpoint& endpoint);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  // nullptr on timeout or after close().
  std::shared_ptr<Channel> accept(Millis timeout);
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> closed_{false};
};

// One request, one response, over a fresh connection.
json call(const Endpoint& endpoint, const json& request, Millis timeout = Millis{30000});

}  // namespace hyper
