#include "hyper/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "hyper/error.hpp"

namespace hyper {
namespace {

[[noreturn]] void transport_error(const std::string& what) {
  throw Error(ErrorCode::kTransport, what + ": " + std::strerror(errno));
}

class MemoryChannel final : public Channel {
 public:
  struct Queue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> frames;
    bool closed = false;
  };

  MemoryChannel(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~MemoryChannel() override { close(); }

  void send(const json& message) override {
    protocol::validate(message);
    std::string frame = protocol::encode_frame(message);
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw Error(ErrorCode::kTransport, "channel closed");
    out_->frames.push_back(std::move(frame));
    out_->cv.notify_one();
  }

  std::optional<json> receive(std::optional<Millis> timeout) override {
    std::unique_lock lock(in_->mu);
    auto ready = [&] { return !in_->frames.empty() || in_->closed; };
    if (timeout) {
      if (!in_->cv.wait_for(lock, *timeout, ready)) return std::nullopt;
    } else {
      in_->cv.wait(lock, ready);
    }
    if (in_->frames.empty()) return std::nullopt;
    protocol::FrameDecoder decoder;
    decoder.feed(in_->frames.front());
    in_->frames.pop_front();
    return decoder.next();
  }

  void close() override {
    for (const auto& q : {in_, out_}) {
      std::lock_guard lock(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

  bool closed() const override {
    std::lock_guard lock(in_->mu);
    return in_->closed && in_->frames.empty();
  }

 private:
  std::shared_ptr<Queue> in_;
  std::shared_ptr<Queue> out_;
};

sockaddr_in resolve(const Endpoint& endpoint) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(endpoint.port);
  if (inet_pton(AF_INET, endpoint.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(endpoint.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kTransport, "cannot resolve host " + endpoint.host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

}  // namespace

std::pair<std::shared_ptr<Channel>, std::shared_ptr<Channel>> make_memory_channel_pair() {
  auto a = std::make_shared<MemoryChannel::Queue>();
  auto b = std::make_shared<MemoryChannel::Queue>();
  return {std::make_shared<MemoryChannel>(a, b), std::make_shared<MemoryChannel>(b, a)};
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint '" + text + "' is not host:port");
  }
  Endpoint e;
  if (colon > 0) e.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    e.port = static_cast<std::uint16_t>(p);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in endpoint '" + text + "'");
  }
  return e;
}

SocketChannel::SocketChannel(int fd) : fd_(fd) {
  const int one = 1;
  setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

SocketChannel::~SocketChannel() {
  close();
  ::close(fd_);
}

void SocketChannel::send(const json& message) {
  protocol::validate(message);
  const std::string frame = protocol::encode_frame(message);
  std::lock_guard lock(send_mu_);
  if (closed_) throw Error(ErrorCode::kTransport, "channel closed");
  std::size_t off = 0;
  while (off < frame.size()) {
    const ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      closed_ = true;
      transport_error("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<json> SocketChannel::receive(std::optional<Millis> timeout) {
  using SteadyClock = std::chrono::steady_clock;
  const auto deadline = timeout ? SteadyClock::now() + *timeout : SteadyClock::time_point::max();
  char buf[64 * 1024];
  for (;;) {
    if (auto m = decoder_.next()) return m;
    if (closed_) return std::nullopt;
    int wait_ms = -1;
    if (timeout) {
      const auto left = std::chrono::duration_cast<Millis>(deadline - SteadyClock::now()).count();
      if (left <= 0) return std::nullopt;
      wait_ms = static_cast<int>(std::min<long long>(left, 200));
    } else {
      wait_ms = 200;
    }
    pollfd pfd{fd_, POLLIN, 0};
    const int r = ::poll(&pfd, 1, wait_ms);
    if (r < 0) {
      if (errno == EINTR) continue;
      transport_error("poll");
    }
    if (r == 0) continue;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      closed_ = true;
      return std::nullopt;
    }
    if (n == 0) {
      closed_ = true;
      return decoder_.next();
    }
    decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

void SocketChannel::close() {
  if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
}

bool SocketChannel::closed() const { return closed_; }

std::shared_ptr<Channel> connect_tcp(const Endpoint& endpoint) {
  const sockaddr_in addr = resolve(endpoint);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) transport_error("socket");
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int saved = errno;
    ::close(fd);
    errno = saved;
    transport_error("connect to " + endpoint.str());
  }
  return std::make_shared<SocketChannel>(fd);
}

std::shared_ptr<Channel> connect_tcp_retry(const Endpoint& endpoint, Millis deadline,
                                           Millis max_delay) {
  const auto start = std::chrono::steady_clock::now();
  Millis delay{20};
  for (;;) {
    try {
      return connect_tcp(endpoint);
    } catch (const Error&) {
      if (std::chrono::steady_clock::now() - start + delay > deadline) throw;
    }
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, max_delay);
  }
}

TcpListener::TcpListener(const Endpoint& endpoint) {
  sockaddr_in addr = resolve(endpoint);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) transport_error("socket");
  const int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int saved = errno;
    ::close(fd_);
    errno = saved;
    transport_error("bind " + endpoint.str());
  }
  if (::listen(fd_, 128) != 0) transport_error("listen");
  socklen_t len = sizeof addr;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  close();
  ::close(fd_);
}

std::shared_ptr<Channel> TcpListener::accept(Millis timeout) {
  if (closed_) return nullptr;
  pollfd pfd{fd_, POLLIN, 0};
  const int r = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (r <= 0 || closed_) return nullptr;
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) return nullptr;
  return std::make_shared<SocketChannel>(fd);
}

void TcpListener::close() {
  if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
}

json call(const Endpoint& endpoint, const json& request, Millis timeout) {
  auto ch = connect_tcp(endpoint);
  ch->send(request);
  auto response = ch->receive(timeout);
  if (!response) throw Error(ErrorCode::kTransport, "no response from " + endpoint.str());
  return *response;
}

}  // namespace hyper
