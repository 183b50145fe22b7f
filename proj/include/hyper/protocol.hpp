#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "hyper/error.hpp"
#include "hyper/workflow.hpp"

// Wire format shared by node <-> master and client <-> master traffic.
// A frame is a 4-byte big-endian payload length followed by that many
// bytes of compact UTF-8 JSON; every payload is an object whose "type"
// field names the message.
namespace hyper::protocol {

constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

std::string encode_frame(const json& message);

// Incremental decoder; feed arbitrary byte slices, pop whole messages.
class FrameDecoder {
 public:
  void feed(std::string_view bytes);
  // Throws Protocol on an oversized frame or a payload that is not a
  // JSON object.
  std::optional<json> next();
  std::size_t buffered() const { return buffer_.size() - pos_; }

 private:
  std::string buffer_;
  std::size_t pos_ = 0;
};

// Checks the type tag and the presence and JSON type of required fields.
// Throws Protocol.
void validate(const json& message);

json register_node(const std::string& node_id, int capacity, bool spot,
                   const std::string& profile);
json register_ack(bool ok, const std::string& reason = {});
json heartbeat(const std::string& node_id, int load, std::uint64_t seq);
json assign(const std::string& task_id, const std::string& experiment, int attempt,
            const std::string& command, const std::map<std::string, std::string>& env);
json result(const std::string& task_id, const std::string& node_id, int attempt,
            const Outcome& outcome);
json log(const json& record);

// Client API. Requests carry their arguments as top-level fields.
json request(std::string_view type, json fields = json::object());
json ok_response(json body = json::object());
json error_response(const Error& error);
// Returns the body of an ok response, rethrows the Error of a failed one.
json unwrap_response(const json& response);

}  // namespace hyper::protocol
