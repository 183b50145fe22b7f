#include "hyper/protocol.hpp"

#include <array>
#include <utility>

#include "hyper/error.hpp"

namespace hyper::protocol {
namespace {

using Kind = json::value_t;

struct Field {
  std::string_view name;
  std::initializer_list<Kind> kinds;
};

constexpr std::initializer_list<Kind> kString = {Kind::string};
constexpr std::initializer_list<Kind> kInt = {Kind::number_integer, Kind::number_unsigned};
constexpr std::initializer_list<Kind> kBool = {Kind::boolean};
constexpr std::initializer_list<Kind> kObject = {Kind::object};

const std::map<std::string, std::vector<Field>, std::less<>>& schema() {
  static const std::map<std::string, std::vector<Field>, std::less<>> s = {
      {"Register", {{"node_id", kString}, {"capacity", kInt}, {"spot", kBool}, {"profile", kString}}},
      {"RegisterAck", {{"ok", kBool}, {"reason", kString}}},
      {"Heartbeat", {{"node_id", kString}, {"load", kInt}, {"seq", kInt}}},
      {"Assign",
       {{"task_id", kString}, {"experiment", kString}, {"attempt", kInt}, {"command", kString},
        {"env", kObject}}},
      {"Result", {{"task_id", kString}, {"node_id", kString}, {"attempt", kInt}, {"outcome", kObject}}},
      {"Log", {{"record", kObject}}},
      {"Response", {{"ok", kBool}}},
      {"SubmitRecipe", {{"yaml", kString}, {"seed", kInt}}},
      {"GetStatus", {{"workflow_id", kString}}},
      {"GetLogs", {{"workflow_id", kString}}},
      {"UploadDataset", {{"path", kString}, {"dataset", kString}, {"chunk_target", kInt}}},
      {"Snapshot", {}},
      {"ListNodes", {}},
      {"ListWorkflows", {}},
      {"Shutdown", {}},
  };
  return s;
}

[[noreturn]] void bad(const std::string& message) { throw Error(ErrorCode::kProtocol, message); }

}  // namespace

std::string encode_frame(const json& message) {
  const std::string payload = message.dump();
  if (payload.size() > kMaxFrameBytes) bad("frame exceeds size limit");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += payload;
  return out;
}

void FrameDecoder::feed(std::string_view bytes) {
  if (pos_ > 0 && pos_ == buffer_.size()) {
    buffer_.clear();
    pos_ = 0;
  }
  buffer_.append(bytes);
}

std::optional<json> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + pos_);
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > kMaxFrameBytes) bad("frame length " + std::to_string(n) + " exceeds limit");
  if (buffered() < 4 + std::size_t{n}) return std::nullopt;
  const std::string_view payload(buffer_.data() + pos_ + 4, n);
  pos_ += 4 + n;
  if (pos_ > (1u << 20) && pos_ * 2 > buffer_.size()) {
    buffer_.erase(0, pos_);
    pos_ = 0;
  }
  json message = json::parse(payload, nullptr, false);
  if (message.is_discarded() || !message.is_object()) bad("frame payload is not a JSON object");
  return message;
}

void validate(const json& message) {
  if (!message.is_object()) bad("message is not an object");
  const auto type = message.find("type");
  if (type == message.end() || !type->is_string()) bad("message has no type");
  const auto& s = schema();
  const auto it = s.find(type->get<std::string>());
  if (it == s.end()) bad("unknown message type '" + type->get<std::string>() + "'");
  for (const auto& f : it->second) {
    const auto v = message.find(f.name);
    if (v == message.end()) bad(it->first + " lacks field '" + std::string(f.name) + "'");
    if (std::find(f.kinds.begin(), f.kinds.end(), v->type()) == f.kinds.end()) {
      bad(it->first + "." + std::string(f.name) + " has the wrong type");
    }
  }
}

json register_node(const std::string& node_id, int capacity, bool spot, const std::string& profile) {
  return {{"type", "Register"}, {"node_id", node_id}, {"capacity", capacity}, {"spot", spot},
          {"profile", profile}};
}

json register_ack(bool ok, const std::string& reason) {
  return {{"type", "RegisterAck"}, {"ok", ok}, {"reason", reason}};
}

json heartbeat(const std::string& node_id, int load, std::uint64_t seq) {
  return {{"type", "Heartbeat"}, {"node_id", node_id}, {"load", load}, {"seq", seq}};
}

json assign(const std::string& task_id, const std::string& experiment, int attempt,
            const std::string& command, const std::map<std::string, std::string>& env) {
  return {{"type", "Assign"}, {"task_id", task_id}, {"experiment", experiment},
          {"attempt", attempt}, {"command", command}, {"env", env}};
}

json result(const std::string& task_id, const std::string& node_id, int attempt,
            const Outcome& outcome) {
  return {{"type", "Result"}, {"task_id", task_id}, {"node_id", node_id}, {"attempt", attempt},
          {"outcome", to_json(outcome)}};
}

json log(const json& record) { return {{"type", "Log"}, {"record", record}}; }

json request(std::string_view type, json fields) {
  fields["type"] = type;
  return fields;
}

json ok_response(json body) { return {{"type", "Response"}, {"ok", true}, {"body", std::move(body)}}; }

json error_response(const Error& error) {
  return {{"type", "Response"},
          {"ok", false},
          {"error", {{"code", to_string(error.code())}, {"message", error.detail()}, {"path", error.path()}}}};
}

json unwrap_response(const json& response) {
  validate(response);
  if (response.at("type") != "Response") bad("expected a Response");
  if (response.at("ok").get<bool>()) return response.value("body", json::object());
  const json& e = response.at("error");
  ErrorCode code = ErrorCode::kProtocol;
  try {
    code = error_code_from_string(e.at("code").get<std::string>());
  } catch (const Error&) {
  }
  throw Error(code, e.value("message", ""), e.value("path", ""));
}

}  // namespace hyper::protocol
