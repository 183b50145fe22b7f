#include "hyper/objectstore.hpp"

#include <unistd.h>

#include <fstream>
#include <thread>

#include "hyper/error.hpp"

namespace hyper {
namespace fs = std::filesystem;

Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

std::string_view as_string_view(ByteView b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

void ObjectKey::validate() const {
  if (bucket.empty() || bucket.front() == '.' || bucket.find('/') != std::string::npos) {
    throw Error(ErrorCode::kInvalidKey, "invalid bucket '" + bucket + "'");
  }
  if (key.empty()) throw Error(ErrorCode::kInvalidKey, "empty key in bucket '" + bucket + "'");
  std::size_t start = 0;
  while (start <= key.size()) {
    const std::size_t end = std::min(key.find('/', start), key.size());
    const std::string_view seg(key.data() + start, end - start);
    if (seg.empty() || seg == "." || seg == "..") {
      throw Error(ErrorCode::kInvalidKey, "invalid key '" + key + "'");
    }
    start = end + 1;
  }
}

namespace {
std::chrono::microseconds transfer_time(std::size_t bytes, std::uint64_t bandwidth) {
  if (bandwidth == 0) return std::chrono::microseconds{0};
  return std::chrono::microseconds{static_cast<long long>(
      static_cast<long double>(bytes) * 1'000'000.0L / static_cast<long double>(bandwidth))};
}
}  // namespace

std::chrono::microseconds StorePerfModel::get_delay(std::size_t bytes) const {
  return get_latency + transfer_time(bytes, bandwidth);
}

std::chrono::microseconds StorePerfModel::put_delay(std::size_t bytes) const {
  return put_latency + transfer_time(bytes, bandwidth);
}

// Holds one service slot for the lifetime of a request.
class ObjectStore::SlotGuard {
 public:
  explicit SlotGuard(ObjectStore& store) : store_(store) {
    std::unique_lock lock(store_.model_mu_);
    store_.slot_cv_.wait(lock, [&] {
      return store_.model_.max_parallel == 0 || store_.busy_slots_ < store_.model_.max_parallel;
    });
    ++store_.busy_slots_;
  }
  ~SlotGuard() {
    {
      std::lock_guard lock(store_.model_mu_);
      --store_.busy_slots_;
    }
    store_.slot_cv_.notify_one();
  }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  ObjectStore& store_;
};

void ObjectStore::check_available() const {
  if (!available_) throw Error(ErrorCode::kStoreUnavailable, "object store unavailable");
}

StorePerfModel ObjectStore::model_snapshot() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

void ObjectStore::set_perf_model(const StorePerfModel& model) {
  {
    std::lock_guard lock(model_mu_);
    model_ = model;
  }
  slot_cv_.notify_all();
}

StorePerfModel ObjectStore::perf_model() const { return model_snapshot(); }

void ObjectStore::put(const ObjectKey& key, ByteView data) {
  key.validate();
  check_available();
  {
    SlotGuard slot(*this);
    const auto start = std::chrono::steady_clock::now();
    do_put(key, data);
    std::this_thread::sleep_until(start + model_snapshot().put_delay(data.size()));
  }
  puts_ += 1;
  bytes_in_ += data.size();
}

Bytes ObjectStore::get(const ObjectKey& key) {
  key.validate();
  check_available();
  std::optional<Bytes> data;
  {
    SlotGuard slot(*this);
    const auto start = std::chrono::steady_clock::now();
    data = do_get(key);
    std::this_thread::sleep_until(start + model_snapshot().get_delay(data ? data->size() : 0));
  }
  gets_ += 1;
  if (!data) throw Error(ErrorCode::kNotFound, "no object " + key.str());
  bytes_out_ += data->size();
  return std::move(*data);
}

bool ObjectStore::exists(const ObjectKey& key) {
  key.validate();
  check_available();
  return do_exists(key);
}

std::vector<ObjectKey> ObjectStore::list(std::string_view bucket, std::string_view prefix) {
  check_available();
  lists_ += 1;
  auto keys = do_list(std::string(bucket), prefix);
  std::sort(keys.begin(), keys.end());
  std::vector<ObjectKey> out;
  out.reserve(keys.size());
  for (auto& k : keys) out.push_back({std::string(bucket), std::move(k)});
  return out;
}

ObjectStoreStats ObjectStore::stats() const {
  return {gets_.load(), puts_.load(), lists_.load(), bytes_in_.load(), bytes_out_.load()};
}

void MemoryStore::do_put(const ObjectKey& key, ByteView data) {
  auto blob = std::make_shared<const Bytes>(data.begin(), data.end());
  std::unique_lock lock(mu_);
  buckets_[key.bucket][key.key] = std::move(blob);
}

std::optional<Bytes> MemoryStore::do_get(const ObjectKey& key) {
  std::shared_ptr<const Bytes> blob;
  {
    std::shared_lock lock(mu_);
    const auto b = buckets_.find(key.bucket);
    if (b == buckets_.end()) return std::nullopt;
    const auto it = b->second.find(key.key);
    if (it == b->second.end()) return std::nullopt;
    blob = it->second;
  }
  return *blob;
}

bool MemoryStore::do_exists(const ObjectKey& key) {
  std::shared_lock lock(mu_);
  const auto b = buckets_.find(key.bucket);
  return b != buckets_.end() && b->second.count(key.key) > 0;
}

std::vector<std::string> MemoryStore::do_list(const std::string& bucket, std::string_view prefix) {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  const auto b = buckets_.find(bucket);
  if (b == buckets_.end()) return out;
  for (auto it = b->second.lower_bound(std::string(prefix)); it != b->second.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

DiskStore::DiskStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / ".staging", ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create store root " + root_.string() + ": " + ec.message());
}

fs::path DiskStore::path_of(const ObjectKey& key) const { return root_ / key.bucket / key.key; }

void DiskStore::do_put(const ObjectKey& key, ByteView data) {
  const fs::path target = path_of(key);
  const fs::path staging =
      root_ / ".staging" /
      (std::to_string(::getpid()) + "-" + std::to_string(staging_counter_.fetch_add(1)));
  {
    std::ofstream out(staging, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + staging.string());
  }
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  fs::rename(staging, target, ec);
  if (ec) {
    fs::remove(staging);
    throw Error(ErrorCode::kIo, "cannot store " + key.str() + ": " + ec.message());
  }
}

std::optional<Bytes> DiskStore::do_get(const ObjectKey& key) {
  const fs::path p = path_of(key);
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) return std::nullopt;
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

bool DiskStore::do_exists(const ObjectKey& key) {
  std::error_code ec;
  return fs::is_regular_file(path_of(key), ec);
}

std::vector<std::string> DiskStore::do_list(const std::string& bucket, std::string_view prefix) {
  std::vector<std::string> out;
  const fs::path base = root_ / bucket;
  std::error_code ec;
  if (bucket.empty() || bucket.front() == '.' || !fs::is_directory(base, ec)) return out;
  for (auto it = fs::recursive_directory_iterator(base, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file()) continue;
    std::string rel = fs::relative(it->path(), base).generic_string();
    if (rel.compare(0, prefix.size(), prefix) == 0) out.push_back(std::move(rel));
  }
  return out;
}

std::shared_ptr<ObjectStore> open_store(const std::string& location) {
  if (location == "mem:") return std::make_shared<MemoryStore>();
  return std::make_shared<DiskStore>(location);
}

}  // namespace hyper
