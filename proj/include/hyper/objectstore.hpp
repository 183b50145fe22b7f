#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hyper {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

Bytes to_bytes(std::string_view s);
std::string_view as_string_view(ByteView b);

struct ObjectKey {
  std::string bucket;
  // Slash-separated; no empty, "." or ".." segments.
  std::string key;

  // Throws Error(kInvalidKey).
  void validate() const;
  std::string str() const { return bucket + "/" + key; }
  auto operator<=>(const ObjectKey&) const = default;
};

// Injected service characteristics: each request sleeps for its latency plus
// size / bandwidth while holding one of max_parallel service slots.
struct StorePerfModel {
  std::chrono::microseconds get_latency{0};
  std::chrono::microseconds put_latency{0};
  std::uint64_t bandwidth = 0;     // bytes/second, 0 = unlimited
  std::size_t max_parallel = 0;    // 0 = unlimited

  std::chrono::microseconds get_delay(std::size_t bytes) const;
  std::chrono::microseconds put_delay(std::size_t bytes) const;
};

struct ObjectStoreStats {
  std::uint64_t gets = 0;
  std::uint64_t puts = 0;
  std::uint64_t lists = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
};

// S3-style put/get/list. Thread-safe; the base class applies the perf model,
// outage simulation and accounting, backends only move bytes.
class ObjectStore {
 public:
  virtual ~ObjectStore() = default;

  // Last writer wins.
  void put(const ObjectKey& key, ByteView data);
  // Throws NotFound or StoreUnavailable.
  Bytes get(const ObjectKey& key);
  // Metadata probe; free of perf-model delay and not counted as a GET.
  bool exists(const ObjectKey& key);
  // Keys in `bucket` starting with `prefix`, lexicographically ordered.
  std::vector<ObjectKey> list(std::string_view bucket, std::string_view prefix = {});

  ObjectStoreStats stats() const;

  void set_perf_model(const StorePerfModel& model);
  StorePerfModel perf_model() const;
  // While unavailable every operation throws StoreUnavailable.
  void set_available(bool available) { available_ = available; }
  bool available() const { return available_; }

 protected:
  virtual void do_put(const ObjectKey& key, ByteView data) = 0;
  virtual std::optional<Bytes> do_get(const ObjectKey& key) = 0;
  virtual bool do_exists(const ObjectKey& key) = 0;
  virtual std::vector<std::string> do_list(const std::string& bucket, std::string_view prefix) = 0;

 private:
  class SlotGuard;
  void check_available() const;
  StorePerfModel model_snapshot() const;

  mutable std::mutex model_mu_;
  std::condition_variable slot_cv_;
  StorePerfModel model_;
  std::size_t busy_slots_ = 0;

  std::atomic<bool> available_{true};
  std::atomic<std::uint64_t> gets_{0}, puts_{0}, lists_{0}, bytes_in_{0}, bytes_out_{0};
};

class MemoryStore final : public ObjectStore {
 protected:
  void do_put(const ObjectKey& key, ByteView data) override;
  std::optional<Bytes> do_get(const ObjectKey& key) override;
  bool do_exists(const ObjectKey& key) override;
  std::vector<std::string> do_list(const std::string& bucket, std::string_view prefix) override;

 private:
  std::shared_mutex mu_;
  std::map<std::string, std::map<std::string, std::shared_ptr<const Bytes>>> buckets_;
};

// Layout: <root>/<bucket>/<key>, bytes verbatim. Writes go through
// <root>/.staging and an atomic rename.
class DiskStore final : public ObjectStore {
 public:
  explicit DiskStore(std::filesystem::path root);
  const std::filesystem::path& root() const { return root_; }

 protected:
  void do_put(const ObjectKey& key, ByteView data) override;
  std::optional<Bytes> do_get(const ObjectKey& key) override;
  bool do_exists(const ObjectKey& key) override;
  std::vector<std::string> do_list(const std::string& bucket, std::string_view prefix) override;

 private:
  std::filesystem::path path_of(const ObjectKey& key) const;

  std::filesystem::path root_;
  std::atomic<std::uint64_t> staging_counter_{0};
};

// "mem:" yields a fresh MemoryStore, anything else is a DiskStore root.
std::shared_ptr<ObjectStore> open_store(const std::string& location);

}  // namespace hyper
