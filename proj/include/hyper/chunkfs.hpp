#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "hyper/objectstore.hpp"

namespace hyper::chunkfs {

// Production chunk target; tests and benches pass their own.
inline constexpr std::uint64_t kDefaultChunkTarget = 64ull << 20;

struct Extent {
  std::string chunk_id;
  std::uint64_t offset = 0;  // within the chunk
  std::uint64_t length = 0;
  bool operator==(const Extent&) const = default;
};

struct FileEntry {
  std::string path;  // relative, '/'-separated
  std::uint64_t size = 0;
  // In file-offset order. Empty files have no extents.
  std::vector<Extent> extents;
  bool operator==(const FileEntry&) const = default;
};

struct Chunk {
  std::string id;  // SHA-256 hex of the chunk bytes
  std::uint64_t size = 0;
  ObjectKey object_key;
  bool operator==(const Chunk&) const = default;
};

struct ChunkManifest {
  std::string dataset;
  std::uint64_t chunk_target = kDefaultChunkTarget;
  std::vector<FileEntry> files;  // upload (lexicographic path) order
  std::vector<Chunk> chunks;     // seal order, unique ids

  const FileEntry* find(std::string_view path) const;
  const Chunk* chunk(std::string_view id) const;
  std::uint64_t total_bytes() const;
  // Throws Error(kCorruptManifest) naming the first violated invariant.
  void validate() const;
  bool operator==(const ChunkManifest&) const = default;
};

ObjectKey manifest_key(const std::string& dataset);
ObjectKey chunk_key(const std::string& dataset, const std::string& chunk_id);

// Canonical JSON: {"body":{...sorted keys...},"sha256":"<hex of body dump>"}.
std::string serialize_manifest(const ChunkManifest& manifest);
// Throws Error(kCorruptManifest) on parse, digest or invariant failure.
ChunkManifest parse_manifest(std::string_view text);

struct UploadStats {
  std::size_t chunks_written = 0;
  std::size_t chunks_skipped = 0;
  bool manifest_written = false;
};

// Greedy lexicographic packing of every regular file under `local_root`
// into chunks of at most `chunk_target` bytes; files larger than the target
// are split at exact target boundaries. Chunks already present in the store
// are not re-uploaded, so an interrupted upload can simply be rerun.
ChunkManifest upload_tree(const std::filesystem::path& local_root, const std::string& dataset,
                          std::uint64_t chunk_target, ObjectStore& store,
                          UploadStats* stats = nullptr);

struct CacheMetrics {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
};

// LRU map from chunk id to immutable chunk bytes. Not synchronised; the
// owning DatasetHandle serialises access.
class ChunkCache {
 public:
  explicit ChunkCache(std::size_t capacity);

  std::shared_ptr<const Bytes> lookup(const std::string& id);
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  // Returns the number of entries evicted to make room.
  std::size_t insert(const std::string& id, std::shared_ptr<const Bytes> data);
  std::size_t size() const { return index_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  using Entry = std::pair<std::string, std::shared_ptr<const Bytes>>;
  std::size_t capacity_;
  std::list<Entry> order_;  // front = most recently used
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

class FileStream;

// A mounted, read-only view of one uploaded dataset. Safe for concurrent
// readers; concurrent misses on the same chunk share one GET.
class DatasetHandle : public std::enable_shared_from_this<DatasetHandle> {
 public:
  DatasetHandle(ChunkManifest manifest, std::shared_ptr<ObjectStore> store,
                std::size_t cache_capacity);

  const ChunkManifest& manifest() const { return manifest_; }

  // Throws FileNotInManifest, ChunkDigestMismatch, StoreUnavailable.
  Bytes read_file(std::string_view path);

  // Yields `paths` in order while up to `prefetch_depth` upcoming chunks
  // are fetched on background threads.
  FileStream stream(std::vector<std::string> paths, std::size_t prefetch_depth);

  CacheMetrics cache_metrics() const;

  // Writes every file under `dest`, creating directories as needed.
  void materialize(const std::filesystem::path& dest);

  // Fetches into the cache unless cached or already in flight. Not counted
  // as a lookup.
  void prefetch(const std::string& chunk_id);

 private:
  std::shared_ptr<const Bytes> load_chunk(const std::string& chunk_id, bool count_lookup);
  std::shared_ptr<const Bytes> fetch_and_verify(const std::string& chunk_id);

  ChunkManifest manifest_;
  std::shared_ptr<ObjectStore> store_;
  std::unordered_map<std::string, std::size_t> file_index_;
  std::unordered_map<std::string, std::size_t> chunk_index_;

  mutable std::mutex mu_;
  ChunkCache cache_;
  std::unordered_map<std::string, std::shared_future<std::shared_ptr<const Bytes>>> in_flight_;
  CacheMetrics metrics_;
};

// Throws NotFound if the dataset has no manifest, CorruptManifest if it
// fails verification.
std::shared_ptr<DatasetHandle> open_dataset(const std::string& dataset,
                                            std::shared_ptr<ObjectStore> store,
                                            std::size_t cache_capacity);

struct StreamItem {
  std::string path;
  Bytes data;
};

// Move-only iterator over a stream() call. Destruction stops and joins the
// prefetch threads.
class FileStream {
 public:
  FileStream(std::shared_ptr<DatasetHandle> handle, std::vector<std::string> paths,
             std::size_t prefetch_depth);
  ~FileStream();
  FileStream(FileStream&&) = delete;
  FileStream& operator=(FileStream&&) = delete;

  // nullopt once every path has been yielded. Errors for an item are thrown
  // from the call that would have yielded it.
  std::optional<StreamItem> next();

 private:
  void schedule_after(std::size_t item);
  void worker();

  std::shared_ptr<DatasetHandle> handle_;
  std::vector<std::string> paths_;
  std::size_t depth_;
  std::size_t cursor_ = 0;

  // Distinct chunks in first-use order and, per item, the highest index
  // into that sequence it touches.
  std::vector<std::string> chunk_sequence_;
  std::vector<std::optional<std::size_t>> last_chunk_of_item_;
  std::size_t next_to_schedule_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace hyper::chunkfs
