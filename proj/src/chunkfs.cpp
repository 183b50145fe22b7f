#include "hyper/chunkfs.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "hyper/digest.hpp"
#include "hyper/error.hpp"

namespace hyper::chunkfs {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void corrupt(const std::string& why) {
  throw Error(ErrorCode::kCorruptManifest, why);
}

bool is_hex_digest(std::string_view s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

json body_to_json(const ChunkManifest& m) {
  json files = json::array();
  for (const auto& f : m.files) {
    json extents = json::array();
    for (const auto& e : f.extents) extents.push_back({e.chunk_id, e.offset, e.length});
    files.push_back({{"path", f.path}, {"size", f.size}, {"extents", extents}});
  }
  json chunks = json::array();
  for (const auto& c : m.chunks) {
    chunks.push_back({{"id", c.id}, {"size", c.size}, {"key", c.object_key.key}});
  }
  return {{"format", 1},
          {"dataset", m.dataset},
          {"chunk_target", m.chunk_target},
          {"files", files},
          {"chunks", chunks}};
}

// Accumulates files into chunks and uploads each chunk as it is sealed.
class Packer {
 public:
  Packer(ChunkManifest& manifest, ObjectStore& store, UploadStats& stats)
      : manifest_(manifest), store_(store), stats_(stats) {}

  std::uint64_t open_size() const { return buffer_.size(); }

  // Appends bytes to the open chunk; the caller guarantees they fit.
  Extent append(const Bytes& data) {
    const std::uint64_t offset = buffer_.size();
    buffer_.insert(buffer_.end(), data.begin(), data.end());
    pending_.push_back({manifest_.files.size() - 1, extent_slot()});
    return {"", offset, data.size()};
  }

  void seal() {
    if (buffer_.empty()) return;
    const std::string id = sha256_hex(buffer_);
    for (const auto& [file, slot] : pending_) manifest_.files[file].extents[slot].chunk_id = id;
    pending_.clear();
    if (manifest_.chunk(id) == nullptr) {
      const ObjectKey key = chunk_key(manifest_.dataset, id);
      manifest_.chunks.push_back({id, buffer_.size(), key});
      if (store_.exists(key)) {
        ++stats_.chunks_skipped;
      } else {
        store_.put(key, buffer_);
        ++stats_.chunks_written;
      }
    }
    buffer_.clear();
  }

 private:
  std::size_t extent_slot() const { return manifest_.files.back().extents.size(); }

  ChunkManifest& manifest_;
  ObjectStore& store_;
  UploadStats& stats_;
  Bytes buffer_;
  std::vector<std::pair<std::size_t, std::size_t>> pending_;
};

Bytes read_range(std::ifstream& in, const fs::path& p, std::uint64_t length) {
  Bytes data(length);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length) {
    throw Error(ErrorCode::kIo, "short read from " + p.string());
  }
  return data;
}

}  // namespace

const FileEntry* ChunkManifest::find(std::string_view path) const {
  const auto it = std::lower_bound(files.begin(), files.end(), path,
                                   [](const FileEntry& f, std::string_view p) { return f.path < p; });
  if (it != files.end() && it->path == path) return &*it;
  // Manifests built programmatically may not be sorted.
  for (const auto& f : files) {
    if (f.path == path) return &f;
  }
  return nullptr;
}

const Chunk* ChunkManifest::chunk(std::string_view id) const {
  for (const auto& c : chunks) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::uint64_t ChunkManifest::total_bytes() const {
  std::uint64_t total = 0;
  for (const auto& f : files) total += f.size;
  return total;
}

void ChunkManifest::validate() const {
  if (dataset.empty()) corrupt("empty dataset name");
  if (chunk_target == 0) corrupt("chunk_target must be positive");
  std::map<std::string, const Chunk*> by_id;
  for (const auto& c : chunks) {
    if (!is_hex_digest(c.id)) corrupt("chunk id '" + c.id + "' is not a SHA-256 digest");
    if (c.size == 0 || c.size > chunk_target) corrupt("chunk " + c.id + " has invalid size");
    if (!(c.object_key == chunk_key(dataset, c.id))) corrupt("chunk " + c.id + " has wrong object key");
    if (!by_id.emplace(c.id, &c).second) corrupt("duplicate chunk " + c.id);
  }
  std::set<std::string> paths;
  for (const auto& f : files) {
    if (f.path.empty()) corrupt("empty file path");
    if (!paths.insert(f.path).second) corrupt("duplicate file " + f.path);
    std::uint64_t total = 0;
    for (const auto& e : f.extents) {
      const auto it = by_id.find(e.chunk_id);
      if (it == by_id.end()) corrupt(f.path + " references unknown chunk " + e.chunk_id);
      if (e.length == 0 || e.offset + e.length > it->second->size) {
        corrupt(f.path + " has an extent outside chunk " + e.chunk_id);
      }
      total += e.length;
    }
    if (total != f.size) corrupt(f.path + " extents do not sum to its size");
    if (f.size > 0 && f.size < chunk_target && f.extents.size() != 1) {
      corrupt(f.path + " is smaller than a chunk but has several extents");
    }
  }
}

ObjectKey manifest_key(const std::string& dataset) { return {dataset, "manifest"}; }

ObjectKey chunk_key(const std::string& dataset, const std::string& chunk_id) {
  return {dataset, "chunks/" + chunk_id};
}

std::string serialize_manifest(const ChunkManifest& manifest) {
  const json body = body_to_json(manifest);
  const std::string body_text = body.dump();
  json doc = {{"body", body}, {"sha256", sha256_hex(body_text)}};
  return doc.dump();
}

ChunkManifest parse_manifest(std::string_view text) {
  ChunkManifest m;
  try {
    const json doc = json::parse(text);
    const json& body = doc.at("body");
    if (doc.size() != 2 || doc.at("sha256").get<std::string>() != sha256_hex(body.dump())) {
      corrupt("manifest digest mismatch");
    }
    if (body.at("format").get<int>() != 1) corrupt("unsupported manifest format");
    m.dataset = body.at("dataset").get<std::string>();
    m.chunk_target = body.at("chunk_target").get<std::uint64_t>();
    for (const auto& jf : body.at("files")) {
      FileEntry f;
      f.path = jf.at("path").get<std::string>();
      f.size = jf.at("size").get<std::uint64_t>();
      for (const auto& je : jf.at("extents")) {
        f.extents.push_back({je.at(0).get<std::string>(), je.at(1).get<std::uint64_t>(),
                             je.at(2).get<std::uint64_t>()});
      }
      m.files.push_back(std::move(f));
    }
    for (const auto& jc : body.at("chunks")) {
      m.chunks.push_back({jc.at("id").get<std::string>(), jc.at("size").get<std::uint64_t>(),
                          ObjectKey{m.dataset, jc.at("key").get<std::string>()}});
    }
  } catch (const json::exception& e) {
    corrupt(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

ChunkManifest upload_tree(const fs::path& local_root, const std::string& dataset,
                          std::uint64_t chunk_target, ObjectStore& store, UploadStats* stats_out) {
  if (chunk_target == 0) throw Error(ErrorCode::kInvalidArgument, "chunk_target must be positive");
  std::error_code ec;
  if (!fs::is_directory(local_root, ec)) {
    throw Error(ErrorCode::kIo, "not a readable directory: " + local_root.string());
  }

  std::vector<std::pair<std::string, fs::path>> sources;
  for (auto it = fs::recursive_directory_iterator(local_root, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw Error(ErrorCode::kIo, "cannot walk " + local_root.string() + ": " + ec.message());
    if (it->is_regular_file()) {
      sources.emplace_back(fs::relative(it->path(), local_root).generic_string(), it->path());
    }
  }
  if (ec) throw Error(ErrorCode::kIo, "cannot walk " + local_root.string() + ": " + ec.message());
  std::sort(sources.begin(), sources.end());

  ChunkManifest manifest;
  manifest.dataset = dataset;
  manifest.chunk_target = chunk_target;
  UploadStats stats;
  Packer packer(manifest, store, stats);

  for (const auto& [rel, abs] : sources) {
    std::ifstream in(abs, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + abs.string());
    const std::uint64_t size = fs::file_size(abs);
    manifest.files.push_back({rel, size, {}});
    if (size == 0) continue;

    if (size > chunk_target) {
      packer.seal();
      for (std::uint64_t done = 0; done < size; done += chunk_target) {
        const auto piece = read_range(in, abs, std::min(chunk_target, size - done));
        manifest.files.back().extents.push_back(packer.append(piece));
        packer.seal();
      }
      continue;
    }
    if (packer.open_size() + size > chunk_target) packer.seal();
    manifest.files.back().extents.push_back(packer.append(read_range(in, abs, size)));
  }
  packer.seal();
  manifest.validate();

  const std::string text = serialize_manifest(manifest);
  const ObjectKey mkey = manifest_key(dataset);
  if (!store.exists(mkey) || as_string_view(store.get(mkey)) != text) {
    store.put(mkey, to_bytes(text));
    stats.manifest_written = true;
  }
  if (stats_out) *stats_out = stats;
  return manifest;
}

ChunkCache::ChunkCache(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

std::shared_ptr<const Bytes> ChunkCache::lookup(const std::string& id) {
  const auto it = index_.find(id);
  if (it == index_.end()) return nullptr;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

std::size_t ChunkCache::insert(const std::string& id, std::shared_ptr<const Bytes> data) {
  if (const auto it = index_.find(id); it != index_.end()) {
    it->second->second = std::move(data);
    order_.splice(order_.begin(), order_, it->second);
    return 0;
  }
  std::size_t evicted = 0;
  while (index_.size() >= capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
    ++evicted;
  }
  order_.emplace_front(id, std::move(data));
  index_[id] = order_.begin();
  return evicted;
}

DatasetHandle::DatasetHandle(ChunkManifest manifest, std::shared_ptr<ObjectStore> store,
                             std::size_t cache_capacity)
    : manifest_(std::move(manifest)), store_(std::move(store)), cache_(cache_capacity) {
  for (std::size_t i = 0; i < manifest_.files.size(); ++i) file_index_[manifest_.files[i].path] = i;
  for (std::size_t i = 0; i < manifest_.chunks.size(); ++i) chunk_index_[manifest_.chunks[i].id] = i;
}

std::shared_ptr<const Bytes> DatasetHandle::fetch_and_verify(const std::string& chunk_id) {
  const auto found = chunk_index_.find(chunk_id);
  if (found == chunk_index_.end()) throw Error(ErrorCode::kCorruptManifest, "unknown chunk " + chunk_id);
  const Chunk* chunk = &manifest_.chunks[found->second];
  auto data = std::make_shared<const Bytes>(store_->get(chunk->object_key));
  if (data->size() != chunk->size || sha256_hex(*data) != chunk_id) {
    throw Error(ErrorCode::kChunkDigestMismatch, "chunk " + chunk_id + " failed verification");
  }
  return data;
}

std::shared_ptr<const Bytes> DatasetHandle::load_chunk(const std::string& chunk_id,
                                                       bool count_lookup) {
  std::promise<std::shared_ptr<const Bytes>> promise;
  {
    std::unique_lock lock(mu_);
    if (auto hit = cache_.lookup(chunk_id)) {
      if (count_lookup) ++metrics_.hits;
      return hit;
    }
    if (const auto it = in_flight_.find(chunk_id); it != in_flight_.end()) {
      if (count_lookup) ++metrics_.hits;
      auto pending = it->second;
      lock.unlock();
      return pending.get();
    }
    if (count_lookup) ++metrics_.misses;
    in_flight_.emplace(chunk_id, promise.get_future().share());
  }

  try {
    auto data = fetch_and_verify(chunk_id);
    {
      std::lock_guard lock(mu_);
      metrics_.evictions += cache_.insert(chunk_id, data);
      in_flight_.erase(chunk_id);
    }
    promise.set_value(data);
    return data;
  } catch (...) {
    {
      std::lock_guard lock(mu_);
      in_flight_.erase(chunk_id);
    }
    promise.set_exception(std::current_exception());
    throw;
  }
}

void DatasetHandle::prefetch(const std::string& chunk_id) {
  {
    std::lock_guard lock(mu_);
    if (cache_.contains(chunk_id) || in_flight_.count(chunk_id)) return;
  }
  load_chunk(chunk_id, false);
}

Bytes DatasetHandle::read_file(std::string_view path) {
  const auto it = file_index_.find(std::string(path));
  if (it == file_index_.end()) {
    throw Error(ErrorCode::kFileNotInManifest, "no file '" + std::string(path) + "' in dataset " +
                                                   manifest_.dataset);
  }
  const FileEntry& entry = manifest_.files[it->second];
  Bytes out;
  out.reserve(entry.size);
  for (const auto& extent : entry.extents) {
    const auto chunk = load_chunk(extent.chunk_id, true);
    const auto begin = chunk->begin() + static_cast<std::ptrdiff_t>(extent.offset);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(extent.length));
  }
  return out;
}

FileStream DatasetHandle::stream(std::vector<std::string> paths, std::size_t prefetch_depth) {
  return FileStream(shared_from_this(), std::move(paths), prefetch_depth);
}

CacheMetrics DatasetHandle::cache_metrics() const {
  std::lock_guard lock(mu_);
  return metrics_;
}

void DatasetHandle::materialize(const fs::path& dest) {
  for (const auto& f : manifest_.files) {
    const fs::path target = dest / fs::path(f.path);
    fs::create_directories(target.parent_path());
    const Bytes data = read_file(f.path);
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + target.string());
  }
}

std::shared_ptr<DatasetHandle> open_dataset(const std::string& dataset,
                                            std::shared_ptr<ObjectStore> store,
                                            std::size_t cache_capacity) {
  const Bytes raw = store->get(manifest_key(dataset));
  ChunkManifest manifest = parse_manifest(as_string_view(raw));
  if (manifest.dataset != dataset) {
    throw Error(ErrorCode::kCorruptManifest,
                "manifest names dataset '" + manifest.dataset + "', expected '" + dataset + "'");
  }
  return std::make_shared<DatasetHandle>(std::move(manifest), std::move(store), cache_capacity);
}

FileStream::FileStream(std::shared_ptr<DatasetHandle> handle, std::vector<std::string> paths,
                       std::size_t prefetch_depth)
    : handle_(std::move(handle)), paths_(std::move(paths)), depth_(prefetch_depth) {
  std::unordered_map<std::string, std::size_t> position;
  last_chunk_of_item_.resize(paths_.size());
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    const FileEntry* f = handle_->manifest().find(paths_[i]);
    if (f == nullptr) continue;  // surfaced by read_file at yield time
    for (const auto& e : f->extents) {
      auto [it, inserted] = position.emplace(e.chunk_id, chunk_sequence_.size());
      if (inserted) chunk_sequence_.push_back(e.chunk_id);
      last_chunk_of_item_[i] = std::max(last_chunk_of_item_[i].value_or(0), it->second);
    }
  }
  for (std::size_t i = 0; i < depth_; ++i) workers_.emplace_back([this] { worker(); });
}

FileStream::~FileStream() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    queue_.clear();
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void FileStream::worker() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = std::move(queue_.front());
      queue_.pop_front();
    }
    try {
      handle_->prefetch(id);
    } catch (const std::exception&) {
      // The consumer retries the fetch itself and sees the error there.
    }
  }
}

void FileStream::schedule_after(std::size_t item) {
  if (depth_ == 0) return;
  // Highest sequence index needed by items up to and including `item`.
  std::optional<std::size_t> current;
  for (std::size_t i = item + 1; i-- > 0;) {
    if (last_chunk_of_item_[i]) {
      current = last_chunk_of_item_[i];
      break;
    }
  }
  const std::size_t first = current ? *current + 1 : 0;
  const std::size_t last = std::min(chunk_sequence_.size(), first + depth_);
  {
    std::lock_guard lock(mu_);
    for (std::size_t pos = std::max(first, next_to_schedule_); pos < last; ++pos) {
      queue_.push_back(chunk_sequence_[pos]);
    }
    next_to_schedule_ = std::max(next_to_schedule_, last);
  }
  cv_.notify_all();
}

std::optional<StreamItem> FileStream::next() {
  if (cursor_ >= paths_.size()) return std::nullopt;
  const std::size_t item = cursor_++;
  Bytes data = handle_->read_file(paths_[item]);
  schedule_after(item);
  return StreamItem{paths_[item], std::move(data)};
}

}  // namespace hyper::chunkfs
