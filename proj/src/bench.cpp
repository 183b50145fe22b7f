#include "hyper/bench.hpp"

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "hyper/chunkfs.hpp"
#include "hyper/error.hpp"
#include "hyper/rng.hpp"

namespace hyper::bench {
namespace {

using SteadyClock = std::chrono::steady_clock;

double since_ms(SteadyClock::time_point start) {
  return std::chrono::duration<double, std::milli>(SteadyClock::now() - start).count();
}

void busy_compute(double ms) {
  if (ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

struct ScratchDir {
  std::filesystem::path path;
  bool owned = false;

  explicit ScratchDir(const std::filesystem::path& requested) {
    static std::atomic<int> counter{0};
    if (requested.empty()) {
      path = std::filesystem::temp_directory_path() /
             ("hyper-bench-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
      owned = true;
    } else {
      path = requested;
    }
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    if (owned) std::filesystem::remove_all(path, ec);
  }
};

void write_dataset(const std::filesystem::path& root, std::size_t files, std::size_t size,
                   std::uint64_t seed) {
  Xoshiro256 gen(seed);
  std::vector<char> buf(size);
  for (std::size_t i = 0; i < files; ++i) {
    for (auto& c : buf) c = static_cast<char>(gen());
    char name[32];
    std::snprintf(name, sizeof name, "item-%06zu.bin", i);
    std::ofstream out(root / name, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

double throughput(std::uint64_t bytes, double wall_ms) {
  return wall_ms > 0 ? static_cast<double>(bytes) / (wall_ms / 1000.0) : 0.0;
}

}  // namespace

void ChunkBenchConfig::validate() const {
  if (chunk_targets.empty() || parallelism.empty() || files == 0 || file_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "bench config needs sizes, parallelism and files");
  }
  for (auto t : chunk_targets) {
    if (t == 0) throw Error(ErrorCode::kInvalidArgument, "chunk target must be positive");
  }
  for (int p : parallelism) {
    if (p < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be positive");
  }
}

void StreamBenchConfig::validate() const {
  if (chunk_target == 0 || files == 0 || file_size == 0 || compute_ms.empty() ||
      prefetch_depths.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "stream bench config needs positive sizes");
  }
  for (double c : compute_ms) {
    if (c < 0) throw Error(ErrorCode::kInvalidArgument, "compute time must be >= 0");
  }
  for (int d : prefetch_depths) {
    if (d < 0) throw Error(ErrorCode::kInvalidArgument, "prefetch depth must be >= 0");
  }
}

const char* BenchReport::csv_header() {
  return "bench,mode,chunk_target,parallelism,prefetch_depth,compute_ms,files,chunks,bytes,"
         "wall_ms,throughput_bps,gets,predicted_gets,cache_hits";
}

std::string BenchReport::csv() const {
  std::ostringstream out;
  out << csv_header() << '\n';
  for (const auto& r : rows) {
    char line[512];
    std::snprintf(line, sizeof line, "%s,%s,%llu,%d,%d,%.3f,%zu,%zu,%llu,%.3f,%.1f,%llu,%llu,%llu\n",
                  r.bench.c_str(), r.mode.c_str(), static_cast<unsigned long long>(r.chunk_target),
                  r.parallelism, r.prefetch_depth, r.compute_ms, r.files, r.chunks,
                  static_cast<unsigned long long>(r.bytes), r.wall_ms, r.throughput_bps,
                  static_cast<unsigned long long>(r.gets),
                  static_cast<unsigned long long>(r.predicted_gets),
                  static_cast<unsigned long long>(r.cache_hits));
    out << line;
  }
  return out.str();
}

std::string BenchReport::table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-7s %12s %4s %5s %9s %7s %11s %12s %6s %6s\n", "bench",
                "mode", "chunk", "par", "depth", "compute", "chunks", "wall_ms", "MB/s", "gets",
                "pred");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-7s %-7s %12llu %4d %5d %9.1f %7zu %11.1f %12.2f %6llu %6llu\n",
                  r.bench.c_str(), r.mode.c_str(), static_cast<unsigned long long>(r.chunk_target),
                  r.parallelism, r.prefetch_depth, r.compute_ms, r.chunks, r.wall_ms,
                  r.throughput_bps / 1e6, static_cast<unsigned long long>(r.gets),
                  static_cast<unsigned long long>(r.predicted_gets));
    out << line;
  }
  return out.str();
}

std::uint64_t predicted_chunks(std::size_t files, std::size_t file_size, std::uint64_t chunk_target) {
  if (files == 0 || file_size == 0) return 0;
  if (file_size >= chunk_target) return files * ((file_size + chunk_target - 1) / chunk_target);
  const std::uint64_t per_chunk = chunk_target / file_size;
  return (files + per_chunk - 1) / per_chunk;
}

BenchReport bench_chunks(const ChunkBenchConfig& config) {
  config.validate();
  BenchReport report;
  ScratchDir scratch({});
  write_dataset(scratch.path, config.files, config.file_size, config.seed);
  for (const auto target : config.chunk_targets) {
    auto store = std::make_shared<MemoryStore>();
    const std::string dataset = "bench-" + std::to_string(target);
    const auto manifest = chunkfs::upload_tree(scratch.path, dataset, target, *store);
    // Files grouped by the first chunk they touch, in manifest order.
    std::vector<std::vector<std::string>> groups;
    std::string last;
    for (const auto& f : manifest.files) {
      const std::string& first = f.extents.empty() ? std::string() : f.extents.front().chunk_id;
      if (groups.empty() || first != last) groups.emplace_back();
      groups.back().push_back(f.path);
      last = first;
    }
    store->set_perf_model(config.perf);
    for (const int p : config.parallelism) {
      auto handle = chunkfs::open_dataset(dataset, store, manifest.chunks.size() + 1);
      const auto before = store->stats();
      std::atomic<std::size_t> next{0};
      std::atomic<std::uint64_t> bytes{0};
      const auto start = SteadyClock::now();
      std::vector<std::thread> threads;
      for (int t = 0; t < p; ++t) {
        threads.emplace_back([&] {
          for (std::size_t g; (g = next.fetch_add(1)) < groups.size();) {
            for (const auto& path : groups[g]) bytes += handle->read_file(path).size();
          }
        });
      }
      for (auto& t : threads) t.join();
      const double wall = since_ms(start);
      BenchRow row;
      row.bench = "chunks";
      row.mode = "fetch";
      row.chunk_target = target;
      row.parallelism = p;
      row.files = manifest.files.size();
      row.chunks = manifest.chunks.size();
      row.bytes = bytes;
      row.wall_ms = wall;
      row.throughput_bps = throughput(row.bytes, wall);
      row.gets = store->stats().gets - before.gets;
      row.predicted_gets = predicted_chunks(config.files, config.file_size, target);
      row.cache_hits = handle->cache_metrics().hits;
      report.rows.push_back(row);
    }
  }
  return report;
}

BenchReport bench_stream_vs_local(const StreamBenchConfig& config) {
  config.validate();
  BenchReport report;
  ScratchDir scratch(config.workdir);
  const auto local = scratch.path / "local";
  std::filesystem::create_directories(local);
  write_dataset(local, config.files, config.file_size, config.seed);
  auto store = std::make_shared<MemoryStore>();
  const auto manifest = chunkfs::upload_tree(local, "stream", config.chunk_target, *store);
  std::vector<std::string> paths;
  for (const auto& f : manifest.files) paths.push_back(f.path);
  store->set_perf_model(config.perf);

  for (const double compute : config.compute_ms) {
    BenchRow base;
    base.bench = "stream";
    base.chunk_target = config.chunk_target;
    base.parallelism = 1;
    base.compute_ms = compute;
    base.files = paths.size();
    base.chunks = manifest.chunks.size();
    base.predicted_gets = manifest.chunks.size();

    BenchRow local_row = base;
    local_row.mode = "local";
    auto start = SteadyClock::now();
    for (const auto& p : paths) {
      std::ifstream in(local / p, std::ios::binary);
      std::string data(std::filesystem::file_size(local / p), '\0');
      in.read(data.data(), static_cast<std::streamsize>(data.size()));
      local_row.bytes += static_cast<std::uint64_t>(in.gcount());
      busy_compute(compute);
    }
    local_row.wall_ms = since_ms(start);
    local_row.throughput_bps = throughput(local_row.bytes, local_row.wall_ms);
    local_row.predicted_gets = 0;
    report.rows.push_back(local_row);

    for (const int depth : config.prefetch_depths) {
      BenchRow row = base;
      row.mode = "stream";
      row.prefetch_depth = depth;
      auto handle = chunkfs::open_dataset("stream", store, manifest.chunks.size() + 1);
      const auto before = store->stats();
      start = SteadyClock::now();
      {
        auto s = handle->stream(paths, static_cast<std::size_t>(depth));
        while (auto item = s.next()) {
          row.bytes += item->data.size();
          busy_compute(compute);
        }
      }
      row.wall_ms = since_ms(start);
      row.throughput_bps = throughput(row.bytes, row.wall_ms);
      row.gets = store->stats().gets - before.gets;
      row.cache_hits = handle->cache_metrics().hits;
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace hyper::bench
