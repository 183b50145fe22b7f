#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyper/objectstore.hpp"

namespace hyper::bench {

struct ChunkBenchConfig {
  std::vector<std::uint64_t> chunk_targets{1 << 20};
  std::vector<int> parallelism{1, 10};
  StorePerfModel perf{std::chrono::milliseconds{10}, {}, 0, 0};
  std::size_t files = 100;
  std::size_t file_size = 1 << 20;
  std::uint64_t seed = 1;

  // Throws InvalidArgument unless every size and count is positive.
  void validate() const;
};

struct StreamBenchConfig {
  std::uint64_t chunk_target = 256 << 10;
  std::size_t files = 40;
  std::size_t file_size = 64 << 10;
  StorePerfModel perf{std::chrono::milliseconds{20}, {}, 0, 1};
  std::vector<double> compute_ms{25.0, 0.0};
  std::vector<int> prefetch_depths{0, 2};
  std::uint64_t seed = 1;
  // Scratch space for the local copy; a temp dir when empty.
  std::filesystem::path workdir;

  void validate() const;
};

struct BenchRow {
  std::string bench;  // "chunks" | "stream"
  std::string mode;   // "fetch" | "local" | "stream"
  std::uint64_t chunk_target = 0;
  int parallelism = 0;
  int prefetch_depth = 0;
  double compute_ms = 0;
  std::size_t files = 0;
  std::size_t chunks = 0;
  std::uint64_t bytes = 0;
  double wall_ms = 0;
  double throughput_bps = 0;
  std::uint64_t gets = 0;
  std::uint64_t predicted_gets = 0;
  std::uint64_t cache_hits = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  static const char* csv_header();
  std::string csv() const;
  std::string table() const;
};

// Chunks produced by greedy packing of `files` equal files.
std::uint64_t predicted_chunks(std::size_t files, std::size_t file_size, std::uint64_t chunk_target);

// Reads a synthetic dataset with P threads pulling whole chunks, per
// (chunk_target, parallelism) pair.
BenchReport bench_chunks(const ChunkBenchConfig& config);

// Runs the same training loop over local files and over a chunkfs stream
// for each (compute time, prefetch depth) pair.
BenchReport bench_stream_vs_local(const StreamBenchConfig& config);

}  // namespace hyper::bench
