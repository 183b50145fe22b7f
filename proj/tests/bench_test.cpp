#include "hyper/bench.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "hyper/error.hpp"

namespace hyper::bench {
namespace {

using namespace std::chrono_literals;

const BenchRow& row(const BenchReport& r, const std::string& mode, int parallelism_or_depth,
                    double compute = -1, std::uint64_t target = 0) {
  for (const auto& x : r.rows) {
    if (x.mode != mode) continue;
    if (target != 0 && x.chunk_target != target) continue;
    if (compute >= 0 && x.compute_ms != compute) continue;
    const int key = mode == "fetch" ? x.parallelism : x.prefetch_depth;
    if (mode == "local" || key == parallelism_or_depth) return x;
  }
  throw std::runtime_error("row not found");
}

TEST(PredictedChunks, GreedyPackingOracle) {
  for (std::size_t files = 1; files < 40; ++files) {
    for (std::size_t size = 1; size < 30; ++size) {
      for (std::uint64_t target = 1; target < 60; target += 3) {
        // Simulate the packer byte-count by byte-count.
        std::uint64_t chunks = 0, fill = 0;
        for (std::size_t f = 0; f < files; ++f) {
          if (size >= target) {
            if (fill > 0) ++chunks, fill = 0;
            chunks += (size + target - 1) / target;
          } else {
            if (fill + size > target) ++chunks, fill = 0;
            fill += size;
          }
        }
        if (fill > 0) ++chunks;
        ASSERT_EQ(predicted_chunks(files, size, target), chunks) << files << " " << size << " " << target;
      }
    }
  }
}

TEST(BenchChunks, GetCountsMatchPrediction) {
  ChunkBenchConfig c;
  c.chunk_targets = {4096, 10000, 65536};
  c.parallelism = {1, 3};
  c.perf = {};
  c.files = 37;
  c.file_size = 3000;
  const auto r = bench_chunks(c);
  ASSERT_EQ(r.rows.size(), 6u);
  for (const auto& x : r.rows) {
    EXPECT_EQ(x.gets, x.predicted_gets) << x.chunk_target;
    EXPECT_EQ(x.chunks, x.predicted_gets);
    EXPECT_EQ(x.bytes, 37u * 3000u);
    EXPECT_EQ(x.cache_hits, x.files - x.chunks);
  }
}

TEST(BenchChunks, ParallelSpeedupNearAnalytic) {
  ChunkBenchConfig c;
  c.chunk_targets = {4096};
  c.parallelism = {1, 10};
  c.perf.get_latency = 10ms;
  c.files = 100;
  c.file_size = 4096;
  const auto r = bench_chunks(c);
  const double speedup = row(r, "fetch", 1).wall_ms / row(r, "fetch", 10).wall_ms;
  EXPECT_GE(speedup, 6.0);
  EXPECT_LE(speedup, 10.0 * 1.05);
}

TEST(BenchChunks, ParallelismBeyondStoreCapSaturates) {
  ChunkBenchConfig c;
  c.chunk_targets = {4096};
  c.parallelism = {4, 16};
  c.perf.get_latency = 5ms;
  c.perf.max_parallel = 4;
  c.files = 64;
  c.file_size = 4096;
  const auto r = bench_chunks(c);
  const double ratio = row(r, "fetch", 4).wall_ms / row(r, "fetch", 16).wall_ms;
  EXPECT_LT(ratio, 1.3);
}

TEST(BenchChunks, ThroughputGrowsWithChunkSizeWhenLatencyBound) {
  ChunkBenchConfig c;
  c.chunk_targets = {16 << 10, 64 << 10, 256 << 10};
  c.parallelism = {1};
  c.perf.get_latency = 5ms;
  c.perf.bandwidth = 200u << 20;
  c.files = 64;
  c.file_size = 16 << 10;
  const auto r = bench_chunks(c);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_LT(r.rows[0].throughput_bps, r.rows[1].throughput_bps);
  EXPECT_LT(r.rows[1].throughput_bps, r.rows[2].throughput_bps);
}

TEST(BenchStream, PrefetchHidesFetchBehindCompute) {
  StreamBenchConfig c;
  c.compute_ms = {25.0};
  c.prefetch_depths = {0, 2};
  const auto r = bench_stream_vs_local(c);
  const auto& local = row(r, "local", 0, 25.0);
  const auto& d0 = row(r, "stream", 0, 25.0);
  const auto& d2 = row(r, "stream", 2, 25.0);
  EXPECT_LE(d2.wall_ms, 1.15 * local.wall_ms);
  EXPECT_LT(d2.wall_ms, d0.wall_ms);
  EXPECT_EQ(d2.gets, d2.chunks);
  EXPECT_EQ(d0.gets, d0.chunks);
}

TEST(BenchStream, NoComputeExposesFetchTime) {
  StreamBenchConfig c;
  c.compute_ms = {0.0};
  c.prefetch_depths = {2};
  const auto r = bench_stream_vs_local(c);
  const auto& local = row(r, "local", 0, 0.0);
  const auto& s = row(r, "stream", 2, 0.0);
  const double modeled_ms = static_cast<double>(s.chunks) *
                            std::chrono::duration<double, std::milli>(c.perf.get_delay(c.chunk_target)).count();
  EXPECT_GE(s.wall_ms - local.wall_ms, modeled_ms * 0.95);
}

TEST(BenchReport, CsvShape) {
  ChunkBenchConfig c;
  c.chunk_targets = {8192};
  c.parallelism = {1, 2};
  c.perf = {};
  c.files = 4;
  c.file_size = 1000;
  const std::string csv = bench_chunks(c).csv();
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, BenchReport::csv_header());
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 13);
    EXPECT_TRUE(line.starts_with("chunks,fetch,8192,"));
  }
  EXPECT_EQ(rows, 2);
}

TEST(BenchConfig, RejectsNonPositive) {
  ChunkBenchConfig c;
  c.parallelism = {0};
  EXPECT_THROW(bench_chunks(c), Error);
  StreamBenchConfig s;
  s.compute_ms = {-1};
  EXPECT_THROW(bench_stream_vs_local(s), Error);
}

}  // namespace
}  // namespace hyper::bench
