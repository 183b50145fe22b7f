#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hyper/objectstore.hpp"
#include "hyper/rng.hpp"

namespace hyper::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hyper-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Bytes random_bytes(Xoshiro256& gen, std::size_t size) {
  Bytes b(size);
  for (auto& x : b) x = static_cast<std::uint8_t>(gen());
  return b;
}

inline void write_file(const std::filesystem::path& p, const Bytes& data) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

inline Bytes read_local(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Writes `count` files with random nested paths and sizes in [0, max_size];
// returns relative path -> contents.
inline std::map<std::string, Bytes> write_random_tree(const std::filesystem::path& root,
                                                      Xoshiro256& gen, std::size_t count,
                                                      std::size_t max_size) {
  std::map<std::string, Bytes> files;
  for (std::size_t i = 0; i < count; ++i) {
    std::string rel;
    const std::size_t depth = gen.below(3);
    for (std::size_t d = 0; d < depth; ++d) rel += "d" + std::to_string(gen.below(4)) + "/";
    rel += "f" + std::to_string(i) + ".bin";
    const std::size_t size = gen.chance(0.1) ? 0 : gen.below(max_size + 1);
    Bytes data = random_bytes(gen, size);
    write_file(root / rel, data);
    files[rel] = std::move(data);
  }
  return files;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace hyper::testing
