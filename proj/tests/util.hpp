#pragma once

// Shared helpers for the test binaries: fixture paths and scratch directories.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace testutil {

inline std::filesystem::path tests_dir() {
  return std::filesystem::path(TB_TEST_DATA_DIR);
}

inline std::filesystem::path repo_dir() {
  return tests_dir().parent_path();
}

inline std::filesystem::path data_dir() {
  return repo_dir() / "data";
}

// Fresh scratch directory under the system temp root; callers own cleanup,
// but stale directories are harmless there.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::mt19937_64 rng{std::random_device{}()};
  const std::filesystem::path dir = std::filesystem::temp_directory_path() /
                                    ("triggerbench-" + tag + "-" + std::to_string(rng()));
  std::filesystem::create_directories(dir);
  return dir;
}

struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& tag) : path(scratch_dir(tag)) {}
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  operator const std::filesystem::path&() const { return path; }
};

}  // namespace testutil
