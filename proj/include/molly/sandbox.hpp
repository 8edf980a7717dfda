#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace molly::sandbox {

struct Limits {
  std::chrono::milliseconds timeout{5000};
  std::size_t memory_mb = 1024;
  /// Fail with SandboxSetupFailure instead of running with network access
  /// when a private network namespace cannot be created.
  bool require_network_isolation = false;
};

struct ProcessResult {
  int exit_code = -1;     // valid when !signaled && !timed_out
  int signal = 0;
  bool timed_out = false;
  bool network_isolated = false;
  std::string stdout_text;
  std::string stderr_text;

  bool succeeded() const { return !timed_out && signal == 0 && exit_code == 0; }
};

/// Resolves a bare program name through PATH. Empty when not found.
std::filesystem::path find_executable(const std::string& program);

/// RAII temporary directory, removed recursively on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Runs `argv` in `cwd` as its own process group with stdin closed, a minimal
/// environment, resource limits and, where the kernel allows it, an empty
/// network namespace. The whole group is killed at the deadline.
ProcessResult run(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                  const Limits& limits);

}  // namespace molly::sandbox
