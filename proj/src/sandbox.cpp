#include "molly/sandbox.hpp"

#include <fcntl.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "molly/error.hpp"
#include "molly/kb.hpp"

namespace molly::sandbox {

std::filesystem::path find_executable(const std::string& program) {
  if (program.empty()) return {};
  if (program.find('/') != std::string::npos) {
    return ::access(program.c_str(), X_OK) == 0 ? std::filesystem::path(program)
                                                : std::filesystem::path();
  }
  const char* path_env = std::getenv("PATH");
  std::string paths = path_env ? path_env : "/usr/local/bin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= paths.size()) {
    auto end = paths.find(':', start);
    if (end == std::string::npos) end = paths.size();
    auto dir = paths.substr(start, end - start);
    if (!dir.empty()) {
      auto candidate = std::filesystem::path(dir) / program;
      if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    }
    start = end + 1;
  }
  return {};
}

TempDir::TempDir() {
  auto tmpl = (std::filesystem::temp_directory_path() / "molly-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) {
    throw Error(ErrorCode::SandboxSetupFailure, "tempdir", std::strerror(errno));
  }
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

namespace {

// Child-side failure codes reported through the status pipe.
enum : int { kChildExecFailed = 1, kChildIsolationFailed = 2, kChildSetupFailed = 3 };

[[noreturn]] void child_fail(int pipe_fd, int code) {
  int payload[2] = {code, errno};
  [[maybe_unused]] auto n = ::write(pipe_fd, payload, sizeof payload);
  ::_exit(127);
}

}  // namespace

ProcessResult run(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                  const Limits& limits) {
  if (argv.empty()) throw Error(ErrorCode::PreconditionFailed, "argv", "no program given");
  const auto out_path = cwd / ".stdout";
  const auto err_path = cwd / ".stderr";

  int status_pipe[2];
  if (::pipe2(status_pipe, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::SandboxSetupFailure, "pipe", std::strerror(errno));
  }
  // Isolation outcome: 1 byte written by the child before exec.
  int iso_pipe[2];
  if (::pipe2(iso_pipe, O_CLOEXEC) != 0) {
    ::close(status_pipe[0]);
    ::close(status_pipe[1]);
    throw Error(ErrorCode::SandboxSetupFailure, "pipe", std::strerror(errno));
  }

  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const std::string home = "HOME=" + cwd.string();
  std::vector<std::string> env_strings = {"PATH=/usr/local/bin:/usr/bin:/bin", home,
                                          "LANG=C.UTF-8", "PYTHONDONTWRITEBYTECODE=1",
                                          "PYTHONIOENCODING=utf-8"};
  std::vector<char*> cenv;
  for (auto& e : env_strings) cenv.push_back(e.data());
  cenv.push_back(nullptr);

  const auto cpu_secs =
      static_cast<rlim_t>(std::chrono::ceil<std::chrono::seconds>(limits.timeout).count() + 1);
  const pid_t pid = ::fork();
  if (pid < 0) {
    throw Error(ErrorCode::SandboxSetupFailure, "fork", std::strerror(errno));
  }
  if (pid == 0) {
    ::close(status_pipe[0]);
    ::close(iso_pipe[0]);
    ::setpgid(0, 0);
    char isolated = ::unshare(CLONE_NEWUSER | CLONE_NEWNET) == 0 ? 1 : 0;
    if (!isolated && limits.require_network_isolation) child_fail(status_pipe[1], kChildIsolationFailed);
    [[maybe_unused]] auto n = ::write(iso_pipe[1], &isolated, 1);
    if (::chdir(cwd.c_str()) != 0) child_fail(status_pipe[1], kChildSetupFailed);
    const int in = ::open("/dev/null", O_RDONLY);
    const int out = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    const int err = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    if (in < 0 || out < 0 || err < 0) child_fail(status_pipe[1], kChildSetupFailed);
    ::dup2(in, 0);
    ::dup2(out, 1);
    ::dup2(err, 2);
    rlimit cpu{cpu_secs, cpu_secs + 1};
    ::setrlimit(RLIMIT_CPU, &cpu);
    rlimit core{0, 0};
    ::setrlimit(RLIMIT_CORE, &core);
    if (limits.memory_mb > 0) {
      const rlim_t bytes = static_cast<rlim_t>(limits.memory_mb) * 1024 * 1024;
      rlimit as{bytes, bytes};
      ::setrlimit(RLIMIT_AS, &as);
    }
    ::execve(cargv[0], cargv.data(), cenv.data());
    child_fail(status_pipe[1], kChildExecFailed);
  }

  ::close(status_pipe[1]);
  ::close(iso_pipe[1]);
  ::setpgid(pid, pid);

  ProcessResult result;
  const auto deadline = std::chrono::steady_clock::now() + limits.timeout;
  int wstatus = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &wstatus, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &wstatus, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  // Reap anything the snippet left behind in its group.
  ::kill(-pid, SIGKILL);

  char isolated = 0;
  if (::read(iso_pipe[0], &isolated, 1) == 1) result.network_isolated = isolated != 0;
  ::close(iso_pipe[0]);
  int failure[2] = {0, 0};
  const auto got = ::read(status_pipe[0], failure, sizeof failure);
  ::close(status_pipe[0]);
  if (got == static_cast<ssize_t>(sizeof failure)) {
    const std::string why = std::strerror(failure[1]);
    if (failure[0] == kChildIsolationFailed) {
      throw Error(ErrorCode::SandboxSetupFailure, "network",
                  "cannot create a private network namespace: " + why);
    }
    if (failure[0] == kChildExecFailed) {
      throw Error(ErrorCode::InterpreterMissing, argv[0], "exec failed: " + why);
    }
    throw Error(ErrorCode::SandboxSetupFailure, cwd.string(), why);
  }

  if (!result.timed_out) {
    if (WIFEXITED(wstatus)) {
      result.exit_code = WEXITSTATUS(wstatus);
    } else if (WIFSIGNALED(wstatus)) {
      result.signal = WTERMSIG(wstatus);
    }
  }
  std::error_code ec;
  if (std::filesystem::exists(out_path, ec)) result.stdout_text = kb::read_file(out_path);
  if (std::filesystem::exists(err_path, ec)) result.stderr_text = kb::read_file(err_path);
  return result;
}

}  // namespace molly::sandbox
