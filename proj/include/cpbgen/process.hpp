#pragma once

// Runs an external block as a child process with a watchdog.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "cpbgen/event_log.hpp"
#include "cpbgen/run_result.hpp"
#include "cpbgen/script.hpp"

extern char** environ;

namespace cpbgen::harness {

/// Environment handed to every external block. Forward variables are empty
/// for pub-sub, which has no downstream receiver.
inline std::map<std::string, std::string> contract_env(Protocol proto, const EndpointConfig& cfg,
                                                       std::uint8_t threshold) {
  return {
      {"CPB_LISTEN_HOST", cfg.listen.host},
      {"CPB_LISTEN_PORT", std::to_string(cfg.listen.port)},
      {"CPB_FORWARD_HOST", cfg.forward ? cfg.forward->host : ""},
      {"CPB_FORWARD_PORT", cfg.forward ? std::to_string(cfg.forward->port) : ""},
      {"CPB_THRESHOLD", std::to_string(threshold)},
      {"CPB_PROTOCOL", std::string(to_string(proto))},
  };
}

/// Last `max` octets of a file, or empty.
inline std::string file_tail(const std::filesystem::path& path, std::size_t max = 4096) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return {};
  std::string text = read_file(path);
  return text.size() > max ? text.substr(text.size() - max) : text;
}

class ExternalCpb : public CpbHandle {
 public:
  struct Options {
    std::vector<std::string> argv;
    std::map<std::string, std::string> env;  // added to the inherited environment
    std::chrono::milliseconds timeout{30000};
    std::filesystem::path capture_dir;  // receives stdout.txt and stderr.txt
    std::filesystem::path working_dir;  // empty: inherit
  };

  /// Throws LaunchFailure if the program cannot be executed at all.
  ExternalCpb(Options opts, EventLog* log) : opts_(std::move(opts)), log_(log) {
    if (opts_.argv.empty()) throw Error(Errc::LaunchFailure, "empty command");
    if (opts_.capture_dir.empty()) {
      opts_.capture_dir = std::filesystem::temp_directory_path() / ("cpbgen-run-" + std::to_string(::getpid()) + "-" +
                                                                  std::to_string(counter()++));
    }
    std::filesystem::create_directories(opts_.capture_dir);
    launch();
    monitor_ = std::thread([this] { watch(); });
  }

  ExternalCpb(const ExternalCpb&) = delete;
  ExternalCpb& operator=(const ExternalCpb&) = delete;

  ~ExternalCpb() override {
    stop_requested_ = true;
    if (monitor_.joinable()) monitor_.join();
  }

  pid_t pid() const { return pid_; }
  std::filesystem::path stdout_path() const { return opts_.capture_dir / "stdout.txt"; }
  std::filesystem::path stderr_path() const { return opts_.capture_dir / "stderr.txt"; }

  bool alive() override { return !reaped_.load(); }

  RunResult conclude() override {
    RunResult snapshot;
    {
      std::lock_guard lock(mu_);
      concluded_ = true;
      snapshot = result_;
    }
    stop_requested_ = true;
    if (monitor_.joinable()) monitor_.join();
    snapshot.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    snapshot.stderr_tail = file_tail(stderr_path());
    return snapshot;
  }

  /// Blocks until the child is reaped; returns the final result.
  RunResult wait() {
    if (monitor_.joinable()) monitor_.join();
    std::lock_guard lock(mu_);
    auto r = result_;
    r.stderr_tail = file_tail(stderr_path());
    return r;
  }

 private:
  static std::atomic<int>& counter() {
    static std::atomic<int> n{0};
    return n;
  }

  void launch() {
    auto out_path = stdout_path();
    auto err_path = stderr_path();
    int out_fd = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    int err_fd = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (out_fd < 0 || err_fd < 0) {
      if (out_fd >= 0) ::close(out_fd);
      if (err_fd >= 0) ::close(err_fd);
      throw Error(Errc::LaunchFailure, "cannot create capture files in " + opts_.capture_dir.string());
    }
    int status_pipe[2];
    if (::pipe2(status_pipe, O_CLOEXEC) != 0) throw Error(Errc::LaunchFailure, "pipe2 failed");

    // Build everything the child needs before fork: only async-signal-safe
    // calls are allowed afterwards.
    std::map<std::string, std::string> env;
    for (char** e = environ; *e; ++e) {
      std::string kv(*e);
      auto eq = kv.find('=');
      if (eq != std::string::npos) env[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    for (const auto& [k, v] : opts_.env) env[k] = v;
    std::vector<std::string> env_strings;
    for (const auto& [k, v] : env) env_strings.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);
    std::vector<char*> argv;
    for (auto& a : opts_.argv) argv.push_back(a.data());
    argv.push_back(nullptr);
    std::string cwd = opts_.working_dir.string();

    started_ = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
      ::close(status_pipe[0]);
      ::close(status_pipe[1]);
      ::close(out_fd);
      ::close(err_fd);
      throw Error(Errc::LaunchFailure, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
      ::setpgid(0, 0);
      int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, 0);
      ::dup2(out_fd, 1);
      ::dup2(err_fd, 2);
      if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
        int err = errno;
        [[maybe_unused]] auto n = ::write(status_pipe[1], &err, sizeof(err));
        ::_exit(127);
      }
      ::execvpe(argv[0], argv.data(), envp.data());
      int err = errno;
      [[maybe_unused]] auto n = ::write(status_pipe[1], &err, sizeof(err));
      ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(status_pipe[1]);
    ::close(out_fd);
    ::close(err_fd);
    int child_errno = 0;
    ssize_t n;
    do {
      n = ::read(status_pipe[0], &child_errno, sizeof(child_errno));
    } while (n < 0 && errno == EINTR);
    ::close(status_pipe[0]);
    if (n == static_cast<ssize_t>(sizeof(child_errno))) {
      ::waitpid(pid, nullptr, 0);
      throw Error(Errc::LaunchFailure, "cannot execute '" + opts_.argv[0] + "': " + std::strerror(child_errno));
    }
    pid_ = pid;
    std::string cmd;
    for (const auto& a : opts_.argv) cmd += (cmd.empty() ? "" : " ") + a;
    if (log_) log_->append(EventKind::ProcStart, std::string(kCpbRole), "pid " + std::to_string(pid) + ": " + cmd);
  }

  void record_exit(int wstatus, bool killed_by_us, bool timed_out) {
    std::string detail;
    {
      std::lock_guard lock(mu_);
      if (timed_out) {
        if (!concluded_) result_.status = ExitStatus::TimeoutKilled;
        detail = "timeout-killed after " + std::to_string(opts_.timeout.count()) + " ms";
      } else if (WIFEXITED(wstatus)) {
        if (!concluded_) {
          result_.status = ExitStatus::Exited;
          result_.exit_code = WEXITSTATUS(wstatus);
        }
        detail = "exit code " + std::to_string(WEXITSTATUS(wstatus));
      } else if (WIFSIGNALED(wstatus)) {
        if (!concluded_ && !killed_by_us) {
          result_.status = ExitStatus::Crashed;
          result_.signal = WTERMSIG(wstatus);
        }
        detail = (killed_by_us ? "stopped by harness (signal " : "killed by signal ") + std::to_string(WTERMSIG(wstatus)) +
                 (killed_by_us ? ")" : "");
      }
    }
    auto err = file_tail(stderr_path(), 1024);
    if (!err.empty() && !killed_by_us) detail += "; stderr: " + err;
    if (log_) log_->append(EventKind::ProcExit, std::string(kCpbRole), detail);
    reaped_ = true;
  }

  void watch() {
    auto deadline = started_ + opts_.timeout;
    while (true) {
      int wstatus = 0;
      pid_t r = ::waitpid(pid_, &wstatus, WNOHANG);
      if (r == pid_) {
        record_exit(wstatus, false, false);
        return;
      }
      if (stop_requested_) {
        ::kill(-pid_, SIGTERM);
        auto grace = std::chrono::steady_clock::now() + std::chrono::milliseconds(1000);
        while (::waitpid(pid_, &wstatus, WNOHANG) == 0) {
          if (std::chrono::steady_clock::now() > grace) {
            ::kill(-pid_, SIGKILL);
            ::waitpid(pid_, &wstatus, 0);
            break;
          }
          std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        record_exit(wstatus, true, false);
        return;
      }
      if (std::chrono::steady_clock::now() >= deadline) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &wstatus, 0);
        record_exit(wstatus, true, true);
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  Options opts_;
  EventLog* log_;
  pid_t pid_ = -1;
  std::thread monitor_;
  std::atomic<bool> stop_requested_{false};
  std::atomic<bool> reaped_{false};
  std::mutex mu_;
  bool concluded_ = false;
  RunResult result_;
  std::chrono::steady_clock::time_point started_;
};

/// Launches `argv` with the environment contract rendered from `cfg`.
inline std::unique_ptr<ExternalCpb> spawn_external_cpb(std::vector<std::string> argv, Protocol proto,
                                                       const EndpointConfig& cfg, std::uint8_t threshold,
                                                       std::chrono::milliseconds timeout, EventLog* log,
                                                       std::filesystem::path capture_dir = {},
                                                       std::filesystem::path working_dir = {}) {
  ExternalCpb::Options opts;
  opts.argv = std::move(argv);
  opts.env = contract_env(proto, cfg, threshold);
  opts.timeout = timeout;
  opts.capture_dir = std::move(capture_dir);
  opts.working_dir = std::move(working_dir);
  return std::make_unique<ExternalCpb>(std::move(opts), log);
}

}  // namespace cpbgen::harness
