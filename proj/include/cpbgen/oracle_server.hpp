#pragma once

// Hosts a core::Behavior behind real TCP sockets, single-threaded poll loop.

#include <fcntl.h>
#include <poll.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "cpbgen/cpb_core.hpp"
#include "cpbgen/event_log.hpp"
#include "cpbgen/net.hpp"
#include "cpbgen/run_result.hpp"
#include "cpbgen/script.hpp"
#include "cpbgen/wire.hpp"

namespace cpbgen::harness {

class OracleServer : public CpbHandle {
 public:
  /// Binds synchronously (throws BindFailure), then serves on a worker thread.
  OracleServer(Protocol proto, EndpointConfig cfg, core::Behavior behavior, EventLog* log = nullptr)
      : proto_(proto), cfg_(std::move(cfg)), behavior_(std::move(behavior)), log_(log) {
    if (behavior_.protocol() != proto_) throw Error(Errc::ProtocolMismatch, "behavior protocol differs from server protocol");
    listener_ = net::listen_on(cfg_.listen);
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(Errc::IoError, "pipe2 failed");
    wake_read_ = net::Fd(fds[0]);
    wake_write_ = net::Fd(fds[1]);
    started_ = std::chrono::steady_clock::now();
    if (log_) log_->append(EventKind::ProcStart, std::string(kCpbRole), "in-process oracle (" + describe_behavior() + ") on " + cfg_.listen.str());
    worker_ = std::thread([this] { loop(); });
  }

  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  ~OracleServer() override { stop(); }

  bool alive() override { return !finished_.load(); }

  RunResult conclude() override {
    RunResult r;
    {
      std::lock_guard lock(mu_);
      if (!finished_.load()) {
        r.status = ExitStatus::Running;
      } else {
        r.status = ExitStatus::Exited;
        r.exit_code = exit_code_;
        r.stderr_tail = stderr_;
      }
    }
    bool was_running = r.status == ExitStatus::Running;
    stop();
    if (was_running && log_) log_->append(EventKind::ProcExit, std::string(kCpbRole), "stopped by harness");
    r.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return r;
  }

  /// Stops the worker; safe to call repeatedly.
  void stop() {
    if (worker_.joinable()) {
      stopping_ = true;
      char c = 1;
      [[maybe_unused]] auto n = ::write(wake_write_.get(), &c, 1);
      worker_.join();
    }
  }

  /// Blocks until the worker ends by itself (crash) or stop() is called.
  int wait() {
    if (worker_.joinable()) worker_.join();
    return exit_code_;
  }

  int exit_code() const { return exit_code_; }
  std::string stderr_text() const {
    std::lock_guard lock(mu_);
    return stderr_;
  }

 private:
  struct Conn {
    net::Fd fd;
    wire::StreamDecoder decoder;
  };

  std::string describe_behavior() const {
    std::string s(to_string(proto_));
    if (behavior_.fault()) s += ", fault " + taxonomy::format(behavior_.fault()->type) + " at " + behavior_.fault()->site;
    return s;
  }

  bool ensure_forward(std::chrono::milliseconds patience) {
    if (forward_ || !cfg_.forward) return static_cast<bool>(forward_);
    auto deadline = std::chrono::steady_clock::now() + patience;
    while (!stopping_) {
      if (auto fd = net::try_connect(*cfg_.forward)) {
        forward_ = std::move(*fd);
        return true;
      }
      if (std::chrono::steady_clock::now() >= deadline) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    return false;
  }

  void emit(const core::Action& action) {
    auto dest = core::Behavior::destination(action);
    if (!dest) return;
    auto bytes = behavior_.render(action);
    if (*dest == core::kReceiverRole) {
      if (!ensure_forward(std::chrono::milliseconds(500))) return;
      if (!net::send_all(forward_.get(), bytes)) forward_.reset();
      return;
    }
    auto it = conns_.find(*dest);
    if (it != conns_.end()) net::send_all(it->second.fd.get(), bytes);
  }

  // Returns false when the block has died.
  bool handle(const std::string& source, const wire::Packet& packet) {
    std::vector<core::Action> actions;
    try {
      actions = behavior_.step(source, packet);
    } catch (const Error& e) {
      if (e.code() != Errc::ReferenceFault) return true;  // foreign packet: ignored
      std::lock_guard lock(mu_);
      exit_code_ = 1;
      stderr_ = "Traceback (most recent call last):\n  File \"cpb.py\", in handle_unsubscribe\n" + e.detail() + "\n";
      return false;
    }
    for (const auto& a : actions) emit(a);
    return true;
  }

  void loop() {
    if (cfg_.forward) ensure_forward(std::chrono::milliseconds(2000));
    std::vector<std::uint8_t> buf(64 * 1024);
    bool dead = false;
    while (!stopping_ && !dead) {
      std::vector<pollfd> fds{{wake_read_.get(), POLLIN, 0}, {listener_.get(), POLLIN, 0}};
      std::vector<std::string> names;
      for (auto& [name, c] : conns_) {
        fds.push_back({c.fd.get(), POLLIN, 0});
        names.push_back(name);
      }
      if (forward_) fds.push_back({forward_.get(), POLLIN, 0});
      if (::poll(fds.data(), fds.size(), 200) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (fds[0].revents) break;
      if (fds[1].revents & POLLIN) {
        int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd >= 0) {
          int one = 1;
          ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
          conns_.emplace("conn-" + std::to_string(next_conn_++), Conn{net::Fd(fd), wire::StreamDecoder(proto_)});
        }
      }
      for (std::size_t i = 0; i < names.size() && !dead; ++i) {
        if (!fds[2 + i].revents) continue;
        auto it = conns_.find(names[i]);
        ssize_t n = ::recv(it->second.fd.get(), buf.data(), buf.size(), 0);
        if (n <= 0) {
          conns_.erase(it);
          continue;
        }
        auto frames = it->second.decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)));
        for (const auto& f : frames) {
          if (!handle(names[i], f.packet)) {
            dead = true;
            break;
          }
        }
        if (!dead && it->second.decoder.desynchronized()) conns_.erase(it);
      }
      if (forward_ && fds.size() > 2 + names.size() && fds.back().revents) {
        ssize_t n = ::recv(forward_.get(), buf.data(), buf.size(), 0);
        if (n <= 0) forward_.reset();
      }
    }
    conns_.clear();
    forward_.reset();
    listener_.reset();
    if (dead) {
      std::string err = stderr_text();
      if (log_) log_->append(EventKind::ProcExit, std::string(kCpbRole), "exit code 1; stderr: " + err);
    }
    finished_ = true;
  }

  Protocol proto_;
  EndpointConfig cfg_;
  core::Behavior behavior_;
  EventLog* log_;
  net::Fd listener_;
  net::Fd wake_read_;
  net::Fd wake_write_;
  net::Fd forward_;
  std::map<std::string, Conn> conns_;
  int next_conn_ = 0;
  std::thread worker_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> finished_{false};
  mutable std::mutex mu_;
  int exit_code_ = 0;
  std::string stderr_;
  std::chrono::steady_clock::time_point started_;
};

inline std::unique_ptr<OracleServer> serve_oracle(Protocol proto, const EndpointConfig& cfg, core::Behavior behavior,
                                                  EventLog* log = nullptr) {
  return std::make_unique<OracleServer>(proto, cfg, std::move(behavior), log);
}

}  // namespace cpbgen::harness
