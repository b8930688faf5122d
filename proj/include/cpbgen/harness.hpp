#pragma once

// Drives scripted TCP traffic at a block and records everything on the wire.

#include <poll.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "cpbgen/event_log.hpp"
#include "cpbgen/net.hpp"
#include "cpbgen/oracle_server.hpp"
#include "cpbgen/process.hpp"
#include "cpbgen/run_result.hpp"
#include "cpbgen/script.hpp"
#include "cpbgen/wire.hpp"

namespace cpbgen::harness {

using namespace std::chrono_literals;

struct TrafficOptions {
  std::chrono::milliseconds connect_window{3000};  // measured from launch
  std::chrono::milliseconds settle{250};           // quiet period after the last step
  std::chrono::milliseconds max_drain{3000};
  std::chrono::milliseconds timeout{30000};        // hard limit for the whole run
  std::chrono::milliseconds margin{5000};          // required slack between script length and timeout
};

/// Harness side of one run: the downstream receiver (STP/CC) and one
/// connection per script role. Each connection has its own reader thread.
class TrafficSession {
 public:
  TrafficSession(Protocol proto, EndpointConfig cfg, EventLog& log, TrafficOptions opts = {})
      : proto_(proto), cfg_(std::move(cfg)), log_(log), opts_(opts) {}

  TrafficSession(const TrafficSession&) = delete;
  TrafficSession& operator=(const TrafficSession&) = delete;

  ~TrafficSession() { close(); }

  /// Binds the forward address so the block can connect as soon as it starts.
  void open_receiver() {
    if (!cfg_.forward) return;
    receiver_listener_ = net::listen_on(*cfg_.forward);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  /// Connects every role, retrying until the window closes or the block dies.
  /// Returns true if all roles connected.
  bool connect_roles(const std::vector<std::string>& roles, const std::function<bool()>& cpb_alive,
                     std::chrono::steady_clock::time_point launched) {
    bool all = true;
    auto deadline = launched + opts_.connect_window;
    for (const auto& role : roles) {
      auto it = cfg_.role_ports.find(role);
      Address addr = it != cfg_.role_ports.end() ? it->second : cfg_.listen;
      std::optional<net::Fd> fd;
      int last_errno = 0;
      bool died = false;
      while (true) {
        fd = net::try_connect(addr);
        if (fd) break;
        last_errno = errno;
        if (!cpb_alive()) {
          died = true;
          break;
        }
        if (std::chrono::steady_clock::now() >= deadline) break;
        std::this_thread::sleep_for(25ms);
      }
      if (!fd) {
        all = false;
        std::string why = died ? "block is not running" : std::string("gave up after connect window: ") + std::strerror(last_errno);
        log_.append(EventKind::ConnFail, role, "connect " + addr.str() + ": " + why);
        continue;
      }
      log_.append(EventKind::ConnOk, role, "connected to " + addr.str(), std::nullopt, 0);
      add_peer(role, 0, std::move(*fd));
    }
    return all;
  }

  /// Executes every step at its delay.
  void play(const TrafficScript& script) {
    for (const auto& step : script.steps) {
      if (step.delay_ms) std::this_thread::sleep_for(std::chrono::milliseconds(step.delay_ms));
      auto bytes = wire::encode(step.packet);
      int fd = -1;
      {
        std::lock_guard lock(mu_);
        for (auto& p : peers_) {
          if (p->role == step.role && p->outbound) fd = p->fd.get();
        }
      }
      if (fd < 0) {
        log_.append(EventKind::Tx, step.role, "not sent, no connection: " + wire::describe(step.packet));
        continue;
      }
      // Log before sending so a fast reply cannot precede its cause in the log.
      log_.append(EventKind::Tx, step.role, wire::describe(step.packet), bytes, 0);
      if (!net::send_all(fd, bytes)) {
        log_.append(EventKind::Tx, step.role, std::string("send failed, connection lost: ") + std::strerror(errno), std::nullopt, 0);
      }
      touch();
    }
    touch();
  }

  /// Waits until no octet has arrived for `settle`, bounded by `max_drain`.
  void settle() {
    auto hard = std::chrono::steady_clock::now() + opts_.max_drain;
    while (std::chrono::steady_clock::now() < hard) {
      auto idle = std::chrono::steady_clock::now() - last_activity();
      if (idle >= opts_.settle) return;
      std::this_thread::sleep_for(10ms);
    }
  }

  /// From now on, a closed stream is expected (the harness is stopping the
  /// block) and is no longer logged as a lost connection.
  void wind_down() { winding_down_ = true; }

  void close() {
    if (closed_.exchange(true)) return;
    {
      std::lock_guard lock(mu_);
      for (auto& p : peers_) ::shutdown(p->fd.get(), SHUT_RDWR);
    }
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::unique_ptr<Peer>> peers;
    {
      std::lock_guard lock(mu_);
      peers.swap(peers_);
    }
    for (auto& p : peers) {
      ::shutdown(p->fd.get(), SHUT_RDWR);
      if (p->reader.joinable()) p->reader.join();
    }
    receiver_listener_.reset();
  }

 private:
  struct Peer {
    std::string role;
    int conn = 0;
    bool outbound = false;
    net::Fd fd;
    std::thread reader;
  };

  void touch() {
    std::lock_guard lock(activity_mu_);
    last_activity_ = std::chrono::steady_clock::now();
  }
  std::chrono::steady_clock::time_point last_activity() {
    std::lock_guard lock(activity_mu_);
    return last_activity_;
  }

  void add_peer(std::string role, int conn, net::Fd fd, bool outbound = true) {
    auto peer = std::make_unique<Peer>();
    peer->role = std::move(role);
    peer->conn = conn;
    peer->outbound = outbound;
    peer->fd = std::move(fd);
    Peer* raw = peer.get();
    std::lock_guard lock(mu_);
    if (closed_) return;
    peers_.push_back(std::move(peer));
    raw->reader = std::thread([this, raw] { read_loop(*raw); });
  }

  void accept_loop() {
    int next_conn = 0;
    while (!closed_) {
      pollfd pfd{receiver_listener_.get(), POLLIN, 0};
      int r = ::poll(&pfd, 1, 50);
      if (r <= 0) continue;
      int fd = ::accept4(receiver_listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      int conn = next_conn++;
      log_.append(EventKind::ConnOk, std::string(core::kReceiverRole), "accepted connection from block", std::nullopt, conn);
      add_peer(std::string(core::kReceiverRole), conn, net::Fd(fd), false);
    }
  }

  void read_loop(Peer& peer) {
    wire::StreamDecoder decoder(proto_);
    std::vector<std::uint8_t> buf(64 * 1024);
    while (true) {
      ssize_t n = ::recv(peer.fd.get(), buf.data(), buf.size(), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      touch();
      std::span chunk(buf.data(), static_cast<std::size_t>(n));
      auto frames = decoder.feed(chunk);
      std::string detail;
      for (const auto& f : frames) detail += (detail.empty() ? "" : "; ") + wire::describe(f.packet);
      if (detail.empty()) detail = decoder.desynchronized() ? "undecodable octets" : "partial frame";
      log_.append(EventKind::Rx, peer.role, detail, Bytes(chunk.begin(), chunk.end()), peer.conn);
      if (auto failure = decoder.take_failure()) {
        log_.append(EventKind::DecodeErr, peer.role,
                    std::string(wire::to_string(failure->status)) + " at stream offset " +
                        std::to_string(failure->stream_offset) + " (frame starts at " +
                        std::to_string(failure->frame_offset) + ")",
                    failure->frame_bytes, peer.conn);
      }
    }
    if (!decoder.desynchronized() && !decoder.pending().empty()) {
      log_.append(EventKind::DecodeErr, peer.role,
                  "truncated frame at stream offset " + std::to_string(decoder.pending_offset()) + ": stream closed",
                  decoder.pending(), peer.conn);
    }
    if (!closed_ && !winding_down_) log_.append(EventKind::Rx, peer.role, "eof", std::nullopt, peer.conn);
  }

  Protocol proto_;
  EndpointConfig cfg_;
  EventLog& log_;
  TrafficOptions opts_;
  net::Fd receiver_listener_;
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::unique_ptr<Peer>> peers_;
  std::atomic<bool> closed_{false};
  std::atomic<bool> winding_down_{false};
  std::mutex activity_mu_;
  std::chrono::steady_clock::time_point last_activity_ = std::chrono::steady_clock::now();
};

/// Starts the block under test; receives the endpoints and the run log.
using Launcher = std::function<std::unique_ptr<CpbHandle>(const EndpointConfig&, EventLog&)>;

/// One complete run: receiver up, block launched, roles connected, script
/// played, output drained, block stopped. The returned status is the one
/// observed when the script ended.
inline RunResult run_session(const TrafficScript& script, const EndpointConfig& cfg, const Launcher& launch,
                             EventLog& log, TrafficOptions opts = {}) {
  script.validate();
  cfg.validate(script.proto);
  if (script.total_delay() + opts.settle + opts.margin > opts.timeout) {
    throw Error(Errc::ConfigError, "script needs " + std::to_string(script.total_delay().count()) +
                                       " ms, leaving less than the required margin before the " +
                                       std::to_string(opts.timeout.count()) + " ms timeout");
  }
  auto begin = std::chrono::steady_clock::now();
  TrafficSession session(script.proto, cfg, log, opts);
  session.open_receiver();

  std::unique_ptr<CpbHandle> handle;
  RunResult failed_launch;
  try {
    handle = launch(cfg, log);
  } catch (const Error& e) {
    if (e.code() != Errc::LaunchFailure && e.code() != Errc::BindFailure) throw;
    failed_launch.status = ExitStatus::LaunchFailed;
    failed_launch.detail = e.what();
    log.append(EventKind::ProcExit, std::string(kCpbRole), std::string("launch failed: ") + e.what());
  }
  auto launched = std::chrono::steady_clock::now();
  auto alive = [&] { return handle && handle->alive(); };

  session.connect_roles(script.roles, alive, launched);
  session.play(script);
  session.settle();

  session.wind_down();
  RunResult result = handle ? handle->conclude() : failed_launch;
  session.close();
  result.script_completed = true;
  result.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  if (log.path()) result.log_path = log.path()->string();
  return result;
}

/// Launcher hosting `behavior` in-process.
inline Launcher oracle_launcher(core::Behavior behavior) {
  return [behavior](const EndpointConfig& cfg, EventLog& log) -> std::unique_ptr<CpbHandle> {
    return serve_oracle(behavior.protocol(), cfg, behavior, &log);
  };
}

/// Launcher for an external program following the environment contract.
inline Launcher external_launcher(std::vector<std::string> argv, Protocol proto, std::uint8_t threshold,
                                  std::chrono::milliseconds timeout, std::filesystem::path capture_dir = {},
                                  std::filesystem::path working_dir = {}) {
  return [=](const EndpointConfig& cfg, EventLog& log) -> std::unique_ptr<CpbHandle> {
    return spawn_external_cpb(argv, proto, cfg, threshold, timeout, &log, capture_dir, working_dir);
  };
}

}  // namespace cpbgen::harness
