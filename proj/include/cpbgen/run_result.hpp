#pragma once

#include <memory>
#include <string>

#include "cpbgen/common.hpp"
#include "json.hpp"

namespace cpbgen::harness {

enum class ExitStatus {
  Running,        // still alive when the script ended (the expected case for a server)
  Exited,         // exited on its own; see exit_code
  Crashed,        // killed by a signal it did not receive from the harness
  TimeoutKilled,  // killed by the watchdog
  LaunchFailed,   // never started
};

inline std::string_view to_string(ExitStatus s) {
  switch (s) {
    case ExitStatus::Running: return "running";
    case ExitStatus::Exited: return "exited";
    case ExitStatus::Crashed: return "crashed";
    case ExitStatus::TimeoutKilled: return "timeout-killed";
    case ExitStatus::LaunchFailed: return "launch-failed";
  }
  return "?";
}

inline ExitStatus parse_exit_status(std::string_view text) {
  for (auto s : {ExitStatus::Running, ExitStatus::Exited, ExitStatus::Crashed, ExitStatus::TimeoutKilled,
                 ExitStatus::LaunchFailed}) {
    if (to_string(s) == text) return s;
  }
  throw Error(Errc::CorruptLog, "unknown exit status '" + std::string(text) + "'");
}

struct RunResult {
  ExitStatus status = ExitStatus::Running;
  int exit_code = 0;  // Exited only
  int signal = 0;     // Crashed only
  std::string log_path;
  double duration_s = 0;
  bool script_completed = false;
  std::string stderr_tail;
  std::string detail;
};

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json j{{"status", to_string(r.status)},         {"exit_code", r.exit_code},
                   {"signal", r.signal},                     {"log_path", r.log_path},
                   {"duration_s", r.duration_s},             {"script_completed", r.script_completed},
                   {"stderr_tail", r.stderr_tail},           {"detail", r.detail}};
  return j;
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  try {
    r.status = parse_exit_status(j.at("status").get<std::string>());
    r.exit_code = j.value("exit_code", 0);
    r.signal = j.value("signal", 0);
    r.log_path = j.value("log_path", "");
    r.duration_s = j.value("duration_s", 0.0);
    r.script_completed = j.value("script_completed", false);
    r.stderr_tail = j.value("stderr_tail", "");
    r.detail = j.value("detail", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptLog, std::string("run result: ") + e.what());
  }
  return r;
}

/// A running block under test, hosted in-process or as a subprocess.
class CpbHandle {
 public:
  virtual ~CpbHandle() = default;
  virtual bool alive() = 0;
  /// Records the status as of now, then stops the block. Called once, when
  /// the traffic script is done.
  virtual RunResult conclude() = 0;
};

}  // namespace cpbgen::harness
