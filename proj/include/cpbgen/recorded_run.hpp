#pragma once

#include <filesystem>
#include <string>

#include "cpbgen/harness.hpp"
#include "cpbgen/validator.hpp"

namespace cpbgen {

/// Runs `script` against whatever `launch` starts and leaves a replayable
/// trial directory behind: script.json, run.log, run-result.json, verdict.
inline validator::Verdict record_run(const harness::TrafficScript& script, const harness::Launcher& launch,
                                     const std::filesystem::path& dir, std::string trial_id = {},
                                     harness::TrafficOptions opts = {}) {
  namespace files = validator::files;
  std::filesystem::create_directories(dir);
  harness::save_script(dir / files::kScript, script);
  std::filesystem::remove(dir / files::kLog);
  auto cfg = harness::allocate_endpoints(script.proto, script.roles);
  write_file(dir / "config.json", harness::to_json(cfg).dump(2) + "\n");
  harness::EventLog log(dir / files::kLog);
  auto result = harness::run_session(script, cfg, launch, log, opts);
  write_file(dir / files::kResult, harness::to_json(result).dump(2) + "\n");
  auto verdict = validator::validate_run(script, log.snapshot(), result, std::move(trial_id));
  validator::write_verdict(dir / files::kVerdict, verdict);
  return verdict;
}

}  // namespace cpbgen
