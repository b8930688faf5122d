#pragma once

// Reader and checker for an external fixture corpus: deployable CPB programs
// (a baseline template, goldens, seeded faults) described by a manifest.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cpbgen/error_type.hpp"
#include "cpbgen/recorded_run.hpp"
#include "json.hpp"

namespace cpbgen::fixtures {

using nlohmann::json;

inline constexpr std::string_view kManifestName = "manifest.json";

enum class Kind { BaselineTemplate, Golden, Faulty };

inline std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::BaselineTemplate: return "baseline-template";
    case Kind::Golden: return "golden";
    case Kind::Faulty: return "faulty";
  }
  return "?";
}

inline Kind parse_kind(std::string_view text) {
  if (text == "baseline-template") return Kind::BaselineTemplate;
  if (text == "golden") return Kind::Golden;
  if (text == "faulty") return Kind::Faulty;
  throw Error(Errc::ManifestCorrupt, "unknown fixture kind '" + std::string(text) + "'");
}

struct Fixture {
  std::string id;
  Protocol proto = Protocol::Stp;
  Kind kind = Kind::Golden;
  std::optional<taxonomy::ErrorType> fault;
  std::vector<std::string> command;  // run with the manifest directory as cwd
  std::optional<std::string> witness;           // script path, relative to the manifest
  std::optional<validator::Check> stage;        // first failing check on the witness
};

struct Manifest {
  std::filesystem::path dir;
  std::vector<Fixture> fixtures;
};

inline Manifest load_manifest(const std::filesystem::path& dir) {
  Manifest m;
  m.dir = dir;
  std::string text;
  try {
    text = read_file(dir / kManifestName);
  } catch (const Error& e) {
    throw Error(Errc::ManifestCorrupt, e.detail());
  }
  try {
    auto j = json::parse(text);
    std::set<std::string> seen;
    for (const auto& f : j.at("fixtures")) {
      Fixture fx;
      fx.id = f.at("id").get<std::string>();
      if (!seen.insert(fx.id).second) throw Error(Errc::ManifestCorrupt, "duplicate fixture id '" + fx.id + "'");
      try {
        fx.proto = parse_protocol(f.at("proto").get<std::string>());
        fx.kind = parse_kind(f.at("kind").get<std::string>());
        if (f.contains("fault") && !f["fault"].is_null()) fx.fault = taxonomy::parse_error_type(f["fault"].get<std::string>());
        if (f.contains("witness")) fx.witness = f["witness"].get<std::string>();
        if (f.contains("stage")) fx.stage = validator::parse_check(f["stage"].get<std::string>());
      } catch (const Error& e) {
        throw Error(Errc::ManifestCorrupt, fx.id + ": " + e.detail());
      }
      fx.command = f.at("command").get<std::vector<std::string>>();
      if (fx.command.empty()) throw Error(Errc::ManifestCorrupt, fx.id + ": empty command");
      m.fixtures.push_back(std::move(fx));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ManifestCorrupt, (dir / kManifestName).string() + ": " + e.what());
  }
  return m;
}

/// Corpus-level rules. Returns one line per violation; empty means sound.
inline std::vector<std::string> check_invariants(const Manifest& m) {
  std::vector<std::string> problems;
  std::map<Protocol, int> golden, faulty;
  std::set<taxonomy::ErrorFamily> families;
  for (const auto& f : m.fixtures) {
    if (f.kind == Kind::Faulty) {
      ++faulty[f.proto];
      if (!f.fault) problems.push_back(f.id + ": faulty fixture without a fault type");
      else families.insert(f.fault->family);
      if (!f.witness) problems.push_back(f.id + ": faulty fixture without a witness script");
      if (!f.stage) problems.push_back(f.id + ": faulty fixture without an expected stage");
    } else {
      if (f.kind == Kind::Golden) ++golden[f.proto];
      if (f.fault) problems.push_back(f.id + ": only faulty fixtures carry a fault type");
    }
  }
  for (auto p : kAllProtocols) {
    auto name = std::string(to_string(p));
    if (golden[p] < 1) problems.push_back(name + ": no golden fixture");
    if (faulty[p] < 2) problems.push_back(name + ": fewer than 2 faulty fixtures");
  }
  if (families.size() < 7)
    problems.push_back("faulty fixtures cover " + std::to_string(families.size()) + " of 7 error families");
  return problems;
}

struct FixtureOutcome {
  std::string fixture_id;
  std::string script;
  validator::Verdict verdict;
  bool as_expected = false;
  std::string note;
};

/// Expectation per kind: golden passes, faulty fails at its stage, the
/// template passes Executes and Binds but not the whole run.
inline bool meets_expectation(const Fixture& f, const validator::Verdict& v) {
  switch (f.kind) {
    case Kind::Golden: return v.pass();
    case Kind::Faulty: return !v.pass() && f.stage && v.first_failed() == *f.stage;
    case Kind::BaselineTemplate: return !v.pass() && !v.failed(validator::Check::Executes) && !v.failed(validator::Check::Binds);
  }
  return false;
}

inline FixtureOutcome run_fixture(const Manifest& m, const Fixture& f, const harness::TrafficScript& script,
                                  const std::filesystem::path& out_dir,
                                  std::chrono::milliseconds timeout = std::chrono::milliseconds(30000)) {
  FixtureOutcome o;
  o.fixture_id = f.id;
  o.script = script.name;
  auto launcher = harness::external_launcher(f.command, f.proto, script.threshold, timeout, out_dir,
                                             std::filesystem::absolute(m.dir));
  harness::TrafficOptions opts;
  opts.timeout = timeout;
  o.verdict = record_run(script, launcher, out_dir, f.id, opts);
  o.as_expected = meets_expectation(f, o.verdict);
  if (!o.as_expected) {
    o.note = o.verdict.pass() ? "passed" : "first failure " + std::string(validator::to_string(*o.verdict.first_failed()));
  }
  return o;
}

/// Goldens and the template run every script in `scripts` of their protocol;
/// faulty fixtures run their witness.
inline std::vector<FixtureOutcome> run_all(const Manifest& m, const std::vector<harness::TrafficScript>& scripts,
                                           const std::filesystem::path& out_dir) {
  std::vector<FixtureOutcome> out;
  for (const auto& f : m.fixtures) {
    if (f.kind == Kind::Faulty) {
      if (!f.witness) {
        out.push_back({f.id, "", {}, false, "no witness script"});
        continue;
      }
      auto witness = harness::load_script(m.dir / *f.witness);
      out.push_back(run_fixture(m, f, witness, out_dir / f.id / witness.name));
      continue;
    }
    for (const auto& s : scripts) {
      if (s.proto == f.proto) out.push_back(run_fixture(m, f, s, out_dir / f.id / s.name));
    }
  }
  return out;
}

}  // namespace cpbgen::fixtures
