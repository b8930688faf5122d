#pragma once

// Labels for failed trials and the scenario x protocol report.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cpbgen/common.hpp"
#include "cpbgen/error_type.hpp"
#include "cpbgen/validator.hpp"
#include "json.hpp"

namespace cpbgen::taxonomy {

using nlohmann::json;

enum class Confidence { Low, Medium, High };

inline std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::Low: return "low";
    case Confidence::Medium: return "medium";
    case Confidence::High: return "high";
  }
  return "?";
}

struct Suggestion {
  ErrorType type;
  Confidence confidence;
  std::string evidence;
};

namespace detail {

inline void suggest(std::vector<Suggestion>& out, ErrorSubtype subtype, Confidence c, std::string evidence) {
  auto type = make_error_type(subtype);
  for (auto& s : out) {
    if (s.type == type) {
      if (c > s.confidence) {
        s.confidence = c;
        s.evidence = std::move(evidence);
      }
      return;
    }
  }
  out.push_back({type, c, std::move(evidence)});
}

/// True if `source` appears to define `name` (Python-ish heuristics).
inline bool defines(std::string_view source, const std::string& name) {
  std::string escaped = std::regex_replace(name, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)");
  std::regex def("(^|\\n)\\s*(def|class)\\s+" + escaped + "\\b|(^|[^\\w.])" + escaped +
                 "\\s*(=[^=]|:[^\\n]*=)|import\\s+[^\\n]*\\b" + escaped + "\\b|for\\s+" + escaped + "\\b");
  return std::regex_search(source.begin(), source.end(), def);
}

inline void from_stderr(std::vector<Suggestion>& out, const std::string& err, std::string_view source) {
  std::smatch m;
  if (std::regex_search(err, m, std::regex(R"(name '([A-Za-z_]\w*)' is not defined)"))) {
    std::string name = m[1];
    bool absent = !defines(source, name);
    suggest(out, ErrorSubtype::UndefinedName, absent ? Confidence::High : Confidence::Medium,
            "runtime error: name '" + name + "' is not defined" + (absent ? " and the source never defines it" : ""));
    return;
  }
  if (err.find("NameError") != std::string::npos || err.find("is not defined") != std::string::npos) {
    suggest(out, ErrorSubtype::UndefinedName, Confidence::Medium, "runtime NameError");
    return;
  }
  if (err.find("AttributeError") != std::string::npos) {
    suggest(out, ErrorSubtype::WrongMethodVariable, Confidence::Medium, "runtime AttributeError");
    return;
  }
  if (err.find("TypeError") != std::string::npos && err.find("argument") != std::string::npos) {
    suggest(out, ErrorSubtype::IncorrectFunctionArguments, Confidence::Medium, "TypeError about call arguments");
  }
}

}  // namespace detail

/// Heuristic labels for a failed trial, best first. Never certain: an
/// operator label always overrides these in reports. Empty for PASS.
inline std::vector<Suggestion> suggest_labels(const validator::Verdict& verdict, std::string_view source = {}) {
  using validator::Check;
  using validator::DivergenceKind;
  namespace site = validator::site;
  std::vector<Suggestion> out;
  if (verdict.pass()) return out;
  for (const auto& f : verdict.failures) {
    switch (f.check) {
      case Check::Executes: detail::from_stderr(out, f.stderr_tail, source); break;
      case Check::Binds: break;
      case Check::FormatConformance:
        if (f.swapped_publish_layout) {
          detail::suggest(out, ErrorSubtype::IncorrectArithmeticOperation, Confidence::High,
                          "PUBLISH frame decodes only with payload_len before the topic");
        } else {
          detail::suggest(out, ErrorSubtype::IncorrectArithmeticOperation, Confidence::Low, "malformed frame: " + f.detail);
        }
        break;
      case Check::ProtocolLogic:
        for (const auto& d : f.divergences) {
          auto ev = d.describe();
          if (d.hint == site::kThresholdBoundary) {
            detail::suggest(out, ErrorSubtype::ConstantValueError, Confidence::Medium, ev);
            detail::suggest(out, ErrorSubtype::IncorrectComparisonOperation, Confidence::Low, ev);
          } else if (d.hint == site::kCongestionGate) {
            detail::suggest(out,
                            d.kind == DivergenceKind::DiscardedDelivered ? ErrorSubtype::MissingCondition
                                                                         : ErrorSubtype::IncorrectCondition,
                            Confidence::Medium, ev);
          } else if (d.hint == site::kSendTarget) {
            detail::suggest(out, ErrorSubtype::IncorrectMethodCallTarget, Confidence::Medium, ev);
          } else if (d.hint == site::kAck) {
            if (d.kind == DivergenceKind::AckMissing) {
              detail::suggest(out, ErrorSubtype::MissingOneStatement, Confidence::Medium, ev);
            } else {
              detail::suggest(out, ErrorSubtype::IncorrectCodeBlock, Confidence::Low, ev);
            }
          } else if (d.hint == site::kFanout) {
            detail::suggest(out, ErrorSubtype::MissingMultipleStatements, Confidence::Medium, ev);
          } else if (d.hint == site::kSubscriptionUpdate) {
            detail::suggest(out, ErrorSubtype::IncorrectCodeBlock, Confidence::Medium, ev);
          }
        }
        break;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  return out;
}

/// The suggestions sharing the highest confidence.
inline std::vector<Suggestion> top_suggestions(const std::vector<Suggestion>& all) {
  std::vector<Suggestion> out;
  for (const auto& s : all) {
    if (out.empty() || s.confidence == out.front().confidence) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trial records

enum class LabelSource { Heuristic, Operator };

inline std::string_view to_string(LabelSource s) { return s == LabelSource::Heuristic ? "heuristic" : "operator"; }

struct Label {
  ErrorType type;
  LabelSource source;
  friend bool operator==(const Label&, const Label&) = default;
};

struct TrialRecord {
  std::string scenario_id;
  Protocol proto = Protocol::Stp;
  int trial = 1;
  validator::Verdict verdict;
  std::vector<Label> labels;
  std::string cause;  // upstream error that prevented a run, if any

  bool pass() const { return verdict.pass(); }

  /// Operator labels if there are any, else heuristic ones.
  std::vector<ErrorType> effective_labels() const {
    std::vector<ErrorType> op;
    std::vector<ErrorType> heur;
    for (const auto& l : labels) (l.source == LabelSource::Operator ? op : heur).push_back(l.type);
    return op.empty() ? heur : op;
  }
};

/// Appends an operator label. Throws LabelOnPass for passing trials.
inline TrialRecord record_label(TrialRecord trial, const ErrorType& type) {
  if (trial.pass()) {
    throw Error(Errc::LabelOnPass, trial.scenario_id + "/" + std::string(to_string(trial.proto)) + " trial " +
                                       std::to_string(trial.trial) + " passed");
  }
  make_error_type(type.family, type.subtype);  // closed-set check
  trial.labels.push_back({type, LabelSource::Operator});
  return trial;
}

/// Attaches the top heuristic suggestions to a failed trial.
inline void attach_heuristics(TrialRecord& trial, std::string_view source) {
  if (trial.pass()) return;
  for (const auto& s : top_suggestions(suggest_labels(trial.verdict, source))) {
    trial.labels.push_back({s.type, LabelSource::Heuristic});
  }
}

// ---------------------------------------------------------------------------
// Label file: one JSON object per trial.

inline json to_json(const TrialRecord& t) {
  json labels = json::array();
  for (const auto& l : t.labels) labels.push_back({{"type", format(l.type)}, {"source", to_string(l.source)}});
  json j{{"scenario", t.scenario_id},
         {"proto", to_string(t.proto)},
         {"trial", t.trial},
         {"outcome", t.verdict.outcome()},
         {"labels", labels}};
  auto first = t.verdict.first_failed();
  j["failed_check"] = first ? json(validator::to_string(*first)) : json(nullptr);
  if (!t.cause.empty()) j["cause"] = t.cause;
  return j;
}

inline TrialRecord trial_from_json(const json& j) {
  TrialRecord t;
  t.scenario_id = j.at("scenario").get<std::string>();
  t.proto = parse_protocol(j.at("proto").get<std::string>());
  t.trial = j.at("trial").get<int>();
  auto outcome = j.at("outcome").get<std::string>();
  if (outcome != "PASS" && outcome != "FAIL") throw Error(Errc::CorruptLog, "bad outcome '" + outcome + "'");
  if (outcome == "FAIL") {
    validator::CheckFailure f;
    f.check = j.contains("failed_check") && !j["failed_check"].is_null()
                  ? validator::parse_check(j["failed_check"].get<std::string>())
                  : validator::Check::Executes;
    f.detail = "restored from label file";
    t.verdict.failures.push_back(f);
  }
  for (const auto& l : j.value("labels", json::array())) {
    auto src = l.value("source", "operator");
    if (src != "operator" && src != "heuristic") throw Error(Errc::CorruptLog, "bad label source '" + src + "'");
    t.labels.push_back({parse_error_type(l.at("type").get<std::string>()),
                        src == "operator" ? LabelSource::Operator : LabelSource::Heuristic});
  }
  if (t.pass() && !t.labels.empty()) throw Error(Errc::LabelOnPass, "label file has labels on a passing trial");
  t.cause = j.value("cause", "");
  return t;
}

inline void write_labels(const std::filesystem::path& path, const std::vector<TrialRecord>& trials) {
  std::string text;
  for (const auto& t : trials) text += to_json(t).dump() + "\n";
  write_file(path, text);
}

inline std::vector<TrialRecord> read_labels(const std::filesystem::path& path) {
  std::vector<TrialRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(trial_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(Errc::CorruptLog, path.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == Errc::LabelOnPass) throw;
      throw Error(Errc::CorruptLog, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct ScenarioReport {
  std::string scenario_id;
  Protocol proto = Protocol::Stp;
  int pass_count = 0;
  int trials = 0;
  std::map<ErrorType, int> composition;
  int unlabeled_failures = 0;
};

/// One report per (scenario, protocol) cell. Throws IncompleteScenario when
/// a cell does not hold exactly `expected_trials` distinct trials.
inline std::vector<ScenarioReport> aggregate(const std::vector<TrialRecord>& trials, int expected_trials = 20) {
  std::map<std::pair<std::string, int>, std::vector<const TrialRecord*>> cells;
  for (const auto& t : trials) cells[{t.scenario_id, static_cast<int>(t.proto)}].push_back(&t);
  std::vector<ScenarioReport> out;
  for (const auto& [key, list] : cells) {
    std::set<int> indices;
    for (const auto* t : list) indices.insert(t->trial);
    auto name = key.first + "/" + std::string(to_string(static_cast<Protocol>(key.second)));
    if (static_cast<int>(list.size()) != expected_trials || static_cast<int>(indices.size()) != expected_trials) {
      throw Error(Errc::IncompleteScenario, name + " has " + std::to_string(indices.size()) + " distinct trials of " +
                                                std::to_string(list.size()) + " records, expected " +
                                                std::to_string(expected_trials));
    }
    ScenarioReport r;
    r.scenario_id = key.first;
    r.proto = static_cast<Protocol>(key.second);
    r.trials = expected_trials;
    for (const auto* t : list) {
      if (t->pass()) {
        ++r.pass_count;
        continue;
      }
      auto labels = t->effective_labels();
      if (labels.empty()) ++r.unlabeled_failures;
      for (const auto& l : labels) ++r.composition[l];
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// CSV: scenario,proto,row,label,count,trials
///   row = pass_rate  (label empty, count = passing trials)
///   row = error      (label = FAMILY:subtype or "unlabeled", count = occurrences)
inline std::string export_report(const std::vector<ScenarioReport>& reports) {
  std::string out = "scenario,proto,row,label,count,trials\n";
  for (const auto& r : reports) {
    auto prefix = r.scenario_id + "," + std::string(to_string(r.proto)) + ",";
    auto trials = std::to_string(r.trials);
    out += prefix + "pass_rate,," + std::to_string(r.pass_count) + "," + trials + "\n";
    for (const auto& [type, count] : r.composition) {
      out += prefix + "error," + format(type) + "," + std::to_string(count) + "," + trials + "\n";
    }
    if (r.unlabeled_failures) out += prefix + "error,unlabeled," + std::to_string(r.unlabeled_failures) + "," + trials + "\n";
  }
  return out;
}

}  // namespace cpbgen::taxonomy
