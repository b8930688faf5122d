#pragma once

// Four-stage functional validation of a finished run.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cpbgen/cpb_core.hpp"
#include "cpbgen/event_log.hpp"
#include "cpbgen/run_result.hpp"
#include "cpbgen/script.hpp"
#include "cpbgen/wire.hpp"
#include "json.hpp"

namespace cpbgen::validator {

using harness::EventKind;
using harness::EventRecord;
using nlohmann::json;

enum class Check { Executes, Binds, FormatConformance, ProtocolLogic };

inline constexpr Check kAllChecks[] = {Check::Executes, Check::Binds, Check::FormatConformance, Check::ProtocolLogic};

inline std::string_view to_string(Check c) {
  switch (c) {
    case Check::Executes: return "Executes";
    case Check::Binds: return "Binds";
    case Check::FormatConformance: return "FormatConformance";
    case Check::ProtocolLogic: return "ProtocolLogic";
  }
  return "?";
}

inline Check parse_check(std::string_view text) {
  for (auto c : kAllChecks) {
    if (to_string(c) == text) return c;
  }
  throw Error(Errc::CorruptLog, "unknown check '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Observed trace

struct ObservedPacket {
  wire::Packet packet;
  int conn = 0;
  std::size_t log_line = 0;  // RX line holding the frame's first octet
};

struct ObservedDecodeFailure {
  std::string role;
  int conn = 0;
  wire::DecodeStatus status;
  std::size_t stream_offset = 0;
  std::size_t frame_offset = 0;
  Bytes frame_bytes;  // everything from the broken frame to the end of the stream
  std::size_t log_line = 0;
};

struct ObservedTrace {
  std::map<std::string, std::vector<ObservedPacket>> per_role;
  std::vector<ObservedDecodeFailure> failures;
};

/// Rebuilds what each harness role received from the RX dumps alone.
inline ObservedTrace reconstruct(const std::vector<EventRecord>& log, Protocol proto) {
  struct Stream {
    Bytes bytes;
    std::vector<std::pair<std::size_t, std::size_t>> chunk_starts;  // (stream offset, log line)
  };
  std::map<std::pair<std::string, int>, Stream> streams;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    if (r.event != EventKind::Rx || !r.raw || r.raw->empty()) continue;
    auto& s = streams[{r.role, r.conn.value_or(0)}];
    s.chunk_starts.push_back({s.bytes.size(), i + 1});
    s.bytes.insert(s.bytes.end(), r.raw->begin(), r.raw->end());
  }
  auto line_of = [](const Stream& s, std::size_t offset) {
    std::size_t line = 0;
    for (const auto& [start, l] : s.chunk_starts) {
      if (start > offset) break;
      line = l;
    }
    return line;
  };
  ObservedTrace out;
  for (const auto& [key, s] : streams) {
    auto& packets = out.per_role[key.first];
    std::size_t pos = 0;
    while (pos < s.bytes.size()) {
      auto r = wire::decode(std::span(s.bytes).subspan(pos), proto);
      if (r.ok()) {
        packets.push_back({std::move(*r.packet), key.second, line_of(s, pos)});
        pos += r.consumed;
        continue;
      }
      // A trailing incomplete frame is a failure too: the block stopped mid-frame.
      auto status = r.incomplete() ? wire::DecodeStatus::NeedMoreData : r.status;
      out.failures.push_back({key.first, key.second, status, pos + r.error_offset, pos,
                              Bytes(s.bytes.begin() + static_cast<std::ptrdiff_t>(pos), s.bytes.end()),
                              line_of(s, pos)});
      break;
    }
  }
  for (auto& [role, packets] : out.per_role) {
    std::stable_sort(packets.begin(), packets.end(), [](const auto& a, const auto& b) { return a.log_line < b.log_line; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace comparison

enum class DivergenceKind { Missing, Unexpected, Mismatch, DiscardedDelivered, AckMissing, AckUnexpected };

inline std::string_view to_string(DivergenceKind k) {
  switch (k) {
    case DivergenceKind::Missing: return "missing";
    case DivergenceKind::Unexpected: return "unexpected";
    case DivergenceKind::Mismatch: return "mismatch";
    case DivergenceKind::DiscardedDelivered: return "discarded-delivered";
    case DivergenceKind::AckMissing: return "ack-missing";
    case DivergenceKind::AckUnexpected: return "ack-unexpected";
  }
  return "?";
}

inline DivergenceKind parse_divergence_kind(std::string_view text) {
  for (auto k : {DivergenceKind::Missing, DivergenceKind::Unexpected, DivergenceKind::Mismatch,
                 DivergenceKind::DiscardedDelivered, DivergenceKind::AckMissing, DivergenceKind::AckUnexpected}) {
    if (to_string(k) == text) return k;
  }
  throw Error(Errc::CorruptLog, "unknown divergence kind '" + std::string(text) + "'");
}

/// Behavior site a divergence most likely points at.
namespace site {
inline constexpr std::string_view kThresholdBoundary = "threshold-boundary";
inline constexpr std::string_view kAdmission = "admission";
inline constexpr std::string_view kCongestionGate = "congestion-gate";
inline constexpr std::string_view kSendTarget = "send-target";
inline constexpr std::string_view kAck = "ack";
inline constexpr std::string_view kFanout = "fanout";
inline constexpr std::string_view kSubscriptionUpdate = "subscription-update";
}  // namespace site

struct Divergence {
  std::string role;
  DivergenceKind kind = DivergenceKind::Mismatch;
  std::size_t position = 0;  // index in the role's sequence (or ACK multiset rank)
  std::optional<wire::Packet> expected;
  std::optional<wire::Packet> observed;
  std::optional<std::size_t> step;  // script step that caused it, when known
  std::string hint;
  std::vector<std::size_t> log_lines;

  std::string describe() const {
    std::string s = role + ": " + std::string(to_string(kind)) + " at position " + std::to_string(position);
    if (expected) s += ", expected " + wire::describe(*expected);
    if (observed) s += ", observed " + wire::describe(*observed);
    if (step) s += " (script step " + std::to_string(*step) + ")";
    return s;
  }
};

namespace detail {

struct ExpectedPacket {
  wire::Packet packet;
  std::size_t step;
};

inline bool is_ack(const wire::Packet& p) {
  const auto* m = std::get_if<wire::PubSubMessage>(&p);
  return m && m->type == wire::ControlType::Ack;
}

inline std::optional<std::size_t> step_of(const std::vector<core::Input>* inputs, const wire::Packet& packet,
                                          const std::string& role) {
  if (!inputs) return std::nullopt;
  for (std::size_t i = 0; i < inputs->size(); ++i) {
    const auto& in = (*inputs)[i];
    if (in.packet == packet) return i;
    if (const auto* m = std::get_if<wire::PubSubMessage>(&packet)) {
      const auto* src = std::get_if<wire::PubSubMessage>(&in.packet);
      if (!src) continue;
      if (m->type == wire::ControlType::Ack && src->topic == m->topic && src->type == m->acked_type && in.source == role) {
        return i;
      }
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Per-role comparison. Cross-role interleaving is ignored; ACKs are matched
/// as a per-client multiset; packets the oracle discarded must not show up.
/// At most one sequence divergence and one ACK divergence per role.
inline std::vector<Divergence> compare_traces(const core::ActionTrace& expected, const ObservedTrace& observed,
                                              const std::vector<core::Input>* inputs = nullptr) {
  using detail::ExpectedPacket;
  std::map<std::string, std::vector<ExpectedPacket>> want;
  std::vector<wire::Packet> discarded;
  for (const auto& ta : expected) {
    const auto& a = ta.action;
    if (const auto* f = std::get_if<core::Forward>(&a)) want[f->destination].push_back({f->packet, ta.input_index});
    if (const auto* d = std::get_if<core::Discard>(&a)) discarded.push_back(d->packet);
    if (const auto* k = std::get_if<core::SendAck>(&a)) {
      want[k->client].push_back({wire::ack(k->acked_type, k->topic), ta.input_index});
    }
    if (const auto* d = std::get_if<core::Deliver>(&a)) want[d->client].push_back({d->message, ta.input_index});
  }
  std::vector<std::string> roles;
  for (const auto& [r, _] : want) roles.push_back(r);
  for (const auto& [r, _] : observed.per_role) {
    if (!want.count(r)) roles.push_back(r);
  }
  std::sort(roles.begin(), roles.end());

  std::vector<Divergence> out;
  static const std::vector<ExpectedPacket> kNoExpected;
  static const std::vector<ObservedPacket> kNoObserved;
  for (const auto& role : roles) {
    auto wit = want.find(role);
    auto oit = observed.per_role.find(role);
    const auto& all_e = wit != want.end() ? wit->second : kNoExpected;
    const auto& all_o = oit != observed.per_role.end() ? oit->second : kNoObserved;

    std::vector<const ExpectedPacket*> e;
    std::vector<const ObservedPacket*> o;
    std::vector<const ExpectedPacket*> e_ack;
    std::vector<const ObservedPacket*> o_ack;
    for (const auto& x : all_e) (detail::is_ack(x.packet) ? e_ack : e).push_back(&x);
    for (const auto& x : all_o) (detail::is_ack(x.packet) ? o_ack : o).push_back(&x);

    std::size_t i = 0;
    while (i < e.size() && i < o.size() && e[i]->packet == o[i]->packet) ++i;
    if (i < e.size() || i < o.size()) {
      Divergence d;
      d.role = role;
      d.position = i;
      bool has_e = i < e.size();
      bool has_o = i < o.size();
      if (has_e && !has_o) {
        d.kind = DivergenceKind::Missing;
      } else if (has_o && !has_e) {
        d.kind = DivergenceKind::Unexpected;
      } else if (i + 1 < e.size() && e[i + 1]->packet == o[i]->packet) {
        d.kind = DivergenceKind::Missing;
      } else if (i + 1 < o.size() && o[i + 1]->packet == e[i]->packet) {
        d.kind = DivergenceKind::Unexpected;
      } else {
        d.kind = DivergenceKind::Mismatch;
      }
      if (has_e && d.kind != DivergenceKind::Unexpected) {
        d.expected = e[i]->packet;
        d.step = e[i]->step;
      }
      if (has_o && d.kind != DivergenceKind::Missing) {
        d.observed = o[i]->packet;
        d.log_lines.push_back(o[i]->log_line);
        if (std::find(discarded.begin(), discarded.end(), o[i]->packet) != discarded.end()) {
          d.kind = DivergenceKind::DiscardedDelivered;
          d.expected.reset();
        }
        if (!d.step) d.step = detail::step_of(inputs, o[i]->packet, role);
      }
      out.push_back(std::move(d));
    }

    // ACK multiset, keyed by encoded octets.
    std::map<Bytes, std::vector<const ExpectedPacket*>> ea;
    std::map<Bytes, std::vector<const ObservedPacket*>> oa;
    for (const auto* x : e_ack) ea[wire::encode(x->packet)].push_back(x);
    for (const auto* x : o_ack) oa[wire::encode(x->packet)].push_back(x);
    std::optional<Divergence> ack_div;
    for (const auto& [key, list] : ea) {
      auto have = oa.count(key) ? oa[key].size() : 0;
      if (have < list.size()) {
        Divergence d;
        d.role = role;
        d.kind = DivergenceKind::AckMissing;
        d.position = have;
        d.expected = list[have]->packet;
        d.step = list[have]->step;
        if (!ack_div || *d.step < ack_div->step.value_or(SIZE_MAX)) ack_div = d;
      }
    }
    if (!ack_div) {
      for (const auto& [key, list] : oa) {
        auto need = ea.count(key) ? ea[key].size() : 0;
        if (list.size() > need) {
          Divergence d;
          d.role = role;
          d.kind = DivergenceKind::AckUnexpected;
          d.position = need;
          d.observed = list[need]->packet;
          d.log_lines.push_back(list[need]->log_line);
          d.step = detail::step_of(inputs, list[need]->packet, role);
          ack_div = d;
          break;
        }
      }
    }
    if (ack_div) out.push_back(std::move(*ack_div));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verdict

struct CheckFailure {
  Check check = Check::Executes;
  std::string detail;
  std::vector<std::size_t> log_lines;  // 1-based lines of the run log
  std::vector<Divergence> divergences;  // ProtocolLogic
  std::optional<wire::DecodeStatus> decode_status;  // FormatConformance
  std::optional<std::size_t> decode_offset;
  bool swapped_publish_layout = false;  // the broken frame parses as payload_len-before-topic
  std::string stderr_tail;              // Executes
};

struct Verdict {
  std::string trial_id;
  std::vector<CheckFailure> failures;
  std::vector<Check> skipped;

  bool pass() const { return failures.empty(); }
  std::string_view outcome() const { return pass() ? "PASS" : "FAIL"; }

  std::optional<Check> first_failed() const {
    if (failures.empty()) return std::nullopt;
    return failures.front().check;
  }
  bool failed(Check c) const {
    return std::any_of(failures.begin(), failures.end(), [c](const auto& f) { return f.check == c; });
  }
};

inline json to_json(const Divergence& d) {
  json j{{"role", d.role}, {"kind", to_string(d.kind)}, {"position", d.position}, {"hint", d.hint}, {"log_lines", d.log_lines}};
  if (d.expected) j["expected"] = harness::packet_to_json(*d.expected);
  if (d.observed) j["observed"] = harness::packet_to_json(*d.observed);
  j["step"] = d.step ? json(*d.step) : json(nullptr);
  j["summary"] = d.describe();
  return j;
}

inline Divergence divergence_from_json(const json& j) {
  Divergence d;
  d.role = j.at("role").get<std::string>();
  d.kind = parse_divergence_kind(j.at("kind").get<std::string>());
  d.position = j.value("position", std::size_t{0});
  d.hint = j.value("hint", "");
  d.log_lines = j.value("log_lines", std::vector<std::size_t>{});
  if (j.contains("expected")) d.expected = harness::packet_from_json(j["expected"]);
  if (j.contains("observed")) d.observed = harness::packet_from_json(j["observed"]);
  if (j.contains("step") && !j["step"].is_null()) d.step = j["step"].get<std::size_t>();
  return d;
}

inline json to_json(const Verdict& v) {
  json failures = json::array();
  for (const auto& f : v.failures) {
    json jf{{"check", to_string(f.check)}, {"detail", f.detail}, {"log_lines", f.log_lines}};
    if (!f.divergences.empty()) {
      json ds = json::array();
      for (const auto& d : f.divergences) ds.push_back(to_json(d));
      jf["divergences"] = ds;
    }
    if (f.decode_status) {
      jf["decode"] = {{"status", wire::to_string(*f.decode_status)},
                      {"offset", f.decode_offset.value_or(0)},
                      {"swapped_publish_layout", f.swapped_publish_layout}};
    }
    if (!f.stderr_tail.empty()) jf["stderr_tail"] = f.stderr_tail;
    failures.push_back(jf);
  }
  json skipped = json::array();
  for (auto c : v.skipped) skipped.push_back(to_string(c));
  return json{{"trial_id", v.trial_id}, {"outcome", v.outcome()}, {"failures", failures}, {"skipped", skipped}};
}

inline wire::DecodeStatus parse_decode_status(std::string_view text) {
  using S = wire::DecodeStatus;
  for (auto s : {S::Ok, S::NeedMoreData, S::UnknownDiscriminant, S::LengthMismatch, S::MalformedTopic, S::InvalidField}) {
    if (wire::to_string(s) == text) return s;
  }
  throw Error(Errc::CorruptLog, "unknown decode status '" + std::string(text) + "'");
}

inline Verdict verdict_from_json(const json& j) {
  Verdict v;
  try {
    v.trial_id = j.value("trial_id", "");
    for (const auto& jf : j.at("failures")) {
      CheckFailure f;
      f.check = parse_check(jf.at("check").get<std::string>());
      f.detail = jf.value("detail", "");
      f.log_lines = jf.value("log_lines", std::vector<std::size_t>{});
      if (jf.contains("divergences")) {
        for (const auto& d : jf["divergences"]) f.divergences.push_back(divergence_from_json(d));
      }
      if (jf.contains("decode")) {
        f.decode_status = parse_decode_status(jf["decode"].at("status").get<std::string>());
        f.decode_offset = jf["decode"].value("offset", std::size_t{0});
        f.swapped_publish_layout = jf["decode"].value("swapped_publish_layout", false);
      }
      f.stderr_tail = jf.value("stderr_tail", "");
      v.failures.push_back(std::move(f));
    }
    for (const auto& s : j.value("skipped", json::array())) v.skipped.push_back(parse_check(s.get<std::string>()));
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptLog, std::string("verdict: ") + e.what());
  }
  return v;
}

namespace detail {

/// True if `frame` is a complete PUBLISH in the payload_len-before-topic
/// layout: type | topic_len | payload_len | topic | payload.
inline bool parses_as_payload_len_first(std::span<const std::uint8_t> frame) {
  if (frame.size() < 7 || frame[0] != static_cast<std::uint8_t>(wire::ControlType::Publish)) return false;
  auto topic_len = wire::detail::get_u16(frame, 1);
  auto payload_len = wire::detail::get_u32(frame, 3);
  if (topic_len == 0 || topic_len > wire::kMaxTopicLen || payload_len > wire::kMaxPayloadLen) return false;
  if (frame.size() < 7 + topic_len + payload_len) return false;
  return !wire::topic_error_offset(frame.subspan(7, topic_len)).has_value();
}

inline bool is_transmitter_side(const std::string& role) { return role != core::kReceiverRole; }

/// Congestion flag in force when step `step` is processed by the oracle.
inline bool congested_at(const harness::TrafficScript& script, std::size_t step) {
  bool congested = script.initially_congested;
  for (std::size_t i = 0; i < step && i < script.steps.size(); ++i) {
    if (const auto* c = std::get_if<wire::ControlPacket>(&script.steps[i].packet)) congested = c->congested;
  }
  return congested;
}

inline std::string hint_for(const Divergence& d, const harness::TrafficScript& script) {
  const auto& p = d.expected ? *d.expected : *d.observed;
  if (const auto* data = std::get_if<wire::DataPacket>(&p)) {
    if (d.observed && is_transmitter_side(d.role)) return std::string(site::kSendTarget);
    int prio = data->priority;
    int th = script.threshold;
    if (script.proto == Protocol::Cc && prio < th) return std::string(site::kCongestionGate);
    if (prio == th || (script.proto == Protocol::Stp && prio == th - 1)) return std::string(site::kThresholdBoundary);
    return std::string(site::kAdmission);
  }
  if (d.kind == DivergenceKind::AckMissing || d.kind == DivergenceKind::AckUnexpected) return std::string(site::kAck);
  if (d.kind == DivergenceKind::Missing || d.kind == DivergenceKind::Mismatch) return std::string(site::kFanout);
  return std::string(site::kSubscriptionUpdate);
}

}  // namespace detail

/// Pure function of (script, log, result): same inputs, same Verdict.
inline Verdict validate_run(const harness::TrafficScript& script, const std::vector<EventRecord>& log,
                            const harness::RunResult& result, std::string trial_id = {}) {
  Verdict v;
  v.trial_id = std::move(trial_id);
  auto lines_where = [&](auto pred) {
    std::vector<std::size_t> lines;
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (pred(log[i])) lines.push_back(i + 1);
    }
    return lines;
  };

  // (i) Executes: still running when the script ended.
  if (result.status != harness::ExitStatus::Running || !result.script_completed) {
    CheckFailure f;
    f.check = Check::Executes;
    switch (result.status) {
      case harness::ExitStatus::Exited: f.detail = "exited with code " + std::to_string(result.exit_code) + " before the script ended"; break;
      case harness::ExitStatus::Crashed: f.detail = "crashed with signal " + std::to_string(result.signal); break;
      case harness::ExitStatus::TimeoutKilled: f.detail = "killed by the watchdog timeout"; break;
      case harness::ExitStatus::LaunchFailed: f.detail = "could not be launched: " + result.detail; break;
      case harness::ExitStatus::Running: f.detail = "traffic script did not complete"; break;
    }
    f.stderr_tail = result.stderr_tail;
    f.log_lines = lines_where([](const auto& r) { return r.event == EventKind::ProcExit; });
    v.failures.push_back(std::move(f));
  }

  // (ii) Binds.
  auto conn_fail = lines_where([](const auto& r) { return r.event == EventKind::ConnFail; });
  if (!conn_fail.empty()) {
    CheckFailure f;
    f.check = Check::Binds;
    f.detail = log[conn_fail.front() - 1].role + ": " + log[conn_fail.front() - 1].detail;
    f.log_lines = conn_fail;
    v.failures.push_back(std::move(f));
    v.skipped = {Check::FormatConformance, Check::ProtocolLogic};
    return v;
  }

  // (iii) FormatConformance.
  auto observed = reconstruct(log, script.proto);
  auto decode_err = lines_where([](const auto& r) { return r.event == EventKind::DecodeErr; });
  if (!decode_err.empty() || !observed.failures.empty()) {
    CheckFailure f;
    f.check = Check::FormatConformance;
    f.log_lines = decode_err;
    if (!observed.failures.empty()) {
      const auto& first = observed.failures.front();
      f.decode_status = first.status;
      f.decode_offset = first.stream_offset - first.frame_offset;
      f.swapped_publish_layout = script.proto == Protocol::PubSub && detail::parses_as_payload_len_first(first.frame_bytes);
      f.detail = first.role + ": " + std::string(wire::to_string(first.status)) + " at octet " +
                 std::to_string(*f.decode_offset) + " of the frame starting at stream offset " +
                 std::to_string(first.frame_offset);
      if (f.swapped_publish_layout) f.detail += "; the frame parses with payload_len placed before the topic";
      if (f.log_lines.empty()) f.log_lines.push_back(first.log_line);
    } else {
      f.detail = log[decode_err.front() - 1].role + ": " + log[decode_err.front() - 1].detail;
    }
    v.failures.push_back(std::move(f));
  }

  // (iv) ProtocolLogic.
  auto inputs = script.inputs();
  auto expected = core::expected_trace(script.proto, script.oracle_config(), inputs);
  auto divergences = compare_traces(expected, observed, &inputs);
  if (!divergences.empty()) {
    // Point "missing" divergences at the TX line of their cause.
    std::vector<std::size_t> step_lines;
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (log[i].event == EventKind::Tx && log[i].detail.rfind("send failed", 0) != 0) step_lines.push_back(i + 1);
    }
    for (auto& d : divergences) {
      d.hint = detail::hint_for(d, script);
      if (d.log_lines.empty() && d.step && *d.step < step_lines.size()) d.log_lines.push_back(step_lines[*d.step]);
    }
    CheckFailure f;
    f.check = Check::ProtocolLogic;
    f.detail = divergences.front().describe();
    if (divergences.size() > 1) f.detail += " (+" + std::to_string(divergences.size() - 1) + " more)";
    for (const auto& d : divergences) f.log_lines.insert(f.log_lines.end(), d.log_lines.begin(), d.log_lines.end());
    f.divergences = std::move(divergences);
    v.failures.push_back(std::move(f));
  }
  return v;
}

/// Artifact names inside one trial directory.
namespace files {
inline constexpr std::string_view kScript = "script.json";
inline constexpr std::string_view kLog = "run.log";
inline constexpr std::string_view kResult = "run-result.json";
inline constexpr std::string_view kVerdict = "verdict";
}  // namespace files

inline void write_verdict(const std::filesystem::path& path, const Verdict& v) {
  write_file(path, to_json(v).dump(2) + "\n");
}

inline Verdict read_verdict(const std::filesystem::path& path) {
  try {
    return verdict_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptLog, path.string() + ": " + e.what());
  }
}

/// Re-validates a stored run directory (script.json, run.log, run-result.json).
inline Verdict validate_dir(const std::filesystem::path& dir, std::string trial_id = {}) {
  auto script = harness::load_script(dir / files::kScript);
  auto log = harness::read_log(dir / files::kLog);
  harness::RunResult result;
  try {
    result = harness::run_result_from_json(json::parse(read_file(dir / files::kResult)));
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptLog, std::string("run result: ") + e.what());
  }
  return validate_run(script, log, result, std::move(trial_id));
}

}  // namespace cpbgen::validator
