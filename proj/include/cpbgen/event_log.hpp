#pragma once

// Run log: harness-side observations, one JSON object per line.
//
//   {"seq":3,"ts_us":1042,"event":"RX","role":"receiver","conn":0,
//    "detail":"DATA prio=7 payload=\"a\"","raw":"0107000161"}

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cpbgen/common.hpp"
#include "json.hpp"

namespace cpbgen::harness {

enum class EventKind { ProcStart, ProcExit, ConnOk, ConnFail, Tx, Rx, DecodeErr };

inline std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::ProcStart: return "PROC_START";
    case EventKind::ProcExit: return "PROC_EXIT";
    case EventKind::ConnOk: return "CONN_OK";
    case EventKind::ConnFail: return "CONN_FAIL";
    case EventKind::Tx: return "TX";
    case EventKind::Rx: return "RX";
    case EventKind::DecodeErr: return "DECODE_ERR";
  }
  return "?";
}

inline std::optional<EventKind> parse_event_kind(std::string_view text) {
  for (auto kind : {EventKind::ProcStart, EventKind::ProcExit, EventKind::ConnOk, EventKind::ConnFail, EventKind::Tx,
                    EventKind::Rx, EventKind::DecodeErr}) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

/// Role name used for lifecycle events of the block under test.
inline constexpr std::string_view kCpbRole = "cpb";

struct EventRecord {
  std::uint64_t seq = 0;  // tiebreak counter; strictly increasing within a run
  std::int64_t ts_us = 0;  // monotonic microseconds since the log was opened
  EventKind event = EventKind::Rx;
  std::string role;
  std::string detail;
  std::optional<Bytes> raw;
  std::optional<int> conn;  // connection index within the role

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

inline nlohmann::json to_json(const EventRecord& rec) {
  nlohmann::json j{{"seq", rec.seq},
                   {"ts_us", rec.ts_us},
                   {"event", to_string(rec.event)},
                   {"role", rec.role},
                   {"detail", rec.detail}};
  if (rec.conn) j["conn"] = *rec.conn;
  if (rec.raw) j["raw"] = to_hex(*rec.raw);
  return j;
}

inline EventRecord parse_event_line(std::string_view line, std::size_t line_no = 0) {
  auto corrupt = [&](const std::string& why) {
    return Error(Errc::CorruptLog, "line " + std::to_string(line_no) + ": " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(e.what());
  }
  if (!j.is_object()) throw corrupt("not an object");
  EventRecord rec;
  try {
    rec.seq = j.at("seq").get<std::uint64_t>();
    rec.ts_us = j.at("ts_us").get<std::int64_t>();
    auto kind = parse_event_kind(j.at("event").get<std::string>());
    if (!kind) throw corrupt("unknown event '" + j.at("event").get<std::string>() + "'");
    rec.event = *kind;
    rec.role = j.at("role").get<std::string>();
    rec.detail = j.value("detail", "");
    if (j.contains("conn")) rec.conn = j.at("conn").get<int>();
    if (j.contains("raw")) rec.raw = from_hex(j.at("raw").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw corrupt(e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptLog) throw;
    throw corrupt(e.what());
  }
  return rec;
}

/// Parses a whole log; throws CorruptLog on the first bad line.
inline std::vector<EventRecord> parse_log(std::string_view text) {
  std::vector<EventRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(parse_event_line(line, line_no));
    pos = end + 1;
  }
  return out;
}

inline std::vector<EventRecord> read_log(const std::filesystem::path& path) { return parse_log(read_file(path)); }

/// Shared, internally synchronized sink. Every appended record receives the
/// next sequence number and a timestamp under the same lock, so file order,
/// seq order and timestamp order agree.
class EventLog {
 public:
  EventLog() : origin_(std::chrono::steady_clock::now()) {}
  explicit EventLog(const std::filesystem::path& path) : EventLog() {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_.open(path, std::ios::trunc);
    if (!file_) throw Error(Errc::IoError, "cannot open run log " + path.string());
    path_ = path;
  }

  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  EventRecord append(EventKind kind, std::string role, std::string detail, std::optional<Bytes> raw = std::nullopt,
                     std::optional<int> conn = std::nullopt) {
    std::lock_guard lock(mu_);
    EventRecord rec;
    rec.seq = next_seq_++;
    auto now = std::chrono::steady_clock::now();
    rec.ts_us = std::max(last_ts_, std::chrono::duration_cast<std::chrono::microseconds>(now - origin_).count());
    last_ts_ = rec.ts_us;
    rec.event = kind;
    rec.role = std::move(role);
    rec.detail = std::move(detail);
    rec.raw = std::move(raw);
    rec.conn = conn;
    if (file_.is_open()) {
      file_ << to_json(rec).dump() << '\n';
      file_.flush();
    }
    records_.push_back(rec);
    return rec;
  }

  std::vector<EventRecord> snapshot() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  mutable std::mutex mu_;
  std::chrono::steady_clock::time_point origin_;
  std::int64_t last_ts_ = 0;
  std::uint64_t next_seq_ = 0;
  std::vector<EventRecord> records_;
  std::ofstream file_;
  std::optional<std::filesystem::path> path_;
};

}  // namespace cpbgen::harness
