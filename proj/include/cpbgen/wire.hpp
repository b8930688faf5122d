#pragma once

// Binary wire formats of the three custom protocols. All multi-octet
// integers are big-endian. Frames are self-delimiting so they can be carried
// back to back on a TCP stream.
//
//   DATA     0x01 | priority(1) | payload_len(2) | payload
//   CONTROL  0x02 | congested(1)                           (0 or 1)
//   SUBSCRIBE/UNSUBSCRIBE
//            type(1) | topic_len(2) | topic
//   PUBLISH  0x03 | topic_len(2) | topic | payload_len(4) | payload
//   ACK      0x04 | acked_type(1) | topic_len(2) | topic

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "cpbgen/common.hpp"

namespace cpbgen::wire {

inline constexpr std::uint8_t kDataType = 0x01;
inline constexpr std::uint8_t kControlType = 0x02;

enum class ControlType : std::uint8_t {
  Subscribe = 0x01,
  Unsubscribe = 0x02,
  Publish = 0x03,
  Ack = 0x04,
};

// Frame policy limits enforced on decode.
inline constexpr std::size_t kMaxTopicLen = 1024;
inline constexpr std::size_t kMaxPayloadLen = std::size_t{1} << 20;
inline constexpr std::size_t kMaxDataPayloadLen = 0xffff;

inline std::string_view to_string(ControlType type) {
  switch (type) {
    case ControlType::Subscribe: return "SUBSCRIBE";
    case ControlType::Unsubscribe: return "UNSUBSCRIBE";
    case ControlType::Publish: return "PUBLISH";
    case ControlType::Ack: return "ACK";
  }
  return "?";
}

struct DataPacket {
  std::uint8_t priority = 0;
  Bytes payload;

  friend bool operator==(const DataPacket&, const DataPacket&) = default;
};

struct ControlPacket {
  bool congested = false;

  friend bool operator==(const ControlPacket&, const ControlPacket&) = default;
};

/// One pub-sub control message. `payload` is meaningful for PUBLISH only and
/// `acked_type` for ACK only; the factory functions keep the unused fields at
/// their defaults so that equality stays structural.
struct PubSubMessage {
  ControlType type = ControlType::Subscribe;
  std::string topic;
  Bytes payload;
  ControlType acked_type = ControlType::Subscribe;

  friend bool operator==(const PubSubMessage&, const PubSubMessage&) = default;
};

inline PubSubMessage subscribe(std::string topic) {
  return {ControlType::Subscribe, std::move(topic), {}, ControlType::Subscribe};
}
inline PubSubMessage unsubscribe(std::string topic) {
  return {ControlType::Unsubscribe, std::move(topic), {}, ControlType::Subscribe};
}
inline PubSubMessage publish(std::string topic, Bytes payload) {
  return {ControlType::Publish, std::move(topic), std::move(payload), ControlType::Subscribe};
}
inline PubSubMessage ack(ControlType acked, std::string topic) {
  return {ControlType::Ack, std::move(topic), {}, acked};
}

using Packet = std::variant<DataPacket, ControlPacket, PubSubMessage>;

/// True if `packet` may appear on a connection of `family`.
inline bool belongs_to(const Packet& packet, Protocol family) {
  switch (family) {
    case Protocol::Stp: return std::holds_alternative<DataPacket>(packet);
    case Protocol::Cc: return !std::holds_alternative<PubSubMessage>(packet);
    case Protocol::PubSub: return std::holds_alternative<PubSubMessage>(packet);
  }
  return false;
}

/// Short human-readable summary used in logs and diagnostics.
inline std::string describe(const Packet& packet) {
  auto printable = [](const Bytes& bytes) {
    std::string out;
    for (auto b : bytes) {
      if (b >= 0x20 && b < 0x7f) {
        out.push_back(static_cast<char>(b));
      } else {
        return "0x" + to_hex(bytes);
      }
    }
    return "\"" + out + "\"";
  };
  if (auto* data = std::get_if<DataPacket>(&packet)) {
    return "DATA prio=" + std::to_string(data->priority) + " payload=" + printable(data->payload);
  }
  if (auto* ctrl = std::get_if<ControlPacket>(&packet)) {
    return std::string("CONTROL congested=") + (ctrl->congested ? "1" : "0");
  }
  const auto& msg = std::get<PubSubMessage>(packet);
  std::string out(to_string(msg.type));
  out += " topic=\"" + msg.topic + "\"";
  if (msg.type == ControlType::Publish) out += " payload=" + printable(msg.payload);
  if (msg.type == ControlType::Ack) out += " acked=" + std::string(to_string(msg.acked_type));
  return out;
}

namespace detail {

inline void put_u16(Bytes& out, std::size_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(Bytes& out, std::size_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline std::size_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
  return std::size_t{in[at]} << 8 | in[at + 1];
}

inline std::size_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  return std::size_t{in[at]} << 24 | std::size_t{in[at + 1]} << 16 | std::size_t{in[at + 2]} << 8 |
         in[at + 3];
}

inline void put_topic(Bytes& out, const std::string& topic) {
  if (topic.size() > 0xffff) throw Error(Errc::EncodingOverflow, "topic longer than 65535 octets");
  put_u16(out, topic.size());
  out.insert(out.end(), topic.begin(), topic.end());
}

}  // namespace detail

/// Returns the offset of the first octet that makes `text` an invalid topic,
/// or nullopt when it is acceptable. Topics are non-empty UTF-8 text without
/// C0 control characters or DEL. With `complete == false` the text is a prefix
/// of a longer topic and a multi-octet sequence cut off at the end is allowed.
inline std::optional<std::size_t> topic_error_offset(std::span<const std::uint8_t> text,
                                                     bool complete = true) {
  if (text.empty()) return complete ? std::optional<std::size_t>(0) : std::nullopt;
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint8_t c = text[i];
    if (c < 0x20 || c == 0x7f) return i;
    if (c < 0x80) {
      ++i;
      continue;
    }
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if ((c & 0xe0) == 0xc0) {
      extra = 1;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      extra = 2;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return i;
    }
    std::size_t present = std::min(extra, text.size() - i - 1);
    for (std::size_t k = 1; k <= present; ++k) {
      if ((text[i + k] & 0xc0) != 0x80) return i;
      cp = cp << 6 | (text[i + k] & 0x3f);
    }
    if (present < extra) return complete ? std::optional<std::size_t>(i) : std::nullopt;
    static constexpr std::uint32_t kMinForLength[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMinForLength[extra] || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return i;
    i += extra + 1;
  }
  return std::nullopt;
}

/// Serializes a packet. Throws EncodingOverflow when a length does not fit
/// its field and InvalidField for messages that violate their own invariants
/// (e.g. an ACK acknowledging a PUBLISH).
inline Bytes encode(const Packet& packet) {
  Bytes out;
  if (auto* data = std::get_if<DataPacket>(&packet)) {
    if (data->payload.size() > kMaxDataPayloadLen) {
      throw Error(Errc::EncodingOverflow, "DATA payload longer than 65535 octets");
    }
    out.reserve(4 + data->payload.size());
    out.push_back(kDataType);
    out.push_back(data->priority);
    detail::put_u16(out, data->payload.size());
    out.insert(out.end(), data->payload.begin(), data->payload.end());
    return out;
  }
  if (auto* ctrl = std::get_if<ControlPacket>(&packet)) {
    return {kControlType, static_cast<std::uint8_t>(ctrl->congested ? 1 : 0)};
  }
  const auto& msg = std::get<PubSubMessage>(packet);
  out.push_back(static_cast<std::uint8_t>(msg.type));
  switch (msg.type) {
    case ControlType::Subscribe:
    case ControlType::Unsubscribe:
      detail::put_topic(out, msg.topic);
      break;
    case ControlType::Publish:
      if (msg.payload.size() > 0xffffffffULL) {
        throw Error(Errc::EncodingOverflow, "PUBLISH payload longer than 2^32-1 octets");
      }
      detail::put_topic(out, msg.topic);
      detail::put_u32(out, msg.payload.size());
      out.insert(out.end(), msg.payload.begin(), msg.payload.end());
      break;
    case ControlType::Ack:
      if (msg.acked_type != ControlType::Subscribe && msg.acked_type != ControlType::Unsubscribe) {
        throw Error(Errc::InvalidField, "ACK may only acknowledge SUBSCRIBE or UNSUBSCRIBE");
      }
      out.push_back(static_cast<std::uint8_t>(msg.acked_type));
      detail::put_topic(out, msg.topic);
      break;
  }
  return out;
}

enum class DecodeStatus {
  Ok,
  NeedMoreData,
  UnknownDiscriminant,
  LengthMismatch,
  MalformedTopic,
  InvalidField,
};

inline std::string_view to_string(DecodeStatus status) {
  switch (status) {
    case DecodeStatus::Ok: return "Ok";
    case DecodeStatus::NeedMoreData: return "NeedMoreData";
    case DecodeStatus::UnknownDiscriminant: return "UnknownDiscriminant";
    case DecodeStatus::LengthMismatch: return "LengthMismatch";
    case DecodeStatus::MalformedTopic: return "MalformedTopic";
    case DecodeStatus::InvalidField: return "InvalidField";
  }
  return "?";
}

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NeedMoreData;
  std::optional<Packet> packet;
  std::size_t consumed = 0;      // valid when status == Ok
  std::size_t error_offset = 0;  // offset of the offending octet on failure

  bool ok() const { return status == DecodeStatus::Ok; }
  bool incomplete() const { return status == DecodeStatus::NeedMoreData; }
  bool failed() const { return !ok() && !incomplete(); }
};

namespace detail {

inline DecodeResult fail(DecodeStatus status, std::size_t offset) {
  DecodeResult r;
  r.status = status;
  r.error_offset = offset;
  return r;
}

inline DecodeResult done(Packet packet, std::size_t consumed) {
  DecodeResult r;
  r.status = DecodeStatus::Ok;
  r.packet = std::move(packet);
  r.consumed = consumed;
  return r;
}

inline const DecodeResult kNeedMore{};

// Reads topic_len + topic starting at `at`. On success `end` is the offset
// just past the topic.
inline std::optional<DecodeResult> read_topic(std::span<const std::uint8_t> in, std::size_t at,
                                              std::string& topic, std::size_t& end) {
  if (in.size() < at + 2) return kNeedMore;
  std::size_t len = get_u16(in, at);
  if (len == 0) return fail(DecodeStatus::MalformedTopic, at);
  if (len > kMaxTopicLen) return fail(DecodeStatus::LengthMismatch, at);
  // Validate whatever part of the topic is already here so that field-order
  // errors surface without waiting for octets that may never arrive.
  std::size_t avail = std::min(len, in.size() - (at + 2));
  auto text = in.subspan(at + 2, avail);
  if (auto bad = topic_error_offset(text, avail == len)) {
    return fail(DecodeStatus::MalformedTopic, at + 2 + *bad);
  }
  if (avail < len) return kNeedMore;
  topic.assign(text.begin(), text.end());
  end = at + 2 + len;
  return std::nullopt;
}

}  // namespace detail

/// Decodes one frame from the front of `in`. Never throws; incomplete input
/// yields NeedMoreData, which is not a failure.
inline DecodeResult decode(std::span<const std::uint8_t> in, Protocol family) {
  if (in.empty()) return detail::kNeedMore;
  std::uint8_t type = in[0];

  if (family == Protocol::Stp || family == Protocol::Cc) {
    if (type == kDataType) {
      if (in.size() < 4) return detail::kNeedMore;
      std::size_t len = detail::get_u16(in, 2);
      if (in.size() < 4 + len) return detail::kNeedMore;
      DataPacket data{in[1], Bytes(in.begin() + 4, in.begin() + 4 + static_cast<std::ptrdiff_t>(len))};
      return detail::done(std::move(data), 4 + len);
    }
    if (type == kControlType && family == Protocol::Cc) {
      if (in.size() < 2) return detail::kNeedMore;
      if (in[1] > 1) return detail::fail(DecodeStatus::InvalidField, 1);
      return detail::done(ControlPacket{in[1] == 1}, 2);
    }
    return detail::fail(DecodeStatus::UnknownDiscriminant, 0);
  }

  switch (static_cast<ControlType>(type)) {
    case ControlType::Subscribe:
    case ControlType::Unsubscribe: {
      std::string topic;
      std::size_t end = 0;
      if (auto r = detail::read_topic(in, 1, topic, end)) return *r;
      return detail::done(PubSubMessage{static_cast<ControlType>(type), std::move(topic), {}, ControlType::Subscribe}, end);
    }
    case ControlType::Publish: {
      std::string topic;
      std::size_t end = 0;
      if (auto r = detail::read_topic(in, 1, topic, end)) return *r;
      if (in.size() < end + 4) return detail::kNeedMore;
      std::size_t len = detail::get_u32(in, end);
      if (len > kMaxPayloadLen) return detail::fail(DecodeStatus::LengthMismatch, end);
      if (in.size() < end + 4 + len) return detail::kNeedMore;
      auto first = in.begin() + static_cast<std::ptrdiff_t>(end + 4);
      return detail::done(publish(std::move(topic), Bytes(first, first + static_cast<std::ptrdiff_t>(len))),
                          end + 4 + len);
    }
    case ControlType::Ack: {
      if (in.size() < 2) return detail::kNeedMore;
      auto acked = static_cast<ControlType>(in[1]);
      if (acked != ControlType::Subscribe && acked != ControlType::Unsubscribe) {
        return detail::fail(DecodeStatus::UnknownDiscriminant, 1);
      }
      std::string topic;
      std::size_t end = 0;
      if (auto r = detail::read_topic(in, 2, topic, end)) return *r;
      return detail::done(ack(acked, std::move(topic)), end);
    }
  }
  return detail::fail(DecodeStatus::UnknownDiscriminant, 0);
}

/// Incremental decoder for one TCP byte stream. After the first failure the
/// stream is considered desynchronized and no further frames are produced.
class StreamDecoder {
 public:
  explicit StreamDecoder(Protocol family) : family_(family) {}

  struct Frame {
    Packet packet;
    std::size_t stream_offset;  // offset of the frame's first octet in the stream
  };

  struct Failure {
    DecodeStatus status;
    std::size_t stream_offset;  // absolute offset of the offending octet
    std::size_t frame_offset;   // absolute offset of the broken frame
    Bytes frame_bytes;          // octets of the broken frame received so far
  };

  /// Appends a chunk and returns every frame it completes. A failure, if any,
  /// is reported through `failure()` exactly once.
  std::vector<Frame> feed(std::span<const std::uint8_t> chunk) {
    std::vector<Frame> frames;
    if (failure_) return frames;
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
    std::size_t pos = 0;
    while (pos < buffer_.size()) {
      auto r = decode(std::span(buffer_).subspan(pos), family_);
      if (r.incomplete()) break;
      if (r.failed()) {
        failure_ = Failure{r.status, base_ + pos + r.error_offset, base_ + pos,
                           Bytes(buffer_.begin() + static_cast<std::ptrdiff_t>(pos), buffer_.end())};
        fresh_failure_ = true;
        pos = buffer_.size();
        break;
      }
      frames.push_back({std::move(*r.packet), base_ + pos});
      pos += r.consumed;
    }
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos));
    base_ += pos;
    return frames;
  }

  /// Returns a failure not yet reported by a previous call.
  std::optional<Failure> take_failure() {
    if (!fresh_failure_) return std::nullopt;
    fresh_failure_ = false;
    return failure_;
  }

  bool desynchronized() const { return failure_.has_value(); }
  /// Octets of an incomplete trailing frame.
  const Bytes& pending() const { return buffer_; }
  std::size_t pending_offset() const { return base_; }

 private:
  Protocol family_;
  Bytes buffer_;
  std::size_t base_ = 0;
  std::optional<Failure> failure_;
  bool fresh_failure_ = false;
};

}  // namespace cpbgen::wire
