#pragma once

// Reference state machines for the three processing blocks, plus the
// fault-injection hooks used to build deliberately wrong variants.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cpbgen/common.hpp"
#include "cpbgen/error_type.hpp"
#include "cpbgen/wire.hpp"

namespace cpbgen::core {

/// Harness role that receives forwarded STP/CC traffic.
inline constexpr std::string_view kReceiverRole = "receiver";

enum class DiscardReason {
  BelowThreshold,           // STP admission rule
  BelowThresholdCongested,  // CC: below threshold while congested
};

inline std::string_view to_string(DiscardReason reason) {
  switch (reason) {
    case DiscardReason::BelowThreshold: return "below-threshold";
    case DiscardReason::BelowThresholdCongested: return "below-threshold-congested";
  }
  return "?";
}

struct Forward {
  wire::DataPacket packet;
  std::string destination;
  friend bool operator==(const Forward&, const Forward&) = default;
};

struct Discard {
  wire::DataPacket packet;
  DiscardReason reason;
  friend bool operator==(const Discard&, const Discard&) = default;
};

struct SendAck {
  std::string client;
  wire::ControlType acked_type;
  std::string topic;
  friend bool operator==(const SendAck&, const SendAck&) = default;
};

struct Deliver {
  std::string client;
  wire::PubSubMessage message;
  friend bool operator==(const Deliver&, const Deliver&) = default;
};

using Action = std::variant<Forward, Discard, SendAck, Deliver>;

struct StpState {
  std::uint8_t threshold = 5;
  std::deque<wire::DataPacket> tx_queue;
};

struct CcState {
  std::uint8_t threshold = 5;
  bool congested = false;
  std::deque<wire::DataPacket> tx_queue;
};

struct BrokerState {
  // topic -> subscribers in subscription order. Topics without subscribers
  // are erased so that two states with equal subscriptions compare equal.
  std::map<std::string, std::vector<std::string>> subscriptions;

  friend bool operator==(const BrokerState&, const BrokerState&) = default;
};

template <typename State>
struct StepResult {
  State state;
  std::vector<Action> actions;
};

/// Corrupts exactly one behavior site of a protocol's oracle.
struct FaultSpec {
  taxonomy::ErrorType type;
  std::string site;
  friend bool operator==(const FaultSpec&, const FaultSpec&) = default;
};

/// (protocol, site, error type) combinations the oracle knows how to corrupt.
struct FaultSite {
  Protocol proto;
  std::string_view site;
  taxonomy::ErrorSubtype subtype;
  std::string_view mutation;
};

inline const std::vector<FaultSite>& fault_sites() {
  using S = taxonomy::ErrorSubtype;
  static const std::vector<FaultSite> sites{
      {Protocol::Stp, "threshold", S::ConstantValueError, "threshold constant off by one"},
      {Protocol::Stp, "admission-compare", S::IncorrectComparisonOperation, "'>' used instead of '>='"},
      {Protocol::Stp, "forward-send", S::IncorrectMethodCallTarget, "admitted packet sent back to its sender"},
      {Protocol::Cc, "threshold", S::ConstantValueError, "threshold constant off by one"},
      {Protocol::Cc, "congestion-gate", S::MissingCondition, "congestion check dropped"},
      {Protocol::Cc, "congestion-gate", S::IncorrectCondition, "congestion check inverted"},
      {Protocol::Cc, "forward-send", S::IncorrectMethodCallTarget, "admitted packet sent back to its sender"},
      {Protocol::Cc, "control-update", S::MissingOneStatement, "congestion flag never stored"},
      {Protocol::PubSub, "subscribe-ack", S::MissingOneStatement, "SUBSCRIBE is not acknowledged"},
      {Protocol::PubSub, "unsubscribe-handler", S::UndefinedName, "handler references an undefined name"},
      {Protocol::PubSub, "unsubscribe-handler", S::IncorrectCodeBlock, "UNSUBSCRIBE runs the SUBSCRIBE body"},
      {Protocol::PubSub, "publish-fanout", S::MissingMultipleStatements, "fan-out loop removed"},
      {Protocol::PubSub, "publish-encode", S::IncorrectArithmeticOperation,
       "payload_len serialized before the topic"},
  };
  return sites;
}

inline std::vector<std::string_view> sites_of(Protocol proto) {
  std::vector<std::string_view> out;
  for (const auto& s : fault_sites()) {
    if (s.proto == proto && std::find(out.begin(), out.end(), s.site) == out.end()) out.push_back(s.site);
  }
  return out;
}

namespace detail {

inline bool at(const FaultSpec* fault, std::string_view site, taxonomy::ErrorSubtype subtype) {
  return fault && fault->site == site && fault->type.subtype == subtype;
}

inline std::uint8_t corrupt_threshold(std::uint8_t threshold) {
  return threshold == 255 ? std::uint8_t{254} : static_cast<std::uint8_t>(threshold + 1);
}

inline std::vector<Action> admit_or_discard(std::deque<wire::DataPacket>& queue, const wire::DataPacket& packet,
                                            bool admit, DiscardReason reason, const std::string& source,
                                            const FaultSpec* fault) {
  using S = taxonomy::ErrorSubtype;
  std::vector<Action> actions;
  if (!admit) {
    actions.push_back(Discard{packet, reason});
    return actions;
  }
  queue.push_back(packet);
  // FCFS: the queue is drained in admission order right away.
  while (!queue.empty()) {
    std::string dest(kReceiverRole);
    if (at(fault, "forward-send", S::IncorrectMethodCallTarget)) dest = source;
    actions.push_back(Forward{std::move(queue.front()), std::move(dest)});
    queue.pop_front();
  }
  return actions;
}

inline StepResult<StpState> stp_step(StpState state, const wire::DataPacket& packet, const std::string& source,
                                     const FaultSpec* fault) {
  using S = taxonomy::ErrorSubtype;
  std::uint8_t threshold = state.threshold;
  if (at(fault, "threshold", S::ConstantValueError)) threshold = corrupt_threshold(threshold);
  bool admit = at(fault, "admission-compare", S::IncorrectComparisonOperation) ? packet.priority > threshold
                                                                              : packet.priority >= threshold;
  auto actions = admit_or_discard(state.tx_queue, packet, admit, DiscardReason::BelowThreshold, source, fault);
  return {std::move(state), std::move(actions)};
}

inline StepResult<CcState> cc_step(CcState state, const wire::Packet& packet, const std::string& source,
                                   const FaultSpec* fault) {
  using S = taxonomy::ErrorSubtype;
  if (auto* ctrl = std::get_if<wire::ControlPacket>(&packet)) {
    if (!at(fault, "control-update", S::MissingOneStatement)) state.congested = ctrl->congested;
    return {std::move(state), {}};
  }
  const auto* data = std::get_if<wire::DataPacket>(&packet);
  if (!data) throw Error(Errc::ProtocolMismatch, "CC block received a pub-sub message");
  std::uint8_t threshold = state.threshold;
  if (at(fault, "threshold", S::ConstantValueError)) threshold = corrupt_threshold(threshold);
  bool admit = true;
  if (data->priority < threshold) {
    if (at(fault, "congestion-gate", S::MissingCondition)) {
      admit = true;
    } else if (at(fault, "congestion-gate", S::IncorrectCondition)) {
      admit = state.congested;
    } else {
      admit = !state.congested;
    }
  }
  auto actions =
      admit_or_discard(state.tx_queue, *data, admit, DiscardReason::BelowThresholdCongested, source, fault);
  return {std::move(state), std::move(actions)};
}

inline void add_subscriber(BrokerState& state, const std::string& topic, const std::string& client) {
  auto& subs = state.subscriptions[topic];
  if (std::find(subs.begin(), subs.end(), client) == subs.end()) subs.push_back(client);
}

inline StepResult<BrokerState> broker_step(BrokerState state, const std::string& client,
                                           const wire::PubSubMessage& msg, const FaultSpec* fault) {
  using S = taxonomy::ErrorSubtype;
  using wire::ControlType;
  std::vector<Action> actions;
  switch (msg.type) {
    case ControlType::Subscribe:
      add_subscriber(state, msg.topic, client);
      if (!at(fault, "subscribe-ack", S::MissingOneStatement)) {
        actions.push_back(SendAck{client, ControlType::Subscribe, msg.topic});
      }
      break;
    case ControlType::Unsubscribe:
      if (at(fault, "unsubscribe-handler", S::UndefinedName)) {
        throw Error(Errc::ReferenceFault, "NameError: name 'remove_subscription' is not defined");
      }
      if (at(fault, "unsubscribe-handler", S::IncorrectCodeBlock)) {
        add_subscriber(state, msg.topic, client);
      } else if (auto it = state.subscriptions.find(msg.topic); it != state.subscriptions.end()) {
        auto& subs = it->second;
        subs.erase(std::remove(subs.begin(), subs.end(), client), subs.end());
        if (subs.empty()) state.subscriptions.erase(it);
      }
      actions.push_back(SendAck{client, ControlType::Unsubscribe, msg.topic});
      break;
    case ControlType::Publish:
      if (at(fault, "publish-fanout", S::MissingMultipleStatements)) break;
      if (auto it = state.subscriptions.find(msg.topic); it != state.subscriptions.end()) {
        for (const auto& subscriber : it->second) actions.push_back(Deliver{subscriber, msg});
      }
      break;
    case ControlType::Ack:
      throw Error(Errc::ProtocolMismatch, "broker received an ACK");
  }
  return {std::move(state), std::move(actions)};
}

}  // namespace detail

/// STP: admit iff priority >= threshold; admitted packets leave FCFS.
inline StepResult<StpState> stp_step(StpState state, const wire::DataPacket& packet) {
  return detail::stp_step(std::move(state), packet, "", nullptr);
}

/// CC: control packets update the congestion flag; data packets below the
/// threshold are admitted only while the network is not congested.
inline StepResult<CcState> cc_step(CcState state, const wire::Packet& packet) {
  return detail::cc_step(std::move(state), packet, "", nullptr);
}

inline StepResult<BrokerState> broker_step(BrokerState state, const std::string& client,
                                           const wire::PubSubMessage& msg) {
  return detail::broker_step(std::move(state), client, msg, nullptr);
}

struct OracleConfig {
  std::uint8_t threshold = 5;
  bool initially_congested = false;
};

/// Stateful wrapper hosting one protocol's step function, optionally with
/// one corrupted site. This is what a served block executes per packet.
class Behavior {
 public:
  explicit Behavior(Protocol proto, OracleConfig config = {}, std::optional<FaultSpec> fault = std::nullopt)
      : proto_(proto), fault_(std::move(fault)) {
    switch (proto) {
      case Protocol::Stp: state_ = StpState{config.threshold, {}}; break;
      case Protocol::Cc: state_ = CcState{config.threshold, config.initially_congested, {}}; break;
      case Protocol::PubSub: state_ = BrokerState{}; break;
    }
  }

  Protocol protocol() const { return proto_; }
  const std::optional<FaultSpec>& fault() const { return fault_; }

  /// Applies one inbound packet from `source`. Throws ProtocolMismatch for
  /// packets outside the protocol, and ReferenceFault when an injected
  /// reference error is reached (the hosting process must then die).
  std::vector<Action> step(const std::string& source, const wire::Packet& packet) {
    const FaultSpec* fault = fault_ ? &*fault_ : nullptr;
    switch (proto_) {
      case Protocol::Stp: {
        const auto* data = std::get_if<wire::DataPacket>(&packet);
        if (!data) throw Error(Errc::ProtocolMismatch, "STP block accepts DATA packets only");
        auto r = detail::stp_step(std::move(std::get<StpState>(state_)), *data, source, fault);
        state_ = std::move(r.state);
        return std::move(r.actions);
      }
      case Protocol::Cc: {
        auto r = detail::cc_step(std::move(std::get<CcState>(state_)), packet, source, fault);
        state_ = std::move(r.state);
        return std::move(r.actions);
      }
      case Protocol::PubSub: {
        const auto* msg = std::get_if<wire::PubSubMessage>(&packet);
        if (!msg) throw Error(Errc::ProtocolMismatch, "broker accepts pub-sub messages only");
        auto r = detail::broker_step(std::move(std::get<BrokerState>(state_)), source, *msg, fault);
        state_ = std::move(r.state);
        return std::move(r.actions);
      }
    }
    return {};
  }

  /// Octets the block puts on the wire for an action (empty for Discard).
  Bytes render(const Action& action) const {
    if (const auto* fwd = std::get_if<Forward>(&action)) return wire::encode(fwd->packet);
    if (const auto* ack = std::get_if<SendAck>(&action)) return wire::encode(wire::ack(ack->acked_type, ack->topic));
    if (const auto* del = std::get_if<Deliver>(&action)) {
      if (fault_ && detail::at(&*fault_, "publish-encode", taxonomy::ErrorSubtype::IncorrectArithmeticOperation)) {
        return encode_publish_payload_len_first(del->message);
      }
      return wire::encode(del->message);
    }
    return {};
  }

  /// Connection an action is sent on; nullopt for Discard.
  static std::optional<std::string> destination(const Action& action) {
    if (const auto* fwd = std::get_if<Forward>(&action)) return fwd->destination;
    if (const auto* ack = std::get_if<SendAck>(&action)) return ack->client;
    if (const auto* del = std::get_if<Deliver>(&action)) return del->client;
    return std::nullopt;
  }

  /// PUBLISH with payload_len written before the topic:
  /// type(1) | topic_len(2) | payload_len(4) | topic | payload.
  static Bytes encode_publish_payload_len_first(const wire::PubSubMessage& msg) {
    Bytes out{static_cast<std::uint8_t>(wire::ControlType::Publish)};
    wire::detail::put_u16(out, msg.topic.size());
    wire::detail::put_u32(out, msg.payload.size());
    out.insert(out.end(), msg.topic.begin(), msg.topic.end());
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
  }

  const BrokerState* broker_state() const { return std::get_if<BrokerState>(&state_); }
  const CcState* cc_state() const { return std::get_if<CcState>(&state_); }

 private:
  Protocol proto_;
  std::optional<FaultSpec> fault_;
  std::variant<StpState, CcState, BrokerState> state_;
};

/// Returns a behavior identical to the oracle except at `fault.site`.
/// Throws UnknownFaultSite when the protocol has no such corruptible site
/// for the requested error type.
inline Behavior make_faulty(Protocol proto, const FaultSpec& fault, OracleConfig config = {}) {
  bool site_known = false;
  for (const auto& s : fault_sites()) {
    if (s.proto != proto || s.site != fault.site) continue;
    site_known = true;
    if (s.subtype == fault.type.subtype) return Behavior(proto, config, fault);
  }
  throw Error(Errc::UnknownFaultSite,
              std::string(site_known ? "site '" + fault.site + "' cannot host " + taxonomy::format(fault.type)
                                     : "no site '" + fault.site + "'") +
                  " in the " + std::string(to_string(proto)) + " oracle");
}

/// One inbound packet as seen by the block.
struct Input {
  std::string source;
  wire::Packet packet;
};

struct TracedAction {
  std::size_t input_index;  // which input produced the action
  Action action;
  friend bool operator==(const TracedAction&, const TracedAction&) = default;
};

using ActionTrace = std::vector<TracedAction>;

/// Replays `inputs` through `behavior` and returns every action in order.
inline ActionTrace replay(Behavior& behavior, std::span<const Input> inputs) {
  ActionTrace trace;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (auto& action : behavior.step(inputs[i].source, inputs[i].packet)) {
      trace.push_back({i, std::move(action)});
    }
  }
  return trace;
}

/// Canonical expected trace: deterministic replay of the oracle.
inline ActionTrace expected_trace(Protocol proto, OracleConfig config, std::span<const Input> inputs) {
  Behavior oracle(proto, config);
  return replay(oracle, inputs);
}

inline std::string describe(const Action& action) {
  if (const auto* fwd = std::get_if<Forward>(&action)) {
    return "Forward(" + wire::describe(fwd->packet) + " -> " + fwd->destination + ")";
  }
  if (const auto* dis = std::get_if<Discard>(&action)) {
    return "Discard(" + wire::describe(dis->packet) + ", " + std::string(to_string(dis->reason)) + ")";
  }
  if (const auto* ack = std::get_if<SendAck>(&action)) {
    return "SendAck(" + ack->client + ", " + std::string(wire::to_string(ack->acked_type)) + ", \"" + ack->topic +
           "\")";
  }
  const auto& del = std::get<Deliver>(action);
  return "Deliver(" + del.client + ", " + wire::describe(del.message) + ")";
}

}  // namespace cpbgen::core
