#pragma once

// Fault variants of the oracle that ship with the tool, each with a short
// witness script on which it provably diverges.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "cpbgen/cpb_core.hpp"
#include "cpbgen/script.hpp"
#include "cpbgen/validator.hpp"

namespace cpbgen::faults {

struct ShippedFault {
  std::string id;
  Protocol proto;
  core::FaultSpec spec;
  validator::Check stage;  // first check expected to fail on the witness
  harness::TrafficScript witness;
};

namespace detail {

using S = taxonomy::ErrorSubtype;
using harness::ScriptStep;

inline constexpr std::uint32_t kGap = 30;

inline harness::TrafficScript script(Protocol proto, std::string name, std::vector<ScriptStep> steps) {
  harness::TrafficScript s;
  s.proto = proto;
  s.name = std::move(name);
  s.threshold = 5;
  for (auto& st : steps) {
    st.delay_ms = kGap;
    if (std::find(s.roles.begin(), s.roles.end(), st.role) == s.roles.end()) s.roles.push_back(st.role);
  }
  std::sort(s.roles.begin(), s.roles.end());
  s.steps = std::move(steps);
  return s;
}

inline wire::DataPacket data(int prio, const char* payload) {
  return wire::DataPacket{static_cast<std::uint8_t>(prio), to_bytes(payload)};
}

inline ShippedFault make(std::string id, Protocol proto, S subtype, std::string site, validator::Check stage,
                         std::vector<ScriptStep> steps) {
  auto witness = script(proto, id + "-witness", std::move(steps));
  return {std::move(id), proto, {taxonomy::make_error_type(subtype), std::move(site)}, stage, std::move(witness)};
}

}  // namespace detail

inline const std::vector<ShippedFault>& shipped_faults() {
  using detail::data;
  using detail::make;
  using detail::S;
  using validator::Check;
  const std::string tx = "transmitter-1";
  const std::string ctl(harness::kControllerRole);
  static const std::vector<ShippedFault> catalog{
      make("stp-cve-threshold", Protocol::Stp, S::ConstantValueError, "threshold", Check::ProtocolLogic,
           {{0, tx, data(5, "edge")}, {0, tx, data(7, "high")}}),
      make("stp-oce-comparison", Protocol::Stp, S::IncorrectComparisonOperation, "admission-compare",
           Check::ProtocolLogic, {{0, tx, data(5, "edge")}}),
      make("stp-mce-wrong-target", Protocol::Stp, S::IncorrectMethodCallTarget, "forward-send", Check::ProtocolLogic,
           {{0, tx, data(7, "high")}}),
      make("cc-cve-threshold", Protocol::Cc, S::ConstantValueError, "threshold", Check::ProtocolLogic,
           {{0, ctl, wire::ControlPacket{true}}, {0, tx, data(5, "edge")}}),
      make("cc-ce-missing-condition", Protocol::Cc, S::MissingCondition, "congestion-gate", Check::ProtocolLogic,
           {{0, ctl, wire::ControlPacket{true}}, {0, tx, data(3, "low")}}),
      make("cc-ce-inverted-condition", Protocol::Cc, S::IncorrectCondition, "congestion-gate", Check::ProtocolLogic,
           {{0, tx, data(3, "low")}}),
      make("cc-mce-wrong-target", Protocol::Cc, S::IncorrectMethodCallTarget, "forward-send", Check::ProtocolLogic,
           {{0, tx, data(7, "high")}}),
      make("cc-icms-control-update", Protocol::Cc, S::MissingOneStatement, "control-update", Check::ProtocolLogic,
           {{0, ctl, wire::ControlPacket{true}}, {0, tx, data(3, "low")}}),
      make("pubsub-icms-missing-ack", Protocol::PubSub, S::MissingOneStatement, "subscribe-ack", Check::ProtocolLogic,
           {{0, "client-1", wire::subscribe("news")}}),
      make("pubsub-re-undefined-name", Protocol::PubSub, S::UndefinedName, "unsubscribe-handler", Check::Executes,
           {{0, "client-1", wire::subscribe("news")},
            {0, "client-1", wire::unsubscribe("news")},
            {0, "client-2", wire::publish("news", to_bytes("x"))}}),
      make("pubsub-cbe-incorrect-block", Protocol::PubSub, S::IncorrectCodeBlock, "unsubscribe-handler",
           Check::ProtocolLogic,
           {{0, "client-1", wire::subscribe("news")},
            {0, "client-1", wire::unsubscribe("news")},
            {0, "client-2", wire::publish("news", to_bytes("x"))}}),
      make("pubsub-icms-missing-fanout", Protocol::PubSub, S::MissingMultipleStatements, "publish-fanout",
           Check::ProtocolLogic,
           {{0, "client-1", wire::subscribe("news")}, {0, "client-2", wire::publish("news", to_bytes("x"))}}),
      make("pubsub-oce-field-order", Protocol::PubSub, S::IncorrectArithmeticOperation, "publish-encode",
           Check::FormatConformance,
           {{0, "client-1", wire::subscribe("news")}, {0, "client-2", wire::publish("news", to_bytes("x"))}}),
  };
  return catalog;
}

/// Throws NotFound for unknown ids.
inline const ShippedFault& find_fault(std::string_view id) {
  for (const auto& f : shipped_faults()) {
    if (f.id == id) return f;
  }
  throw Error(Errc::NotFound, "no shipped fault '" + std::string(id) + "'");
}

inline core::Behavior behavior_for(const ShippedFault& fault, core::OracleConfig config = {}) {
  return core::make_faulty(fault.proto, fault.spec, config);
}

}  // namespace cpbgen::faults
