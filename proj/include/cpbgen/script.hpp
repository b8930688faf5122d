#pragma once

// Traffic scripts and endpoint configuration. Both have a JSON file form;
// see docs/traffic-script.md.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cpbgen/common.hpp"
#include "cpbgen/cpb_core.hpp"
#include "cpbgen/net.hpp"
#include "cpbgen/wire.hpp"
#include "json.hpp"

namespace cpbgen::harness {

using net::Address;
using nlohmann::json;

inline constexpr std::string_view kControllerRole = "controller";

/// Sockets a run uses. For STP/CC, role connections all go to `listen`;
/// `role_ports` records the address each pub-sub client connects to.
struct EndpointConfig {
  Address listen;
  std::optional<Address> forward;
  std::map<std::string, Address> role_ports;

  void validate(Protocol proto) const {
    std::set<std::uint16_t> ports{listen.port};
    if (listen.port == 0) throw Error(Errc::ConfigError, "listen port must be set");
    if (proto != Protocol::PubSub) {
      if (!forward) throw Error(Errc::ConfigError, "STP/CC runs need a forward address");
      if (!ports.insert(forward->port).second) throw Error(Errc::ConfigError, "forward port collides with listen port");
    }
  }
};

/// Fresh loopback ports for one run.
inline EndpointConfig allocate_endpoints(Protocol proto, const std::vector<std::string>& roles = {}) {
  EndpointConfig cfg;
  cfg.listen = {"127.0.0.1", net::pick_free_port()};
  if (proto != Protocol::PubSub) {
    do {
      cfg.forward = Address{"127.0.0.1", net::pick_free_port()};
    } while (cfg.forward->port == cfg.listen.port);
  } else {
    for (const auto& role : roles) cfg.role_ports[role] = cfg.listen;
  }
  return cfg;
}

inline json to_json(const Address& a) { return json{{"host", a.host}, {"port", a.port}}; }

inline Address address_from_json(const json& j) {
  if (j.is_string()) return Address::parse(j.get<std::string>());
  return Address{j.value("host", "127.0.0.1"), j.at("port").get<std::uint16_t>()};
}

inline json to_json(const EndpointConfig& cfg) {
  json j{{"listen", to_json(cfg.listen)}};
  if (cfg.forward) j["forward"] = to_json(*cfg.forward);
  json roles = json::object();
  for (const auto& [role, addr] : cfg.role_ports) roles[role] = to_json(addr);
  j["role_ports"] = roles;
  return j;
}

inline EndpointConfig endpoints_from_json(const json& j) {
  EndpointConfig cfg;
  cfg.listen = address_from_json(j.at("listen"));
  if (j.contains("forward") && !j["forward"].is_null()) cfg.forward = address_from_json(j["forward"]);
  if (j.contains("role_ports")) {
    for (const auto& [role, addr] : j["role_ports"].items()) cfg.role_ports[role] = address_from_json(addr);
  }
  return cfg;
}

/// Payload text if printable ASCII, else a hex field.
inline void put_payload(json& j, const Bytes& payload) {
  bool printable = std::all_of(payload.begin(), payload.end(), [](auto b) { return b >= 0x20 && b < 0x7f; });
  if (printable) {
    j["payload"] = std::string(payload.begin(), payload.end());
  } else {
    j["payload_hex"] = to_hex(payload);
  }
}

inline Bytes get_payload(const json& j) {
  if (j.contains("payload_hex")) return from_hex(j["payload_hex"].get<std::string>());
  return to_bytes(j.value("payload", ""));
}

inline json packet_to_json(const wire::Packet& packet) {
  json j;
  if (const auto* data = std::get_if<wire::DataPacket>(&packet)) {
    j["kind"] = "data";
    j["priority"] = data->priority;
    put_payload(j, data->payload);
  } else if (const auto* ctrl = std::get_if<wire::ControlPacket>(&packet)) {
    j["kind"] = "control";
    j["congested"] = ctrl->congested;
  } else {
    const auto& msg = std::get<wire::PubSubMessage>(packet);
    switch (msg.type) {
      case wire::ControlType::Subscribe: j["kind"] = "subscribe"; break;
      case wire::ControlType::Unsubscribe: j["kind"] = "unsubscribe"; break;
      case wire::ControlType::Publish: j["kind"] = "publish"; break;
      case wire::ControlType::Ack:
        j["kind"] = "ack";
        j["acked"] = msg.acked_type == wire::ControlType::Subscribe ? "subscribe" : "unsubscribe";
        break;
    }
    j["topic"] = msg.topic;
    if (msg.type == wire::ControlType::Publish) put_payload(j, msg.payload);
  }
  return j;
}

inline wire::Packet packet_from_json(const json& j) {
  auto kind = j.at("kind").get<std::string>();
  if (kind == "data") {
    int prio = j.at("priority").get<int>();
    if (prio < 0 || prio > 255) throw Error(Errc::CorruptScript, "priority out of range: " + std::to_string(prio));
    return wire::DataPacket{static_cast<std::uint8_t>(prio), get_payload(j)};
  }
  if (kind == "control") return wire::ControlPacket{j.at("congested").get<bool>()};
  auto topic = j.at("topic").get<std::string>();
  if (kind == "subscribe") return wire::subscribe(topic);
  if (kind == "unsubscribe") return wire::unsubscribe(topic);
  if (kind == "publish") return wire::publish(topic, get_payload(j));
  if (kind == "ack") {
    auto acked = j.at("acked").get<std::string>();
    if (acked != "subscribe" && acked != "unsubscribe") throw Error(Errc::CorruptScript, "bad acked type '" + acked + "'");
    return wire::ack(acked == "subscribe" ? wire::ControlType::Subscribe : wire::ControlType::Unsubscribe, topic);
  }
  throw Error(Errc::CorruptScript, "unknown packet kind '" + kind + "'");
}

struct ScriptStep {
  std::uint32_t delay_ms = 0;  // wait before sending, relative to the previous step
  std::string role;
  wire::Packet packet;
  friend bool operator==(const ScriptStep&, const ScriptStep&) = default;
};

struct TrafficScript {
  Protocol proto = Protocol::Stp;
  std::string name;
  std::uint8_t threshold = 5;
  bool initially_congested = false;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> roles;  // every role gets one connection, even if it never sends
  std::vector<ScriptStep> steps;

  core::OracleConfig oracle_config() const { return {threshold, initially_congested}; }

  std::vector<core::Input> inputs() const {
    std::vector<core::Input> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back({s.role, s.packet});
    return out;
  }

  std::chrono::milliseconds total_delay() const {
    std::chrono::milliseconds total{0};
    for (const auto& s : steps) total += std::chrono::milliseconds(s.delay_ms);
    return total;
  }

  /// Throws CorruptScript on undeclared roles or packets foreign to the protocol.
  void validate() const {
    std::set<std::string> declared;
    for (const auto& r : roles) {
      if (!role_allowed(r)) throw Error(Errc::CorruptScript, "role '" + r + "' is not valid for " + std::string(to_string(proto)));
      if (!declared.insert(r).second) throw Error(Errc::CorruptScript, "role '" + r + "' declared twice");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& s = steps[i];
      auto where = "step " + std::to_string(i) + ": ";
      if (!declared.count(s.role)) throw Error(Errc::CorruptScript, where + "undeclared role '" + s.role + "'");
      if (!wire::belongs_to(s.packet, proto)) {
        throw Error(Errc::CorruptScript, where + wire::describe(s.packet) + " is not a " + std::string(to_string(proto)) + " packet");
      }
      if (const auto* msg = std::get_if<wire::PubSubMessage>(&s.packet); msg && msg->type == wire::ControlType::Ack) {
        throw Error(Errc::CorruptScript, where + "clients never send ACK");
      }
      try {
        wire::encode(s.packet);
      } catch (const Error& e) {
        throw Error(Errc::CorruptScript, where + e.what());
      }
    }
  }

  bool role_allowed(const std::string& role) const {
    auto starts = [&](std::string_view prefix) { return role.rfind(prefix, 0) == 0 && role.size() > prefix.size(); };
    switch (proto) {
      case Protocol::Stp: return starts("transmitter-");
      case Protocol::Cc: return starts("transmitter-") || role == kControllerRole;
      case Protocol::PubSub: return starts("client-");
    }
    return false;
  }
};

inline json to_json(const TrafficScript& s) {
  json steps = json::array();
  for (const auto& st : s.steps) {
    steps.push_back(json{{"delay_ms", st.delay_ms}, {"role", st.role}, {"packet", packet_to_json(st.packet)}});
  }
  json j{{"protocol", to_string(s.proto)}, {"threshold", s.threshold}, {"roles", s.roles}, {"steps", steps}};
  if (!s.name.empty()) j["name"] = s.name;
  if (s.proto == Protocol::Cc) j["initially_congested"] = s.initially_congested;
  j["seed"] = s.seed ? json(*s.seed) : json(nullptr);
  return j;
}

inline TrafficScript script_from_json(const json& j) {
  TrafficScript s;
  try {
    s.proto = parse_protocol(j.at("protocol").get<std::string>());
    s.name = j.value("name", "");
    int threshold = j.value("threshold", 5);
    if (threshold < 0 || threshold > 255) throw Error(Errc::CorruptScript, "threshold out of range");
    s.threshold = static_cast<std::uint8_t>(threshold);
    s.initially_congested = j.value("initially_congested", false);
    if (j.contains("seed") && !j["seed"].is_null()) s.seed = j["seed"].get<std::uint64_t>();
    s.roles = j.at("roles").get<std::vector<std::string>>();
    for (const auto& st : j.at("steps")) {
      auto delay = st.value("delay_ms", std::int64_t{0});
      if (delay < 0) throw Error(Errc::CorruptScript, "negative delay");
      s.steps.push_back({static_cast<std::uint32_t>(delay), st.at("role").get<std::string>(), packet_from_json(st.at("packet"))});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptScript, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptScript) throw;
    throw Error(Errc::CorruptScript, e.what());
  }
  s.validate();
  return s;
}

inline TrafficScript load_script(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptScript, path.string() + ": " + e.what());
  }
  return script_from_json(j);
}

inline void save_script(const std::filesystem::path& path, const TrafficScript& s) {
  write_file(path, to_json(s).dump(2) + "\n");
}

/// Seeded random script: priorities in 1..9, small topic alphabet, a few
/// clients/transmitters. Delays stay at `gap_ms` so cross-role causality
/// holds on a loaded host.
inline TrafficScript generate_script(Protocol proto, std::uint64_t seed, std::size_t steps, std::uint32_t gap_ms = 20) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  TrafficScript s;
  s.proto = proto;
  s.seed = seed;
  s.name = std::string(to_string(proto)) + "-generated-" + std::to_string(seed);
  if (proto == Protocol::PubSub) {
    s.roles = {"client-1", "client-2", "client-3"};
    const char* topics[] = {"news", "sport", "w\xc3\xa9" "ather"};
    for (std::size_t i = 0; i < steps; ++i) {
      auto role = s.roles[static_cast<std::size_t>(pick(0, 2))];
      std::string topic = topics[pick(0, 2)];
      int kind = pick(0, 9);
      wire::Packet p = kind < 4   ? wire::Packet(wire::subscribe(topic))
                       : kind < 6 ? wire::Packet(wire::unsubscribe(topic))
                                  : wire::Packet(wire::publish(topic, to_bytes("m" + std::to_string(i))));
      s.steps.push_back({gap_ms, role, p});
    }
    return s;
  }
  s.roles = {"transmitter-1", "transmitter-2"};
  if (proto == Protocol::Cc) s.roles.emplace_back(kControllerRole);
  for (std::size_t i = 0; i < steps; ++i) {
    if (proto == Protocol::Cc && pick(0, 3) == 0) {
      s.steps.push_back({gap_ms, std::string(kControllerRole), wire::ControlPacket{pick(0, 1) == 1}});
      continue;
    }
    auto role = s.roles[static_cast<std::size_t>(pick(0, 1))];
    s.steps.push_back({gap_ms, role, wire::DataPacket{static_cast<std::uint8_t>(pick(1, 9)), to_bytes("p" + std::to_string(i))}});
  }
  return s;
}

}  // namespace cpbgen::harness
