#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cpbgen/error.hpp"

namespace cpbgen {

using Bytes = std::vector<std::uint8_t>;

/// The three custom protocols. Each one is also a wire "family": the set of
/// packet types that may legally appear on a connection of that protocol.
enum class Protocol { Stp, Cc, PubSub };

inline constexpr Protocol kAllProtocols[] = {Protocol::Stp, Protocol::Cc, Protocol::PubSub};

inline std::string_view to_string(Protocol proto) {
  switch (proto) {
    case Protocol::Stp: return "stp";
    case Protocol::Cc: return "cc";
    case Protocol::PubSub: return "pubsub";
  }
  return "?";
}

inline Protocol parse_protocol(std::string_view text) {
  if (text == "stp") return Protocol::Stp;
  if (text == "cc") return Protocol::Cc;
  if (text == "pubsub" || text == "pub-sub") return Protocol::PubSub;
  throw Error(Errc::ConfigError, "unknown protocol '" + std::string(text) + "'");
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::InvalidField, "odd-length hex string");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::InvalidField, "bad hex digit");
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

inline Bytes to_bytes(std::string_view text) { return Bytes(text.begin(), text.end()); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

/// Root of the shipped data tree (kb/, descriptions/, scripts/). Overridable
/// at runtime through CPBGEN_DATA_DIR.
inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("CPBGEN_DATA_DIR"); env && *env) return env;
#ifdef CPBGEN_DATA_DIR
  return CPBGEN_DATA_DIR;
#else
  return std::filesystem::current_path();
#endif
}

}  // namespace cpbgen
