#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cpbgen {

enum class Errc {
  EncodingOverflow,
  InvalidField,
  ProtocolMismatch,
  UnknownFaultSite,
  ReferenceFault,
  BindFailure,
  LaunchFailure,
  ConnectionLost,
  CorruptLog,
  CorruptScript,
  LabelOnPass,
  IncompleteScenario,
  MissingBaseline,
  GatewayError,
  EmptyResponse,
  NoCodeBlock,
  ManifestCorrupt,
  NotFound,
  ConfigError,
  IoError,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::EncodingOverflow: return "EncodingOverflow";
    case Errc::InvalidField: return "InvalidField";
    case Errc::ProtocolMismatch: return "ProtocolMismatch";
    case Errc::UnknownFaultSite: return "UnknownFaultSite";
    case Errc::ReferenceFault: return "ReferenceFault";
    case Errc::BindFailure: return "BindFailure";
    case Errc::LaunchFailure: return "LaunchFailure";
    case Errc::ConnectionLost: return "ConnectionLost";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::CorruptScript: return "CorruptScript";
    case Errc::LabelOnPass: return "LabelOnPass";
    case Errc::IncompleteScenario: return "IncompleteScenario";
    case Errc::MissingBaseline: return "MissingBaseline";
    case Errc::GatewayError: return "GatewayError";
    case Errc::EmptyResponse: return "EmptyResponse";
    case Errc::NoCodeBlock: return "NoCodeBlock";
    case Errc::ManifestCorrupt: return "ManifestCorrupt";
    case Errc::NotFound: return "NotFound";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  Errc code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace cpbgen
