#pragma once

// Closed taxonomy of code-generation error types: seven families, each with
// a fixed set of subtypes.

#include <array>
#include <span>
#include <string>
#include <string_view>

#include "cpbgen/error.hpp"

namespace cpbgen::taxonomy {

enum class ErrorFamily { CE, CVE, RE, CBE, ICMS, MCE, OCE };

enum class ErrorSubtype {
  MissingCondition,
  IncorrectCondition,
  ConstantValueError,
  WrongMethodVariable,
  UndefinedName,
  IncorrectCodeBlock,
  MissingCodeBlock,
  MissingOneStatement,
  MissingMultipleStatements,
  IncorrectFunctionArguments,
  IncorrectMethodCallTarget,
  IncorrectArithmeticOperation,
  IncorrectComparisonOperation,
};

struct ErrorType {
  ErrorFamily family;
  ErrorSubtype subtype;

  friend bool operator==(const ErrorType&, const ErrorType&) = default;
  friend auto operator<=>(const ErrorType&, const ErrorType&) = default;
};

namespace detail {

struct SubtypeInfo {
  ErrorFamily family;
  ErrorSubtype subtype;
  std::string_view slug;
  std::string_view label;
};

inline constexpr std::array<SubtypeInfo, 13> kSubtypes{{
    {ErrorFamily::CE, ErrorSubtype::MissingCondition, "missing-condition", "Missing condition"},
    {ErrorFamily::CE, ErrorSubtype::IncorrectCondition, "incorrect-condition", "Incorrect condition"},
    {ErrorFamily::CVE, ErrorSubtype::ConstantValueError, "constant-value-error", "Constant value error"},
    {ErrorFamily::RE, ErrorSubtype::WrongMethodVariable, "wrong-method-variable", "Wrong method/variable"},
    {ErrorFamily::RE, ErrorSubtype::UndefinedName, "undefined-name", "Undefined name"},
    {ErrorFamily::CBE, ErrorSubtype::IncorrectCodeBlock, "incorrect-code-block", "Incorrect code block"},
    {ErrorFamily::CBE, ErrorSubtype::MissingCodeBlock, "missing-code-block", "Missing code block"},
    {ErrorFamily::ICMS, ErrorSubtype::MissingOneStatement, "missing-one-statement", "Missing one statement"},
    {ErrorFamily::ICMS, ErrorSubtype::MissingMultipleStatements, "missing-multiple-statements",
     "Missing multiple statements"},
    {ErrorFamily::MCE, ErrorSubtype::IncorrectFunctionArguments, "incorrect-function-arguments",
     "Incorrect function arguments"},
    {ErrorFamily::MCE, ErrorSubtype::IncorrectMethodCallTarget, "incorrect-method-call-target",
     "Incorrect method call target"},
    {ErrorFamily::OCE, ErrorSubtype::IncorrectArithmeticOperation, "incorrect-arithmetic-operation",
     "Incorrect arithmetic operation"},
    {ErrorFamily::OCE, ErrorSubtype::IncorrectComparisonOperation, "incorrect-comparison-operation",
     "Incorrect comparison operation"},
}};

inline const SubtypeInfo& info(ErrorSubtype subtype) {
  for (const auto& entry : kSubtypes) {
    if (entry.subtype == subtype) return entry;
  }
  throw Error(Errc::InvalidField, "unknown error subtype");
}

}  // namespace detail

inline std::string_view to_string(ErrorFamily family) {
  switch (family) {
    case ErrorFamily::CE: return "CE";
    case ErrorFamily::CVE: return "CVE";
    case ErrorFamily::RE: return "RE";
    case ErrorFamily::CBE: return "CBE";
    case ErrorFamily::ICMS: return "IC/MS";
    case ErrorFamily::MCE: return "MCE";
    case ErrorFamily::OCE: return "O/CE";
  }
  return "?";
}

inline std::string_view family_name(ErrorFamily family) {
  switch (family) {
    case ErrorFamily::CE: return "Condition Error";
    case ErrorFamily::CVE: return "Constant Value Error";
    case ErrorFamily::RE: return "Reference Error";
    case ErrorFamily::CBE: return "Code Block Error";
    case ErrorFamily::ICMS: return "Incomplete Code / Missing Statements";
    case ErrorFamily::MCE: return "Method Call Error";
    case ErrorFamily::OCE: return "Operation/Calculation Error";
  }
  return "?";
}

inline ErrorFamily parse_family(std::string_view text) {
  for (auto family : {ErrorFamily::CE, ErrorFamily::CVE, ErrorFamily::RE, ErrorFamily::CBE,
                      ErrorFamily::ICMS, ErrorFamily::MCE, ErrorFamily::OCE}) {
    if (text == to_string(family)) return family;
  }
  throw Error(Errc::InvalidField, "unknown error family '" + std::string(text) + "'");
}

/// Builds an error type, rejecting subtypes outside the family's closed set.
inline ErrorType make_error_type(ErrorFamily family, ErrorSubtype subtype) {
  if (detail::info(subtype).family != family) {
    throw Error(Errc::InvalidField, std::string(detail::info(subtype).slug) + " is not a subtype of " +
                                        std::string(to_string(family)));
  }
  return {family, subtype};
}

inline ErrorType make_error_type(ErrorSubtype subtype) { return {detail::info(subtype).family, subtype}; }

inline std::string_view subtype_label(ErrorSubtype subtype) { return detail::info(subtype).label; }

/// Canonical text form "FAMILY:subtype-slug", e.g. "O/CE:incorrect-arithmetic-operation".
inline std::string format(const ErrorType& type) {
  return std::string(to_string(type.family)) + ":" + std::string(detail::info(type.subtype).slug);
}

inline std::string display_name(const ErrorType& type) {
  return std::string(to_string(type.family)) + "-" + std::string(subtype_label(type.subtype));
}

inline ErrorType parse_error_type(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error(Errc::InvalidField, "error type '" + std::string(text) + "' lacks ':'");
  }
  auto family = parse_family(text.substr(0, colon));
  auto slug = text.substr(colon + 1);
  for (const auto& entry : detail::kSubtypes) {
    if (entry.slug == slug) return make_error_type(family, entry.subtype);
  }
  throw Error(Errc::InvalidField, "unknown error subtype '" + std::string(slug) + "'");
}

inline std::array<ErrorType, 13> all_error_types() {
  std::array<ErrorType, 13> out{};
  for (std::size_t i = 0; i < detail::kSubtypes.size(); ++i) {
    out[i] = {detail::kSubtypes[i].family, detail::kSubtypes[i].subtype};
  }
  return out;
}

}  // namespace cpbgen::taxonomy
