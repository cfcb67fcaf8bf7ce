#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segpose {

enum class ErrorKind {
  InvalidArgument,
  BehindCamera,
  EmptyModel,
  OutOfRange,
  SpecMismatch,
  AllZero,
  NonFinite,
  EmptyCluster,
  Degenerate,
  TooFew,
  CheiralityFailure,
  NoConsensus,
  SamplingExhausted,
  SchemaViolation,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::EmptyModel: return "EmptyModel";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::SpecMismatch: return "SpecMismatch";
    case ErrorKind::AllZero: return "AllZero";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyCluster: return "EmptyCluster";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::TooFew: return "TooFew";
    case ErrorKind::CheiralityFailure: return "CheiralityFailure";
    case ErrorKind::NoConsensus: return "NoConsensus";
    case ErrorKind::SamplingExhausted: return "SamplingExhausted";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

// CLI exit codes: 2 config error, 3 data error, 4 numerical failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidArgument:
      return 2;
    case ErrorKind::NonFinite:
    case ErrorKind::Degenerate:
    case ErrorKind::CheiralityFailure:
    case ErrorKind::NoConsensus:
    case ErrorKind::SamplingExhausted:
    case ErrorKind::AllZero:
      return 4;
    default:
      return 3;
  }
}

}  // namespace segpose
