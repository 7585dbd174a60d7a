#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace delta_recourse {

enum class ErrorCode {
  MissingColumn,
  ParseError,
  UnknownLabel,
  InvalidFraction,
  InvalidArgument,
  SchemaMismatch,
  EmptyDataset,
  SingleClass,
  CellOutOfRange,
  DuplicateVariable,
  DuplicateId,
  IoError,
  FormatError,
  FingerprintMismatch,
  InfeasibleConstraints,
  TooFewRows,
  LengthMismatch,
  UnknownRowId,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::CellOutOfRange: return "CellOutOfRange";
    case ErrorCode::DuplicateVariable: return "DuplicateVariable";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::InfeasibleConstraints: return "InfeasibleConstraints";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownRowId: return "UnknownRowId";
  }
  return "Unknown";
}

/// Errors that signal disagreement between persisted artifacts rather than
/// bad user input. The CLI maps them to exit code 3.
constexpr bool is_consistency_error(ErrorCode code) {
  return code == ErrorCode::FingerprintMismatch ||
         code == ErrorCode::SchemaMismatch;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace delta_recourse
