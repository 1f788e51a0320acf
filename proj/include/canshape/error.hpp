#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace canshape {

enum class ErrorKind {
  // ingestion
  MalformedLine,
  PayloadTooLong,
  BadHex,
  // signal pipeline
  EmptyCapture,
  TooShort,
  UnknownMember,
  // clustering
  ConstantSeries,
  LengthMismatch,
  DegenerateRow,
  // diffusion
  DimensionMismatch,
  RankCollapse,
  NegativeRowSum,
  ZeroKernelRow,
  // detection
  OutOfOrder,
  InsufficientHoldout,
  // simulation
  WindowOutOfRange,
  UnknownTarget,
  // general
  InvalidArgument,
  Schema,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::PayloadTooLong: return "PayloadTooLong";
    case ErrorKind::BadHex: return "BadHex";
    case ErrorKind::EmptyCapture: return "EmptyCapture";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::UnknownMember: return "UnknownMember";
    case ErrorKind::ConstantSeries: return "ConstantSeries";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateRow: return "DegenerateRow";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::RankCollapse: return "RankCollapse";
    case ErrorKind::NegativeRowSum: return "NegativeRowSum";
    case ErrorKind::ZeroKernelRow: return "ZeroKernelRow";
    case ErrorKind::OutOfOrder: return "OutOfOrder";
    case ErrorKind::InsufficientHoldout: return "InsufficientHoldout";
    case ErrorKind::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorKind::UnknownTarget: return "UnknownTarget";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Schema: return "Schema";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Input validation failures (bad files, bad arguments, schema violations)
/// as opposed to failures of the numerical pipeline itself.
constexpr bool is_validation_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedLine:
    case ErrorKind::PayloadTooLong:
    case ErrorKind::BadHex:
    case ErrorKind::InvalidArgument:
    case ErrorKind::Schema:
    case ErrorKind::Io:
    case ErrorKind::UnknownTarget:
    case ErrorKind::WindowOutOfRange:
      return true;
    default:
      return false;
  }
}

}  // namespace canshape
