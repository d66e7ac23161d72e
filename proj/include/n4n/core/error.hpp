#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace n4n {

enum class ErrorCode {
  BadMagic,
  UnsupportedDtype,
  TruncatedData,
  IoFailure,
  EmptyMask,
  ShapeMismatch,
  DegenerateScheme,
  ConstantField,
  EmptyTract,
  NonFiniteGrad,
  RoiTooSmall,
  DivergedTraining,
  EmptyDataset,
  ZeroMean,
  ZeroVariance,
  InsufficientData,
  DegenerateVariance,
  SingularDesign,
  InvalidArgument,
  ParseError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateScheme: return "DegenerateScheme";
    case ErrorCode::ConstantField: return "ConstantField";
    case ErrorCode::EmptyTract: return "EmptyTract";
    case ErrorCode::NonFiniteGrad: return "NonFiniteGrad";
    case ErrorCode::RoiTooSmall: return "RoiTooSmall";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ZeroMean: return "ZeroMean";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every library failure carries a machine-checkable code next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace n4n
