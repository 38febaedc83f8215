#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trsbts {

enum class Errc {
  InvalidArgument,
  DimMismatch,
  NotPsd,
  BadLength,
  TimeOutOfRange,
  EndpointOffLeaf,
  KnotMismatch,
  DegenerateData,
  SingularDesign,
  ShapeMismatch,
  AllExcluded,
  EmptySurrogate,
  NonFiniteState,
  TooShort,
  ZeroVariance,
  InsufficientData,
  MissingStats,
  EmptyInput,
  DegeneratePath,
  NonIncreasingHorizons,
  ConfigError,
  DataError,
};

inline constexpr std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::NotPsd: return "NotPsd";
    case Errc::BadLength: return "BadLength";
    case Errc::TimeOutOfRange: return "TimeOutOfRange";
    case Errc::EndpointOffLeaf: return "EndpointOffLeaf";
    case Errc::KnotMismatch: return "KnotMismatch";
    case Errc::DegenerateData: return "DegenerateData";
    case Errc::SingularDesign: return "SingularDesign";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::AllExcluded: return "AllExcluded";
    case Errc::EmptySurrogate: return "EmptySurrogate";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::TooShort: return "TooShort";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::MissingStats: return "MissingStats";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DegeneratePath: return "DegeneratePath";
    case Errc::NonIncreasingHorizons: return "NonIncreasingHorizons";
    case Errc::ConfigError: return "ConfigError";
    case Errc::DataError: return "DataError";
  }
  return "Unknown";
}

/// Library exception. Every failure carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace trsbts
