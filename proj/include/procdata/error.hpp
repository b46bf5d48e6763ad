#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace procdata {

// Error codes shared by every module. The C API maps these onto pd_status.
enum class ErrorCode {
  MalformedRow,
  BadTimestamp,
  MissingColumn,
  ConflictingRules,
  DivisionDomain,
  SingleClassOutcome,
  NonFiniteUpdate,
  NonFiniteLoss,
  UnknownSymbol,
  DimensionMismatch,
  LengthMismatch,
  EmptySegment,
  InvalidArgument,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

// True for codes that indicate a problem with the run configuration rather
// than with the data being processed.
bool is_config_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace procdata
