#include "procdata/error.hpp"

namespace procdata {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRow: return "MALFORMED_ROW";
    case ErrorCode::BadTimestamp: return "BAD_TIMESTAMP";
    case ErrorCode::MissingColumn: return "MISSING_COLUMN";
    case ErrorCode::ConflictingRules: return "CONFLICTING_RULES";
    case ErrorCode::DivisionDomain: return "DIVISION_DOMAIN";
    case ErrorCode::SingleClassOutcome: return "SINGLE_CLASS_OUTCOME";
    case ErrorCode::NonFiniteUpdate: return "NON_FINITE_UPDATE";
    case ErrorCode::NonFiniteLoss: return "NON_FINITE_LOSS";
    case ErrorCode::UnknownSymbol: return "UNKNOWN_SYMBOL";
    case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::EmptySegment: return "EMPTY_SEGMENT";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::Io: return "IO_ERROR";
    case ErrorCode::Config: return "CONFIG_ERROR";
  }
  return "UNKNOWN";
}

bool is_config_error(ErrorCode code) {
  return code == ErrorCode::Config || code == ErrorCode::ConflictingRules;
}

}  // namespace procdata
