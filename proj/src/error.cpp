#include "format_adapter/error.hpp"

namespace format_adapter {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::validation: return "validation";
    case ErrorCode::empty_set: return "empty-set";
    case ErrorCode::transport: return "transport";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::parse: return "parse";
    case ErrorCode::generation_failed: return "generation-failed";
    case ErrorCode::rewrite: return "rewrite";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::incomplete_run: return "incomplete-run";
    case ErrorCode::stage_dependency: return "stage-dependency";
    case ErrorCode::size: return "size";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::undefined_correlation: return "undefined-correlation";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::validation:
    case ErrorCode::precondition:
    case ErrorCode::size:
      return 2;
    case ErrorCode::transport:
      return 3;
    case ErrorCode::protocol:
    case ErrorCode::parse:
    case ErrorCode::generation_failed:
    case ErrorCode::rewrite:
      return 4;
    case ErrorCode::incomplete_run:
    case ErrorCode::stage_dependency:
    case ErrorCode::not_found:
      return 5;
    default:
      return 1;
  }
}

}  // namespace format_adapter
