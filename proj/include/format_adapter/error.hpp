#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace format_adapter {

enum class ErrorCode {
  config,
  validation,
  empty_set,
  transport,
  protocol,
  parse,
  generation_failed,
  rewrite,
  not_found,
  incomplete_run,
  stage_dependency,
  size,
  precondition,
  undefined_correlation,
};

std::string_view to_string(ErrorCode code);

// Process exit code used by the CLI: 2 config, 3 transport, 4 parse,
// 5 incomplete run, 1 anything else.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the remote backend once retries are exhausted or on a
// non-retryable HTTP status. `attempts` counts every upstream attempt made.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, int attempts, int http_status)
      : Error(ErrorCode::transport, message),
        attempts_(attempts),
        http_status_(http_status) {}

  int attempts() const noexcept { return attempts_; }
  int http_status() const noexcept { return http_status_; }

 private:
  int attempts_;
  int http_status_;
};

}  // namespace format_adapter
