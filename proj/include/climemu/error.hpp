#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace climemu {

enum class ErrorCode {
  invalid_argument,
  not_found,
  format_error,
  corrupt_file,
  shape_error,
  diverged,
  degenerate_reference,
  empty_site,
  io_error,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library. `field_path` is set when the error
/// can be pinned to a location inside a JSON document (e.g.
/// "perturbations.sw_cre_toa.value").
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field_path = {})
      : std::runtime_error(message), code_(code), field_path_(std::move(field_path)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  ErrorCode code_;
  std::string field_path_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              std::string field_path = {}) {
  throw Error(code, message, std::move(field_path));
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace climemu
