#include "climemu/error.hpp"

namespace climemu {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::format_error: return "format_error";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::shape_error: return "shape_error";
    case ErrorCode::diverged: return "diverged";
    case ErrorCode::degenerate_reference: return "degenerate_reference";
    case ErrorCode::empty_site: return "empty_site";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

}  // namespace climemu
