#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmaint {

enum class ErrorKind {
  schema_mismatch,
  invalid_input,
  out_of_route,
  invalid_filter,
  invalid_topic,
  duplicate_id,
  catalog,
  validation,
  dangling_reference,
  integrity,
  unknown_view,
  parse,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::schema_mismatch: return "schema-mismatch";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::out_of_route: return "out-of-route";
    case ErrorKind::invalid_filter: return "invalid-filter";
    case ErrorKind::invalid_topic: return "invalid-topic";
    case ErrorKind::duplicate_id: return "duplicate-id";
    case ErrorKind::catalog: return "catalog";
    case ErrorKind::validation: return "validation";
    case ErrorKind::dangling_reference: return "dangling-reference";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::unknown_view: return "unknown-view";
    case ErrorKind::parse: return "parse";
  }
  return "unknown";
}

/// Single exception type for the library; `kind()` is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pmaint
