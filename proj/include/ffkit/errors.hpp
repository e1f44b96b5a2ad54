#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ffkit {

enum class ErrorKind {
  shape_mismatch,
  invalid_argument,
  no_graph,
  missing_gradient,
  conflict,
  missing_prototype,
  empty_selection,
  io,
  invariant,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::no_graph: return "no-graph";
    case ErrorKind::missing_gradient: return "missing-gradient";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::missing_prototype: return "missing-prototype";
    case ErrorKind::empty_selection: return "empty-selection";
    case ErrorKind::io: return "io";
    case ErrorKind::invariant: return "invariant";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

inline void require_arg(bool condition, const std::string& message) {
  require(condition, ErrorKind::invalid_argument, message);
}

}  // namespace ffkit
