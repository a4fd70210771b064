#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geodistill {

enum class ErrorKind {
  Io,
  Format,
  Index,
  Shape,
  Domain,
  Numeric,
  Topology,
  Version,
  Config,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type used throughout the toolkit. The kind drives the
/// machine-readable error line printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace geodistill
