// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gle {

enum class ErrorKind {
  shape,
  numeric,
  precondition,
  io,
  format,
  checksum,
  config,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. The kind doubles as the
/// machine-parseable prefix printed by the command-line tool.
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

}  // namespace gle
