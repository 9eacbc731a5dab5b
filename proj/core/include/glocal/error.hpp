#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glocal {

enum class ErrorKind {
  kIo,
  kParse,
  kInvariant,
  kMissingKey,
  kShapeMismatch,
  kContextOverflow,
  kInvalidArgument,
  kEmptyIndex,
  kNumerical,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind` is stable and is what the CLI
// reports in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace glocal
