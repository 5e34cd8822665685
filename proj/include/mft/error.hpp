#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mft {

enum class ErrorKind {
  Dimension,
  Index,
  Rank,
  EmptyPool,
  Vocabulary,
  Degenerate,
  Membership,
  Configuration,
  Lookup,
  State,
  LabelSpace,
  Evaluation,
  Parse,
  Schema,
  Spec,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a category so the CLI can
// print a categorized error line and tests can assert on the kind.
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

}  // namespace mft
