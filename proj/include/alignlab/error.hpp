#pragma once

#include <stdexcept>
#include <string>

namespace alignlab {

enum class ErrorKind {
  invalid_spec,
  shape_mismatch,
  non_finite,
  empty_input,
  missing_example,
  undefined_score,
  invalid_config,
  bad_magic,
  truncated,
  io,
  step_mismatch,
  unsupported,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace alignlab
