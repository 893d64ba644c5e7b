#pragma once

#include <stdexcept>
#include <string>

namespace fedcopl {

// Base error for everything thrown by the library. `module()` names the
// subsystem that failed, which the CLI reports alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message);

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// Precondition or argument validation failure (CLI exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedcopl
