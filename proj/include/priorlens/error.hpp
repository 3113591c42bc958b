#pragma once

#include <stdexcept>
#include <string>

namespace priorlens {

// Raised when caller-supplied data or configuration violates a contract.
// The CLI maps it to exit code 1; everything else is a runtime failure.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace priorlens
