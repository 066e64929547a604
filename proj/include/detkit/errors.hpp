#pragma once

#include <stdexcept>
#include <string>

namespace detkit {

// Bad user input: malformed files, unknown labels, out-of-range values.
// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Broken call contract or internal inconsistency. CLI exit code 3.
class InvariantError : public std::runtime_error {
 public:
  explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace detkit
