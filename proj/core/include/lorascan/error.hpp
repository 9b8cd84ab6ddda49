#pragma once

#include <stdexcept>
#include <string>

namespace lorascan {

// Base class for all toolchain failures; the CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what) {}
};

}  // namespace lorascan
