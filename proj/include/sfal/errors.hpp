#pragma once

#include <stdexcept>
#include <string>

namespace sfal {

// Invalid configuration or precondition violation. CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Runtime failure (blowup, I/O, estimation failure). CLI maps this to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sfal
