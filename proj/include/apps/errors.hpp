#pragma once

#include <stdexcept>
#include <string>

namespace apps {

/**
 * Invalid or inconsistent configuration (bad field values, mismatched
 * dimensions, refused enumeration sizes). The CLI maps this to exit code 2.
 */
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/**
 * Exhaustive enumeration would exceed the configured state cap.
 * A kind of ConfigError: the instance is too large for oracle use.
 */
class EnumerationLimitError : public ConfigError {
 public:
  explicit EnumerationLimitError(const std::string& what) : ConfigError(what) {}
};

}  // namespace apps
