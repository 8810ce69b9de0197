#pragma once

#include <stdexcept>
#include <string>

namespace emc2 {

// Bad shapes, invalid options, ill-formed datasets/configs.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values surfaced by an operation.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// CSV / JSON ingestion failures; message names the offending line when known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Enumeration guard exceeded (kernel construction, mixing curves).
struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Analytic bound evaluated outside its precondition.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint version/hash mismatch or corruption.
struct LoadError : std::runtime_error {
  explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace emc2
