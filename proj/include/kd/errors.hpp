// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy. The CLI maps each class to a distinct exit code, so every
// failure raised inside the library must pick the right family here.

#pragma once

#include <stdexcept>
#include <string>

namespace kd {

/// Bad configuration, mismatched model/checkpoint contracts, misuse of the
/// API. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent dataset content (bad magic, truncation, labels
/// out of range). CLI exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure at runtime: non-finite loss, domain violations. CLI exit
/// code 4.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failure: missing file, unwritable path. CLI exit code 5.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor dimension violations. A configuration-class failure.
struct ShapeError : ConfigError {
  explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const IoError*>(&e)) return 5;
  return 2;  // ConfigError and anything unclassified
}

}  // namespace kd
