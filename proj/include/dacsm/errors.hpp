#pragma once

#include <stdexcept>
#include <string>

namespace dacsm {

// Base for all contract violations raised by this library. Messages name the
// offending operation and the concrete values (shapes, keys, indices) so a
// failure is actionable without a debugger.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank mismatch between tensors handed to an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid parameter or argument (non-divisible head count,
// negative temperature, scale not divisible by patch size, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Label outside [0, C) or malformed label/one-hot vector.
class LabelError : public Error {
 public:
  using Error::Error;
};

// Invalid or unknown configuration key/value, or an inconsistent config.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, schema-mismatched, or shape-mismatched checkpoint. Subclass of
// ConfigError so callers that map config problems to one exit code catch both.
class CheckpointError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Dataset too small or malformed for the requested operation.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where the numeric contract requires finiteness.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dacsm
