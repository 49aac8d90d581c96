#pragma once

#include <stdexcept>
#include <string>

namespace sbc {

/// Base of every error raised by the engine. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or channel counts do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Spatial arithmetic yields an invalid extent (output < 1, odd size where even is required, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerically invalid data (negative variance, missing statistics, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object in the wrong state (e.g. forward on unloaded weights).
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Container bytes do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Container is structurally valid but its payload is truncated or inconsistent.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

/// Undecodable or otherwise unusable user input (images, files).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace sbc
