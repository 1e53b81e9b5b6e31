#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cathtrack {

// Base for every failure raised by the library. Recoverable "no catheter"
// conditions are values, not exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidStateError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class TrackingLostError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Both quadrature channels changed between two consecutive samples.
class GlitchError : public Error {
 public:
  GlitchError(std::size_t index, const std::string& what)
      : Error(what), sample_index(index) {}
  std::size_t sample_index;
};

// Malformed serial line; `bytes` holds the offending input verbatim.
class FramingError : public Error {
 public:
  FramingError(std::string offending, const std::string& what)
      : Error(what), bytes(std::move(offending)) {}
  std::string bytes;
};

// Correspondence set does not span 3D; `direction` is the deficient axis.
class RankError : public Error {
 public:
  RankError(double dx, double dy, double dz, const std::string& what)
      : Error(what), direction{dx, dy, dz} {}
  double direction[3];
};

// Wire-level failure. `offset` is the byte position for syntax errors;
// `field` names the offending member for schema violations.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::size_t byte_offset,
                std::string field_name = {})
      : Error(what), offset(byte_offset), field(std::move(field_name)) {}
  std::size_t offset;
  std::string field;
};

}  // namespace cathtrack
