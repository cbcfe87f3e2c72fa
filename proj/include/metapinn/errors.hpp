#pragma once

#include <stdexcept>
#include <string>

namespace metapinn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes violate an operation's shape rule.
struct ShapeError : Error {
  using Error::Error;
};

/// An operation produced NaN or Inf.
struct NonFiniteError : Error {
  using Error::Error;
};

/// A requested feature exceeds what the engine supports.
struct CapabilityError : Error {
  using Error::Error;
};

/// Malformed input file or record.
struct ParseError : Error {
  using Error::Error;
};

/// Invalid or inconsistent configuration value.
struct ConfigError : Error {
  using Error::Error;
};

/// Filesystem or serialization failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace metapinn
