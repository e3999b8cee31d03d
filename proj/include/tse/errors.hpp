#pragma once

#include <stdexcept>
#include <string>

namespace tse {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or length mismatch between tensors/buffers.
class DimensionError final : public Error {
 public:
  using Error::Error;
};

// Invalid build-time configuration (bad layer kind, rank too large, ...).
class ConfigError final : public Error {
 public:
  using Error::Error;
};

// Runtime precondition violation (non-scalar loss, empty prompt, ...).
class ContractError final : public Error {
 public:
  using Error::Error;
};

// Cue type that a given encoder cannot represent.
class UnsupportedCueError final : public Error {
 public:
  using Error::Error;
};

// Extraction requested with no cue at all.
class NoCueError final : public Error {
 public:
  using Error::Error;
};

// Source placement / room feasibility problems.
class GeometryError final : public Error {
 public:
  using Error::Error;
};

// Corpus or manifest content problems.
class DataError final : public Error {
 public:
  using Error::Error;
};

// File system / serialization failures.
class IoError final : public Error {
 public:
  using Error::Error;
};

}  // namespace tse
