#pragma once

#include <stdexcept>
#include <string>

namespace cmi {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Bad parameters, missing inputs, invalid configuration files.
class ConfigError : public Error {
  public:
    using Error::Error;
};

// Malformed, truncated or mismatched binary/text files.
class FormatError : public Error {
  public:
    using Error::Error;
};

// Descriptor or argument violates a documented precondition.
class InvalidInput : public Error {
  public:
    using Error::Error;
};

// Codebook / HE training cannot proceed on the given samples.
class TrainingError : public Error {
  public:
    using Error::Error;
};

// Operation is not valid in the object's current state
// (mutating a frozen index, querying an undefined entry).
class StateError : public Error {
  public:
    using Error::Error;
};

}  // namespace cmi
