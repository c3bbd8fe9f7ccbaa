#pragma once

#include <stdexcept>
#include <string>

namespace enerbridge {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (config -> 1, data-like -> 2, numerical -> 3).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class ShapeError : public Error {
  public:
    using Error::Error;
};

class DomainError : public Error {
  public:
    using Error::Error;
};

class NumericalError : public Error {
  public:
    using Error::Error;
};

class DataError : public Error {
  public:
    using Error::Error;
};

class PairingError : public DataError {
  public:
    using DataError::DataError;
};

class CorruptionError : public DataError {
  public:
    using DataError::DataError;
};

class VersionError : public DataError {
  public:
    using DataError::DataError;
};

}  // namespace enerbridge
