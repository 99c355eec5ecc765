#pragma once

#include <stdexcept>
#include <string>

namespace zscl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or lengths disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input is valid in shape but mathematically degenerate (zero vector, empty set).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Two parameter vectors with different layouts were combined.
class LayoutMismatchError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside its documented range or a precondition is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Toy pretraining did not lift zero-shot accuracy above the required margin.
class PretrainingFailedError : public Error {
 public:
  using Error::Error;
};

/// Configuration document problem. `key()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace zscl
