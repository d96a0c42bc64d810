#pragma once

#include <stdexcept>
#include <string>

namespace petal {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for non-finite values entering a tensor or a loss at a probe point.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProbeError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Training stopped on a non-finite loss or gradient.
class TrainingAbort : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace petal
