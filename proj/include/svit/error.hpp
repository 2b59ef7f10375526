#pragma once

#include <stdexcept>
#include <string>

namespace svit {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class AxisError : public Error {
 public:
  using Error::Error;
};

// Class label outside [0, num_classes).
class LabelError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent on-disk data (manifests, images, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during a forward pass or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace svit
