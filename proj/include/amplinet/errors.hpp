#pragma once

#include <stdexcept>
#include <string>

namespace amplinet {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input data (record files, manifests, model files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or parameter shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during training or inference.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace amplinet
