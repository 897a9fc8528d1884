#pragma once

#include <stdexcept>
#include <string>

namespace han {

/// Invalid configuration or incompatible shapes/dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: wrong call order, missing gradient, frame mismatch.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDepthError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed files: bad magic, truncated records, unsupported versions.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace han
