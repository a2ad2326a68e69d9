#pragma once

#include <stdexcept>
#include <string>

namespace styleaug {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Dataset files missing, unreadable or malformed.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or arguments; maps to CLI exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Weight/checkpoint/report files with wrong version, layout or truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace styleaug
