#pragma once

#include <stdexcept>
#include <string>

namespace rtd {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can report a diagnostic and exit non-zero.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TokenizationError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class StructuralError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// A metric is mathematically undefined for the given input (e.g. AUC with a
// single class present).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtd
