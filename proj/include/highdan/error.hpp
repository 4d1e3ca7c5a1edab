#pragma once

#include <stdexcept>
#include <string>

namespace highdan {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk container (bad manifest, missing or unexpected files).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// On-disk arrays disagree with what the manifest declares.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Values outside their domain (NaN/Inf rasters, out-of-range labels).
class DataError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Shapes or channel counts inconsistent with a model configuration, or an
/// invalid configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss term. The message names the offending term.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Metric requested on an empty confusion matrix.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace highdan
