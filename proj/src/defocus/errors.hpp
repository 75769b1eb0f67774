#pragma once

#include <stdexcept>
#include <string>

namespace defocus {

// Error taxonomy. Each type maps 1:1 onto a C API status code at the library
// boundary; inside the core they are ordinary exceptions.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched sizes between coupled objects (image/kernel/grid shapes).
struct DimensionError : Error {
  using Error::Error;
};

// Scalar argument outside its mathematical domain.
struct DomainError : Error {
  using Error::Error;
};

// Parameter array invalid (non-finite, negative mass, bad normalization).
struct ParameterError : Error {
  using Error::Error;
};

// Object used before being populated.
struct StateError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload).
struct FormatError : Error {
  using Error::Error;
};

// Inputs are well-formed but inconsistent with each other.
struct DataError : Error {
  using Error::Error;
};

// Bad configuration (unknown key, missing key, out-of-range value).
struct ConfigError : Error {
  using Error::Error;
};

// Requested blur does not fit the kernel support.
struct SupportOverflowError : Error {
  using Error::Error;
};

// Optimization produced non-finite state; carries the offending step.
struct DivergenceError : Error {
  DivergenceError(const std::string& msg, int step_) : Error(msg), step(step_) {}
  int step = 0;
};

// Evaluation protocol violation (holdout overlaps training data).
struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace defocus
