#pragma once

#include <stdexcept>
#include <string>

namespace advtag {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or shape violation by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration (CLI flags, sweep specs, attack configs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// File exists and was read but its contents are malformed or truncated.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// Wrong magic bytes or unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace advtag
