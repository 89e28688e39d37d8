#pragma once

#include <stdexcept>
#include <string>

namespace omlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (shapes, ranges, options).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Gram-Schmidt met a (numerically) linearly dependent row.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (open, read, write).
class IoError : public Error {
 public:
  using Error::Error;
};

/// On-disk data that does not decode.
class FormatError : public Error {
 public:
  enum class Code {
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kChecksum,
    kParse,
  };

  FormatError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

const char* to_string(FormatError::Code code) noexcept;

}  // namespace omlab
