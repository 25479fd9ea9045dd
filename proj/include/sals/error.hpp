#pragma once

#include <stdexcept>
#include <string>

namespace sals {

// Base for every error raised by the library. Shape and argument problems
// derive from InvalidArgument; malformed tensor files from FormatError.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  enum class Kind {
    kBadMagic,
    kVersionMismatch,
    kUnsupportedDtype,
    kBadShape,
    kTruncated,
    kTrailingData,
    kNonFinite,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sals
