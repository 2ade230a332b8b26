#pragma once

#include <stdexcept>
#include <string>

namespace flextrain {

// Base of every error the library raises on purpose. Precondition violations
// on plain arguments use std::invalid_argument / std::out_of_range instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration (schema, ranges, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A ForwardTrace was used after the network it came from was modified.
class StaleTraceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class IdxErrorKind { kBadMagic, kTruncated, kCountMismatch, kOpen };

class IdxError : public Error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  IdxErrorKind kind_;
};

}  // namespace flextrain
