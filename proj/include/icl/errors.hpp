#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Shape/precondition violations on tensor operations.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite values detected after a primitive, or numeric preconditions broken.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of the autodiff tape (double backward, non-scalar loss, ...).
class TapeError : public std::logic_error {
 public:
  explicit TapeError(const std::string& msg) : std::logic_error(msg) {}
};

// Checkpoint file problems; `kind` distinguishes the failure classes.
class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Corrupt, Truncated, ShapeMismatch, DtypeMismatch };
  CheckpointError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Invalid user-supplied configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failures (CLI exit code 4).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace icl
