#pragma once

#include <stdexcept>
#include <string>

namespace zp {

enum class ErrorKind {
  kInvalidInput,
  kShape,
  kConfig,
  kCheckFailed,
  kTrainingDiverged,
  kFormat,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorKind::kInvalidInput, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorKind::kShape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

class CheckFailed : public Error {
 public:
  explicit CheckFailed(const std::string& what)
      : Error(ErrorKind::kCheckFailed, what) {}
};

// Malformed files: archives, pose lists, configs.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what)
      : Error(ErrorKind::kFormat, what) {}
};

}  // namespace zp
