#pragma once

#include <stdexcept>
#include <string>

namespace sigcn {

// Every error raised by the library carries a short machine-readable
// category, printed by the CLI as `error[<category>]: <message>`.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class LineageError : public Error {
 public:
  explicit LineageError(const std::string& what) : Error("lineage", what) {}
};

class ForegroundEmptyError : public Error {
 public:
  explicit ForegroundEmptyError(const std::string& what)
      : Error("foreground_empty", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input", what) {}
};

// I/O failures are split so callers can tell a missing file from a corrupt one.
class IoError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public IoError {
 public:
  explicit MissingFileError(const std::string& what)
      : IoError("io.missing", what) {}
};

class BadMagicError : public IoError {
 public:
  explicit BadMagicError(const std::string& what)
      : IoError("io.bad_magic", what) {}
};

class DimMismatchError : public IoError {
 public:
  explicit DimMismatchError(const std::string& what)
      : IoError("io.dim_mismatch", what) {}
};

class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& what) : IoError("io.format", what) {}
};

}  // namespace sigcn
