#pragma once

#include <stdexcept>
#include <string>

namespace maven {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kInvariant = 4,
};

/// Base of every error raised by the library. Each subclass carries the exit
/// code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("configuration error: " + what, ExitCode::kUsage) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what, ExitCode::kUsage) {}
};

class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what) : Error("capacity error: " + what, ExitCode::kUsage) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index error: " + what, ExitCode::kData) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what, ExitCode::kData) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error("precondition error: " + what, ExitCode::kData) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("i/o error: " + what, ExitCode::kData) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what)
      : Error("invariant violation: " + what, ExitCode::kInvariant) {}
};

}  // namespace maven
