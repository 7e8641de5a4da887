#pragma once

#include <stdexcept>
#include <string>

namespace vdyn {

/// Process exit codes used by the CLI and carried by library errors.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kBench = 5,
};

/// Base error for all library failures. Carries the exit code the CLI maps
/// it to plus a short machine-readable kind tag.
class Error : public std::runtime_error {
 public:
  Error(ExitCode code, std::string kind, const std::string& what)
      : std::runtime_error(what), code_(code), kind_(std::move(kind)) {}

  ExitCode code() const { return code_; }
  const std::string& kind() const { return kind_; }

 private:
  ExitCode code_;
  std::string kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ExitCode::kConfig, "config", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ExitCode::kData, "data", what) {}
};

/// Numeric divergence (non-finite value, exploding rollout, exploding
/// gradient). step() is the rollout step that tripped the guard, or -1.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long step = -1)
      : Error(ExitCode::kNumeric, "numeric", what), step_(step) {}

  long step() const { return step_; }

 private:
  long step_;
};

class BenchError : public Error {
 public:
  explicit BenchError(const std::string& what)
      : Error(ExitCode::kBench, "bench", what) {}
};

/// Wrong tensor/vector dimensions reaching a kernel. Always a caller bug or
/// a bad config, so it maps to the config exit code.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ExitCode::kConfig, "shape", what) {}
};

}  // namespace vdyn
