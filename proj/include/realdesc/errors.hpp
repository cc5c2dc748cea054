#pragma once

#include <stdexcept>
#include <string>

namespace realdesc {

/// Process exit codes shared by every command of the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kValidation = 2,
  kExternalService = 3,
  kData = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const { return code_; }

 private:
  ExitCode code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, ExitCode::kValidation) {}
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError("shape error: " + what) {}
};

class PreconditionError : public ValidationError {
 public:
  explicit PreconditionError(const std::string& what) : ValidationError("precondition failed: " + what) {}
};

class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& what) : ValidationError("configuration error: " + what) {}
};

class CurationError : public ValidationError {
 public:
  explicit CurationError(const std::string& what) : ValidationError("curation error: " + what) {}
};

class InitError : public ValidationError {
 public:
  explicit InitError(const std::string& what) : ValidationError("init error: " + what) {}
};

class RegistryError : public Error {
 public:
  explicit RegistryError(const std::string& what) : Error("registry error: " + what, ExitCode::kExternalService) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& what) : Error("generation error: " + what, ExitCode::kExternalService) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error("integrity error: " + what, ExitCode::kData) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what, ExitCode::kData) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error("divergence: " + what, ExitCode::kFailure) {}
};

}  // namespace realdesc
