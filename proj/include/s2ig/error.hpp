#pragma once

#include <exception>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace s2ig {

// Process exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitCompatibility = 3,
  kExitProtocol = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data, malformed files or violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::filesystem::path& file, int line, const std::string& what)
      : ValidationError(file.string() + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

// Two artifacts that cannot be combined (embedding sizes, checkpoint kinds).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol violated, e.g. a query class without generated images.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) != nullptr) return kExitValidation;
  if (dynamic_cast<const CompatibilityError*>(&e) != nullptr) return kExitCompatibility;
  if (dynamic_cast<const ProtocolError*>(&e) != nullptr) return kExitProtocol;
  return kExitFailure;
}

}  // namespace s2ig
