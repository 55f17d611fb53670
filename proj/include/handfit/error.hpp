#pragma once

#include <stdexcept>
#include <string>

namespace handfit {

enum class ErrorKind {
  Usage,
  InvalidModel,
  NonWatertight,
  SchemaViolation,
  MissingFile,
  UnsupportedVersion,
  InsufficientJoints,
  BehindCamera,
  DegenerateConfiguration,
  Diverged,
  NonFiniteGradient,
};

const char* to_string(ErrorKind kind) noexcept;

// Process exit code for a failure of this kind: 1 usage, 2 data, 3 numerical.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::InvalidModel: return "InvalidModel";
    case ErrorKind::NonWatertight: return "NonWatertight";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::InsufficientJoints: return "InsufficientJoints";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
  }
  return "Unknown";
}

inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return 1;
    case ErrorKind::BehindCamera:
    case ErrorKind::DegenerateConfiguration:
    case ErrorKind::Diverged:
    case ErrorKind::NonFiniteGradient: return 3;
    default: return 2;
  }
}

}  // namespace handfit
