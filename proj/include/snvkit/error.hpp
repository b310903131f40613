#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace snvkit {

enum class ErrorKind {
  InvalidInput,
  EmptyWindow,
  FitFailure,
  RegistrationFailure,
  Config,
  Io,
};

/// Base exception for every failure raised by the toolkit. The kind decides
/// the CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(ErrorKind::InvalidInput, what) {}
};

class EmptyWindow : public Error {
 public:
  explicit EmptyWindow(const std::string& what) : Error(ErrorKind::EmptyWindow, what) {}
};

/// Raised when an iterative fit cannot produce a usable result. Carries the
/// last parameter iterate so callers can inspect how far the solver got.
class FitFailure : public Error {
 public:
  FitFailure(const std::string& what, std::vector<double> last_iterate = {})
      : Error(ErrorKind::FitFailure, what), last_iterate_(std::move(last_iterate)) {}
  [[nodiscard]] const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  std::vector<double> last_iterate_;
};

class RegistrationFailure : public Error {
 public:
  explicit RegistrationFailure(const std::string& what)
      : Error(ErrorKind::RegistrationFailure, what) {}
};

/// Configuration problem. `location` is a dotted key path such as `array.pitch_um`.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& location, const std::string& what)
      : Error(ErrorKind::Config, location.empty() ? what : location + ": " + what),
        location_(location) {}
  [[nodiscard]] const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(ErrorKind::Io, path + ": " + what), path_(path) {}
  [[nodiscard]] const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// 0 success, 2 validation, 3 numerical/fit failure, 4 IO.
[[nodiscard]] constexpr int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput:
    case ErrorKind::EmptyWindow:
    case ErrorKind::Config:
      return 2;
    case ErrorKind::FitFailure:
    case ErrorKind::RegistrationFailure:
      return 3;
    case ErrorKind::Io:
      return 4;
  }
  return 1;
}

}  // namespace snvkit
