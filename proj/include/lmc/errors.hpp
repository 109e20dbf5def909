#pragma once

#include <stdexcept>
#include <string>

namespace lmc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: non-finite entries, mismatched dimensions, empty regions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// |theta| outside (-n*pi/2, n*pi/2).
class InvalidPhase : public Error {
 public:
  using Error::Error;
};

/// Singular-family parameters out of range, or a phase model of the wrong kind.
class InvalidFamily : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Singular Newton linearization or a linear solve that did not converge.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

/// Explicit time step above the stability bound.
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// The rotated coordinate map is not bi-Lipschitz for the requested angle.
class RotationDegenerate : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace lmc
