#pragma once

#include <stdexcept>
#include <string>

namespace omgms {

// All library failures derive from Error so callers (notably the CLI) can map
// them onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed input text (rasters, tables). `index` is the offending token index
// when one exists, -1 otherwise.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long index = -1) : Error(what), index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

// Right-hand side violates the solvability condition of a pure Neumann problem.
class CompatibilityError : public Error {
 public:
  CompatibilityError(const std::string& what, double defect) : Error(what), defect_(defect) {}
  double defect() const { return defect_; }

 private:
  double defect_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

// A matrix that should be SPD failed to factor or is numerically singular.
class ConditioningError : public Error {
 public:
  ConditioningError(const std::string& what, double smallest = 0.0)
      : Error(what), smallest_(smallest) {}
  double smallest_eigenvalue() const { return smallest_; }

 private:
  double smallest_;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class TimeStepError : public Error {
 public:
  TimeStepError(const std::string& what, double admissible) : Error(what), admissible_(admissible) {}
  double admissible_dt() const { return admissible_; }

 private:
  double admissible_;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Configuration problems; what() starts with the offending field path.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& path, const std::string& message)
      : Error(path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace omgms
