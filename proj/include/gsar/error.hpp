#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gsar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Index outside its admissible range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented invariant (negative weight, bad response...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operand sizes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Singular systems, nonfinite objectives, failed factorizations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Nonfinite quantity tied to a particular observation.
class ObservationError : public NumericalError {
 public:
  ObservationError(const std::string& what, std::size_t index)
      : NumericalError("observation " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace gsar
