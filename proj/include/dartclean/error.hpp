#pragma once

#include <stdexcept>
#include <string>

namespace dartclean {

// Exception hierarchy. The CLI maps these onto exit codes:
// ConfigError -> 2, NumericError -> 4, everything else -> 3.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

// Bad or insufficient input data: parse failures, ordering, degenerate series,
// shape mismatches on checkpoint load, uncovered samples.
class DataError : public Error
{
public:
  using Error::Error;
};

class ParseError : public DataError
{
public:
  ParseError(std::size_t line, std::string const &what)
    : DataError("line " + std::to_string(line) + ": " + what), line_(line)
  {
  }
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class ShapeError : public DataError
{
public:
  using DataError::DataError;
};

class IoError : public DataError
{
public:
  using DataError::DataError;
};

// Operation invoked without its required state (e.g. backward before forward).
class StateError : public Error
{
public:
  using Error::Error;
};

// Non-finite values, divergence.
class NumericError : public Error
{
public:
  using Error::Error;
};

} // namespace dartclean
