#pragma once

#include <stdexcept>
#include <string>

namespace hetddi {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or extent mismatch between tensors / layers.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf, or an optimizer saw a non-finite
/// gradient. Non-finite values are surfaced immediately, never propagated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries a 1-based line/column position when the
/// format is line-oriented; both are 0 for positionless failures.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
  ParseError(const std::string& msg, int line, int col)
      : Error(msg + " (line " + std::to_string(line) + ", col " +
              std::to_string(col) + ")"),
        line_(line),
        col_(col) {}
  int line() const { return line_; }
  int col() const { return col_; }

 private:
  int line_ = 0;
  int col_ = 0;
};

/// Dataset-level problem: missing drugs, conflicting labels, empty inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A rule references variables in a way that has no grounding semantics.
class MalformedRuleError : public Error {
 public:
  using Error::Error;
};

/// Remote resource is not reachable (offline mode or network failure).
class UnavailableError : public Error {
 public:
  using Error::Error;
};

/// Remote resource does not exist (e.g. unknown PubChem CID).
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace hetddi
