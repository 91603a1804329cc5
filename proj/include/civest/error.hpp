#pragma once

#include <stdexcept>
#include <string>

namespace civest {

// Base for all library errors. The CLI maps subclasses onto exit codes:
// UsageError -> 1, DataError -> 2, everything else -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad flags, malformed config keys, wrong invocation.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Problems with user-supplied inputs: CSV cells, schemas, DAG files,
// missing columns, degenerate treatments.
class DataError : public Error {
 public:
  using Error::Error;
};

// Numeric failure at runtime: NaN loss, NaN gradients, rank deficiency.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Shape disagreement between tensors / network layers.
class DimMismatchError : public NumericError {
 public:
  DimMismatchError(const std::string& what, long expected, long actual)
      : NumericError(what + ": expected dim " + std::to_string(expected) +
                     ", got " + std::to_string(actual)) {}
  explicit DimMismatchError(const std::string& msg) : NumericError(msg) {}
};

// DAG construction / query errors (cycles, unknown nodes, bad edge ops).
class GraphError : public DataError {
 public:
  using DataError::DataError;
};

// Wald denominator below the configured threshold; names the stratum.
class WeakInstrumentError : public NumericError {
 public:
  explicit WeakInstrumentError(const std::string& stratum, double denom)
      : NumericError("weak instrument in stratum '" + stratum +
                     "': |E(W|S=1,Z) - E(W|S=0,Z)| = " + std::to_string(denom) +
                     " below threshold"),
        stratum_(stratum) {}
  const std::string& stratum() const { return stratum_; }

 private:
  std::string stratum_;
};

}  // namespace civest
