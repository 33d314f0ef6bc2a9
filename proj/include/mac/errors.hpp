#pragma once

#include <stdexcept>
#include <string>

namespace mac {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A file on disk is malformed, truncated or inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A value became NaN/Inf, or a domain restriction (log of 0) was hit.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace mac
