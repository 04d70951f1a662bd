#pragma once

#include <stdexcept>
#include <string>

namespace atp {

/// Base of every error raised by the library. The CLI maps any of these to a
/// nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shapes, ranges, plan order).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (e.g. spatial rates that overflow (0,1]).
class ConfigError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// A softmax row whose mask removed every key.
class DegenerateRow : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// NaN/Inf produced by a kernel, or a diverged training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace atp
