#pragma once

#include <stdexcept>
#include <string>

namespace gridtrip {

// Broad failure classes. The CLI maps these to process exit codes, so every
// throw site must pick the class that matches how a caller should react:
//   InputError       -> malformed or inconsistent user input (exit 2)
//   InfeasibleError  -> a well-posed problem with an empty feasible set (exit 3)
//   ConvergenceError -> an iteration that failed to settle (exit 4)
enum class ErrorCode {
  // input / validation
  ParseFailure,
  InvalidArgument,
  UnknownNode,
  DuplicateNode,
  CycleDetected,
  DisconnectedNode,
  NegativeImpedance,
  InvalidBand,
  DimensionMismatch,
  InsufficientSamples,
  MismatchedSeries,
  NegativeVariance,
  ExhaustiveLimitExceeded,
  ZeroSwitchedNodes,
  // feasibility
  EmptyFeasibleSet,
  // convergence
  NoConsistentConfig,
  NoEquilibrium,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridtrip
