#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace fppg {

/// Failure categories shared by every module. The C API maps these onto
/// fppg_status codes one to one.
enum class ErrorCode {
  InvalidArgument,
  DimMismatch,
  SymmetryViolation,
  DivisionByZeroBin,
  NegativeThreshold,
  SvdFailure,
  NonpositiveEpsilon,
  ZeroLambda,
  ZeroFrameCounts,
  ZeroTruthMean,
  NonFinite,
  BadBinning,
  BadSpec,
  BadFractions,
  BadSchedule,
  BadWeights,
  FitDiverged,
  SeedOutOfBounds,
  OutOfBounds,
  TooFewRealizations,
  Config,
  Io,
  MissingInput,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

// Worker count used by parallel_for. Every parallel loop in the library
// writes disjoint outputs per index, so results do not depend on it.
void set_num_threads(int n);
int num_threads();

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace fppg
