#include "common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace fppg {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SymmetryViolation: return "SymmetryViolation";
    case ErrorCode::DivisionByZeroBin: return "DivisionByZeroBin";
    case ErrorCode::NegativeThreshold: return "NegativeThreshold";
    case ErrorCode::SvdFailure: return "SvdFailure";
    case ErrorCode::NonpositiveEpsilon: return "NonpositiveEpsilon";
    case ErrorCode::ZeroLambda: return "ZeroLambda";
    case ErrorCode::ZeroFrameCounts: return "ZeroFrameCounts";
    case ErrorCode::ZeroTruthMean: return "ZeroTruthMean";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::BadBinning: return "BadBinning";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::BadSchedule: return "BadSchedule";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::SeedOutOfBounds: return "SeedOutOfBounds";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::TooFewRealizations: return "TooFewRealizations";
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::MissingInput: return "MissingInput";
  }
  return "Unknown";
}

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(g_threads.load()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  // static block partition; each index is handled by exactly one worker
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fppg
