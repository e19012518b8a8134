#pragma once

#include <stdexcept>
#include <string>

namespace rainrig {

// Mirrors rr_status in the public C header; values must stay in sync.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kConfig = 2,
  kIo = 3,
  kMatrix = 4,
  kInsufficientData = 5,
  kRankDeficient = 6,
  kDetection = 7,
  kShape = 8,
  kDevice = 9,
  kPairing = 10,
  kSampling = 11,
  kPrecondition = 12,
  kDivergence = 13,
  kUndefined = 14,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace rainrig
