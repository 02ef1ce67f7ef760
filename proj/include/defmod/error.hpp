#pragma once

#include <stdexcept>
#include <string>

namespace defmod {

// Values double as CLI exit codes and C API status codes.
enum class ErrorCode : int {
  Internal = 1,
  Usage = 2,
  Format = 3,
  Numeric = 4,
  Missing = 5,
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

}  // namespace defmod
