#pragma once

#include <stdexcept>
#include <string>

namespace pwrf {

// All contract violations surface as Error with a short machine-parsable
// code. The CLI prints "pwrf: error code=<code> msg=..." and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
  throw Error(code, msg);
}

inline void check(bool cond, const std::string& code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

// Common codes: shape, contract, config, io, nonfinite, diverged.
inline void check_shape(bool cond, const std::string& msg) { check(cond, "shape", msg); }
inline void check_contract(bool cond, const std::string& msg) { check(cond, "contract", msg); }
inline void check_config(bool cond, const std::string& msg) { check(cond, "config", msg); }

}  // namespace pwrf
